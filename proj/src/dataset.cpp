#include "kbsql/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/sqlite.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;
namespace fs = std::filesystem;

const Table* DatabaseSchema::find_table(std::string_view name) const {
  for (const auto& t : tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

std::string to_string(DatasetFormat format) {
  return format == DatasetFormat::Bird ? "bird" : "spider";
}

DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "bird") return DatasetFormat::Bird;
  if (s == "spider") return DatasetFormat::Spider;
  throw ConfigError("unknown dataset format '" + std::string(s) + "'");
}

const DatabaseSchema& Dataset::schema(const std::string& db_id) const {
  auto it = schemas.find(db_id);
  if (it == schemas.end()) throw SchemaRefError("unknown db_id '" + db_id + "'");
  return it->second;
}

const ExampleTriplet* Dataset::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.query.id == id) return &r;
  }
  return nullptr;
}

std::set<std::string> Dataset::db_ids() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.schema_ref);
  return ids;
}

namespace {

std::optional<std::string> optional_text(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string");
  auto value = it->get<std::string>();
  if (trim(value).empty()) return std::nullopt;
  return value;
}

std::string required_text(const json& obj, const char* key, std::size_t index) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError("record " + std::to_string(index) + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

std::optional<fs::path> locate_database(const fs::path& dir, const std::string& db_id) {
  for (const char* ext : {".sqlite", ".db", ".sqlite3"}) {
    const auto nested = dir / db_id / (db_id + ext);
    if (fs::is_regular_file(nested)) return nested;
    const auto flat = dir / (db_id + ext);
    if (fs::is_regular_file(flat)) return flat;
  }
  return std::nullopt;
}

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string cell_text(const Cell& cell) {
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&cell)) return std::to_string(*i);
  return {};
}

void check_engine(const fs::path& db_file) {
  std::ifstream in(db_file, std::ios::binary);
  if (!in) throw IoError("cannot read database " + db_file.string());
  std::array<char, 32> head{};
  in.read(head.data(), head.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got == 0) return;  // sqlite treats a zero-length file as an empty database
  const std::string_view bytes(head.data(), got);
  if (bytes.starts_with(std::string_view("SQLite format 3\0", 16))) return;
  if (got >= 12 && bytes.substr(8, 4) == "DUCK") {
    throw UnsupportedEngineError(db_file.string() + " is a DuckDB database");
  }
  if (bytes.find("Standard Jet DB") != std::string_view::npos ||
      bytes.find("Standard ACE DB") != std::string_view::npos) {
    throw UnsupportedEngineError(db_file.string() + " is an Access database");
  }
  throw IoError(db_file.string() + " is not a database file (bad header)");
}

void attach_descriptions(DatabaseSchema& schema, const fs::path& db_file) {
  auto sidecar = db_file;
  sidecar.replace_extension(".descriptions.json");
  if (!fs::is_regular_file(sidecar)) return;
  json doc;
  try {
    doc = json::parse(read_file(sidecar));
  } catch (const json::exception& e) {
    throw ParseError(sidecar.string() + ": " + e.what());
  }
  for (auto& table : schema.tables) {
    for (auto& col : table.columns) {
      auto it = doc.find(table.name + "." + col.name);
      if (it != doc.end() && it->is_string()) col.description = it->get<std::string>();
    }
  }
}

}  // namespace

DatabaseSchema load_schema(const fs::path& db_file, std::string db_id) {
  if (!fs::is_regular_file(db_file)) throw IoError("no such database file: " + db_file.string());
  check_engine(db_file);

  DatabaseSchema schema;
  schema.db_id = db_id.empty() ? db_file.stem().string() : std::move(db_id);
  schema.db_file = db_file;

  sqlite::Connection conn(db_file, sqlite::OpenMode::ReadOnly);
  const auto names = conn.query(
      "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' "
      "ORDER BY rowid");
  for (const auto& row : names) {
    Table table;
    table.name = cell_text(row.at(0));
    for (const auto& info : conn.query("PRAGMA table_info(" + quote_ident(table.name) + ")")) {
      table.columns.push_back(Column{cell_text(info.at(1)), cell_text(info.at(2)), std::nullopt});
    }
    schema.tables.push_back(std::move(table));
  }

  auto primary_key_of = [&](const std::string& table) -> std::string {
    for (const auto& info : conn.query("PRAGMA table_info(" + quote_ident(table) + ")")) {
      if (const auto* pk = std::get_if<std::int64_t>(&info.at(5)); pk && *pk == 1) {
        return cell_text(info.at(1));
      }
    }
    return {};
  };
  auto has_column = [&](const std::string& table, const std::string& column) {
    const Table* t = schema.find_table(table);
    return t && std::any_of(t->columns.begin(), t->columns.end(),
                            [&](const Column& c) { return c.name == column; });
  };

  for (const auto& table : schema.tables) {
    for (const auto& fk : conn.query("PRAGMA foreign_key_list(" + quote_ident(table.name) + ")")) {
      ForeignKey key;
      key.from = {table.name, cell_text(fk.at(3))};
      key.to.table = cell_text(fk.at(2));
      key.to.column = std::holds_alternative<std::monostate>(fk.at(4)) ? primary_key_of(key.to.table)
                                                                       : cell_text(fk.at(4));
      // Dangling references are legal in sqlite but cannot be rendered.
      if (has_column(key.from.table, key.from.column) && has_column(key.to.table, key.to.column)) {
        schema.foreign_keys.push_back(std::move(key));
      }
    }
  }
  attach_descriptions(schema, db_file);
  return schema;
}

Dataset load_dataset(const DatasetPaths& paths, DatasetFormat format, Split split) {
  json doc;
  try {
    doc = json::parse(read_file(paths.records));
  } catch (const json::exception& e) {
    throw ParseError(paths.records.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(paths.records.string() + ": expected a JSON array of records");

  Dataset dataset;
  dataset.split = split;
  std::set<std::string> seen_ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    if (!obj.is_object()) throw ParseError("record " + std::to_string(i) + " is not an object");

    ExampleTriplet rec;
    if (auto it = obj.find("question_id"); it != obj.end() && !it->is_null()) {
      rec.query.id = it->is_string() ? it->get<std::string>() : it->dump();
    } else {
      rec.query.id = std::to_string(i);
    }
    rec.query.text = required_text(obj, "question", i);
    if (trim(rec.query.text).empty()) throw ParseError("record " + std::to_string(i) + ": empty question");
    rec.query.db_id = required_text(obj, "db_id", i);
    rec.schema_ref = rec.query.db_id;
    if (format == DatasetFormat::Bird) {
      rec.knowledge = optional_text(obj, "evidence");
      rec.gold_sql = optional_text(obj, "SQL");
    } else {
      rec.gold_sql = optional_text(obj, "query");
    }
    if (!seen_ids.insert(rec.query.id).second) {
      throw ParseError("duplicate record id '" + rec.query.id + "'");
    }
    dataset.records.push_back(std::move(rec));
  }

  const fs::path db_dir = paths.databases.value_or(paths.records.parent_path() / "databases");
  for (const auto& rec : dataset.records) {
    if (dataset.schemas.count(rec.schema_ref)) continue;
    auto file = locate_database(db_dir, rec.schema_ref);
    if (!file) {
      throw SchemaRefError("record '" + rec.query.id + "' points to unknown db_id '" + rec.schema_ref +
                           "' (searched " + db_dir.string() + ")");
    }
    dataset.schemas.emplace(rec.schema_ref, load_schema(*file, rec.schema_ref));
  }
  return dataset;
}

Dataset load_dataset(const fs::path& records, DatasetFormat format, Split split) {
  return load_dataset(DatasetPaths{records, std::nullopt}, format, split);
}

void save_dataset(const Dataset& dataset, const fs::path& records, DatasetFormat format) {
  json doc = json::array();
  for (const auto& rec : dataset.records) {
    json obj;
    obj["question_id"] = rec.query.id;
    obj["question"] = rec.query.text;
    obj["db_id"] = rec.schema_ref;
    if (format == DatasetFormat::Bird) {
      if (rec.knowledge) obj["evidence"] = *rec.knowledge;
      if (rec.gold_sql) obj["SQL"] = *rec.gold_sql;
    } else if (rec.gold_sql) {
      obj["query"] = *rec.gold_sql;
    }
    doc.push_back(std::move(obj));
  }
  write_file(records, doc.dump(2) + "\n");
}

namespace {

struct RenderStage {
  bool descriptions = true;
  bool foreign_keys = true;
  bool unreferenced_columns = true;
  bool any_columns = true;
};

std::vector<std::string> render_lines(const DatabaseSchema& schema, const RenderStage& stage,
                                      const RenderOptions& options) {
  std::vector<std::string> lines;
  for (const auto& table : schema.tables) {
    const bool referenced =
        !options.referenced_tables || options.referenced_tables->count(table.name) > 0;
    const bool with_columns = stage.any_columns && (stage.unreferenced_columns || referenced);
    std::string line = table.name;
    if (with_columns) {
      line += "(";
      for (std::size_t i = 0; i < table.columns.size(); ++i) {
        const auto& col = table.columns[i];
        if (i) line += ", ";
        line += col.name;
        if (!col.type.empty()) line += " " + col.type;
        if (stage.descriptions && col.description && !col.description->empty()) {
          line += " [" + *col.description + "]";
        }
      }
      line += ")";
    }
    lines.push_back(std::move(line));
  }
  if (stage.foreign_keys) {
    for (const auto& fk : schema.foreign_keys) {
      lines.push_back("FK " + fk.from.table + "." + fk.from.column + " -> " + fk.to.table + "." +
                      fk.to.column);
    }
  }
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += "\n";
    out += lines[i];
  }
  return out;
}

}  // namespace

std::string render_schema(const DatabaseSchema& schema, std::size_t budget,
                          const RenderOptions& options) {
  if (budget == 0) return {};
  const std::array<RenderStage, 5> stages = {{
      {true, true, true, true},
      {false, true, true, true},
      {false, false, true, true},
      {false, false, false, true},
      {false, false, false, false},
  }};
  for (const auto& stage : stages) {
    if (!stage.unreferenced_columns && stage.any_columns && !options.referenced_tables) continue;
    auto text = join_lines(render_lines(schema, stage, options));
    if (text.size() <= budget) return text;
  }
  auto lines = render_lines(schema, stages.back(), options);
  while (!lines.empty()) {
    lines.pop_back();
    auto text = join_lines(lines);
    if (text.size() <= budget) return text;
  }
  return {};
}

std::set<std::string> tables_referenced_by(const DatabaseSchema& schema, std::string_view sql) {
  std::set<std::string> tokens;
  std::string current;
  for (char c : sql) {
    const bool ident = std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    if (ident) {
      current.push_back(c);
    } else if (!current.empty()) {
      tokens.insert(to_lower_ascii(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.insert(to_lower_ascii(current));
  std::set<std::string> out;
  for (const auto& t : schema.tables) {
    if (tokens.count(to_lower_ascii(t.name))) out.insert(t.name);
  }
  return out;
}

}  // namespace kbsql
