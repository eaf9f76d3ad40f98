#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kbsql {

struct Query {
  std::string id;
  std::string text;
  std::string db_id;

  bool operator==(const Query&) const = default;
};

struct Column {
  std::string name;
  std::string type;
  std::optional<std::string> description;

  bool operator==(const Column&) const = default;
};

struct Table {
  std::string name;
  std::vector<Column> columns;

  bool operator==(const Table&) const = default;
};

struct ColumnRef {
  std::string table;
  std::string column;

  bool operator==(const ColumnRef&) const = default;
};

struct ForeignKey {
  ColumnRef from;
  ColumnRef to;

  bool operator==(const ForeignKey&) const = default;
};

struct DatabaseSchema {
  std::string db_id;
  std::vector<Table> tables;
  std::vector<ForeignKey> foreign_keys;
  std::optional<std::filesystem::path> db_file;

  const Table* find_table(std::string_view name) const;
  bool operator==(const DatabaseSchema&) const = default;
};

struct ExampleTriplet {
  Query query;
  std::string schema_ref;
  // Absent when the source record has no evidence field; never "".
  std::optional<std::string> knowledge;
  std::optional<std::string> gold_sql;

  bool operator==(const ExampleTriplet&) const = default;
};

enum class Split { Train, Test };
enum class DatasetFormat { Bird, Spider };

std::string to_string(Split split);
Split parse_split(std::string_view s);
std::string to_string(DatasetFormat format);
DatasetFormat parse_dataset_format(std::string_view s);

struct Dataset {
  std::vector<ExampleTriplet> records;
  std::map<std::string, DatabaseSchema> schemas;
  Split split = Split::Train;

  const DatabaseSchema& schema(const std::string& db_id) const;
  const ExampleTriplet* find(const std::string& id) const;
  std::set<std::string> db_ids() const;
  bool operator==(const Dataset&) const = default;
};

struct DatasetPaths {
  std::filesystem::path records;  // JSON array file
  // Directory holding one database per db_id, either <dir>/<db_id>/<db_id>.sqlite
  // or <dir>/<db_id>.sqlite. Defaults to "databases" next to the records file.
  std::optional<std::filesystem::path> databases;
};

// Loads a record file and the schemas of every database it references.
// Throws ParseError, SchemaRefError, IoError.
Dataset load_dataset(const DatasetPaths& paths, DatasetFormat format, Split split = Split::Train);
Dataset load_dataset(const std::filesystem::path& records, DatasetFormat format,
                     Split split = Split::Train);

// Writes the record file (schemas live in the database directory).
void save_dataset(const Dataset& dataset, const std::filesystem::path& records,
                  DatasetFormat format = DatasetFormat::Bird);

// Reads tables, columns and foreign keys from a single-file database.
// Column descriptions are read from an optional "<stem>.descriptions.json"
// sidecar mapping "table.column" to text.
DatabaseSchema load_schema(const std::filesystem::path& db_file, std::string db_id = {});

struct RenderOptions {
  // Tables named in the gold SQL, when known. Their columns survive the
  // third truncation stage.
  std::optional<std::set<std::string>> referenced_tables;
};

// Deterministic schema text. Over budget, content is dropped in this order:
// column descriptions, foreign-key lines, columns of unreferenced tables,
// all columns; as a last resort trailing table lines are cut whole.
std::string render_schema(const DatabaseSchema& schema, std::size_t budget,
                          const RenderOptions& options = {});

// Table names mentioned in a SQL string (case-insensitive identifier match).
std::set<std::string> tables_referenced_by(const DatabaseSchema& schema, std::string_view sql);

}  // namespace kbsql
