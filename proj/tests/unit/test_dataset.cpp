#include <gtest/gtest.h>

#include "kbsql/dataset.hpp"
#include "kbsql/error.hpp"
#include "kbsql/text.hpp"
#include "common/test_util.hpp"

using namespace kbsql;
using kbsql::testing::TempDir;

namespace {

const char* kHrSchema = R"(
CREATE TABLE location (locationID INTEGER PRIMARY KEY, locationcity TEXT, state TEXT);
CREATE TABLE position (positionID INTEGER PRIMARY KEY, positiontitle TEXT, minsalary INTEGER);
CREATE TABLE employee (
  ssn TEXT PRIMARY KEY, performance TEXT,
  positionID INTEGER REFERENCES position(positionID),
  locationID INTEGER REFERENCES location);
)";

struct Fixture {
  TempDir dir;
  std::filesystem::path records;

  explicit Fixture(const std::string& json) {
    kbsql::testing::make_db(dir / "databases/hr/hr.sqlite", kHrSchema);
    records = dir / "train.json";
    write_file(records, json);
  }
};

}  // namespace

TEST(Dataset, LoadsBirdRecordsAndSchema) {
  Fixture f(R"([
    {"question_id": 7, "db_id": "hr", "question": "How many?", "evidence": "Good refers to performance = 'Good'",
     "SQL": "SELECT COUNT(*) FROM employee"},
    {"db_id": "hr", "question": "Which title?", "evidence": "   ", "SQL": "SELECT positiontitle FROM position"}
  ])");
  const auto ds = load_dataset(f.records, DatasetFormat::Bird);
  ASSERT_EQ(ds.records.size(), 2u);
  EXPECT_EQ(ds.records[0].query.id, "7");
  EXPECT_EQ(ds.records[0].knowledge, "Good refers to performance = 'Good'");
  EXPECT_EQ(ds.records[1].query.id, "1");
  EXPECT_FALSE(ds.records[1].knowledge.has_value());
  EXPECT_EQ(ds.records[1].gold_sql, "SELECT positiontitle FROM position");

  const auto& schema = ds.schema("hr");
  ASSERT_EQ(schema.tables.size(), 3u);
  EXPECT_EQ(schema.tables[0].name, "location");
  EXPECT_EQ(schema.tables[2].columns.size(), 4u);
  ASSERT_EQ(schema.foreign_keys.size(), 2u);
  // A reference without a column list resolves to the target's primary key.
  bool saw_location = false;
  for (const auto& fk : schema.foreign_keys) {
    if (fk.to.table == "location") {
      saw_location = true;
      EXPECT_EQ(fk.to.column, "locationID");
    }
  }
  EXPECT_TRUE(saw_location);
}

TEST(Dataset, KnowledgeIsKeptVerbatim) {
  Fixture f(R"([{"db_id": "hr", "question": "q", "evidence": "  Mixed CASE, with punctuation. "}])");
  const auto ds = load_dataset(f.records, DatasetFormat::Bird);
  EXPECT_EQ(ds.records[0].knowledge, "  Mixed CASE, with punctuation. ");
}

TEST(Dataset, SpiderUsesQueryField) {
  Fixture f(R"([{"db_id": "hr", "question": "q", "query": "SELECT 1"}])");
  const auto ds = load_dataset(f.records, DatasetFormat::Spider);
  EXPECT_EQ(ds.records[0].gold_sql, "SELECT 1");
  EXPECT_FALSE(ds.records[0].knowledge.has_value());
}

TEST(Dataset, ParseErrors) {
  {
    Fixture f(R"({"db_id": "hr"})");
    EXPECT_THROW(load_dataset(f.records, DatasetFormat::Bird), ParseError);
  }
  {
    Fixture f(R"([{"db_id": "hr"}])");
    EXPECT_THROW(load_dataset(f.records, DatasetFormat::Bird), ParseError);
  }
  {
    Fixture f(R"([{"db_id": "hr", "question": "a", "question_id": 1}, {"db_id": "hr", "question": "b", "question_id": 1}])");
    EXPECT_THROW(load_dataset(f.records, DatasetFormat::Bird), ParseError);
  }
  {
    Fixture f("not json");
    EXPECT_THROW(load_dataset(f.records, DatasetFormat::Bird), ParseError);
  }
}

TEST(Dataset, UnknownDatabaseIsSchemaRefError) {
  Fixture f(R"([{"db_id": "nowhere", "question": "q"}])");
  EXPECT_THROW(load_dataset(f.records, DatasetFormat::Bird), SchemaRefError);
}

TEST(Dataset, FlatDatabaseLayoutAndExplicitDir) {
  TempDir dir;
  kbsql::testing::make_db(dir / "dbs/hr.db", kHrSchema);
  write_file(dir / "records.json", R"([{"db_id": "hr", "question": "q"}])");
  const auto ds = load_dataset(DatasetPaths{dir / "records.json", dir / "dbs"}, DatasetFormat::Bird);
  EXPECT_EQ(ds.schema("hr").tables.size(), 3u);
}

TEST(Dataset, EngineDetection) {
  TempDir dir;
  write_file(dir / "empty.sqlite", "");
  EXPECT_TRUE(load_schema(dir / "empty.sqlite", "empty").tables.empty());

  std::string duck(64, '\0');
  duck.replace(8, 4, "DUCK");
  write_file(dir / "duck.sqlite", duck);
  EXPECT_THROW(load_schema(dir / "duck.sqlite"), UnsupportedEngineError);

  std::string access(64, '\0');
  access.replace(4, 15, "Standard Jet DB");
  write_file(dir / "access.sqlite", access);
  EXPECT_THROW(load_schema(dir / "access.sqlite"), UnsupportedEngineError);

  write_file(dir / "garbage.sqlite", "definitely not a database file at all");
  EXPECT_THROW(load_schema(dir / "garbage.sqlite"), IoError);
  EXPECT_THROW(load_schema(dir / "missing.sqlite"), IoError);
}

TEST(Dataset, DescriptionsSidecar) {
  TempDir dir;
  const auto db = kbsql::testing::make_db(dir / "hr.sqlite", kHrSchema);
  write_file(dir / "hr.descriptions.json", R"({"position.minsalary": "lowest pay for the title"})");
  const auto schema = load_schema(db, "hr");
  const auto* position = schema.find_table("position");
  ASSERT_NE(position, nullptr);
  EXPECT_EQ(position->columns[2].description, "lowest pay for the title");
  EXPECT_FALSE(position->columns[1].description.has_value());
}

TEST(Dataset, SaveRoundTrip) {
  Fixture f(R"([{"question_id": "a", "db_id": "hr", "question": "q", "evidence": "e e e", "SQL": "SELECT 1"}])");
  const auto ds = load_dataset(f.records, DatasetFormat::Bird);
  save_dataset(ds, f.dir / "copy.json");
  const auto again = load_dataset(DatasetPaths{f.dir / "copy.json", f.dir / "databases"}, DatasetFormat::Bird);
  EXPECT_EQ(again.records, ds.records);
}

namespace {

DatabaseSchema small_schema() {
  DatabaseSchema s;
  s.db_id = "hr";
  s.tables = {{"position", {{"positionID", "INTEGER", std::nullopt}, {"minsalary", "INTEGER", "lowest pay"}}},
              {"employee", {{"ssn", "TEXT", std::nullopt}, {"positionID", "INTEGER", std::nullopt}}}};
  s.foreign_keys = {{{"employee", "positionID"}, {"position", "positionID"}}};
  return s;
}

}  // namespace

TEST(RenderSchema, FullRendering) {
  EXPECT_EQ(render_schema(small_schema(), 10000),
            "position(positionID INTEGER, minsalary INTEGER [lowest pay])\n"
            "employee(ssn TEXT, positionID INTEGER)\n"
            "FK employee.positionID -> position.positionID");
}

TEST(RenderSchema, TruncationStages) {
  const auto s = small_schema();
  const std::string no_desc =
      "position(positionID INTEGER, minsalary INTEGER)\n"
      "employee(ssn TEXT, positionID INTEGER)\n"
      "FK employee.positionID -> position.positionID";
  EXPECT_EQ(render_schema(s, no_desc.size()), no_desc);

  const std::string no_fk = "position(positionID INTEGER, minsalary INTEGER)\nemployee(ssn TEXT, positionID INTEGER)";
  EXPECT_EQ(render_schema(s, no_fk.size()), no_fk);

  // Without a referenced-table hint the next stage drops every column list.
  EXPECT_EQ(render_schema(s, no_fk.size() - 1), "position\nemployee");

  RenderOptions hint;
  hint.referenced_tables = std::set<std::string>{"employee"};
  EXPECT_EQ(render_schema(s, no_fk.size() - 1, hint), "position\nemployee(ssn TEXT, positionID INTEGER)");

  EXPECT_EQ(render_schema(s, 9), "position");
  EXPECT_EQ(render_schema(s, 3), "");
  EXPECT_EQ(render_schema(s, 0), "");
}

TEST(RenderSchema, ReferencedTables) {
  const auto refs = tables_referenced_by(small_schema(), "SELECT * FROM Employee AS T1 JOIN x");
  EXPECT_EQ(refs, (std::set<std::string>{"employee"}));
}
