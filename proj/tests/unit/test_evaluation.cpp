#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "common/kb_fixture.hpp"
#include "common/test_util.hpp"
#include "kbsql/error.hpp"
#include "kbsql/evaluation.hpp"

using namespace kbsql;
using namespace kbsql::testing;

namespace {

struct Db {
  TempDir dir;
  std::filesystem::path file;
  Db() { file = make_db(dir / "databases/hr/hr.sqlite", kMiniSchema); }
};

ExecutionResult ok_rows(std::vector<Row> rows, bool ordered = false) {
  ExecutionResult r;
  r.rows = std::move(rows);
  r.ordered = ordered;
  return r;
}

}  // namespace

TEST(HasOrderBy, IgnoresLiteralsAndComments) {
  EXPECT_TRUE(has_order_by("select a from t order by a"));
  EXPECT_TRUE(has_order_by("SELECT a FROM t ORDER\n  BY a"));
  EXPECT_FALSE(has_order_by("SELECT 'order by' FROM t"));
  EXPECT_FALSE(has_order_by("SELECT a FROM t -- order by a"));
  EXPECT_FALSE(has_order_by("SELECT a /* ORDER BY */ FROM t"));
  EXPECT_FALSE(has_order_by("SELECT border, bypass FROM t"));
}

TEST(ExecuteSql, Basics) {
  Db db;
  const auto one = execute_sql(db.file, "SELECT 1");
  EXPECT_EQ(one.status, ExecStatus::Ok);
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.rows[0][0], Cell(std::int64_t{1}));
  EXPECT_GT(one.vm_steps, 0);

  const auto bad = execute_sql(db.file, "SELEC nothing");
  EXPECT_EQ(bad.status, ExecStatus::Error);
  EXPECT_FALSE(bad.error.empty());

  const auto missing_table = execute_sql(db.file, "SELECT * FROM nowhere");
  EXPECT_EQ(missing_table.status, ExecStatus::Error);

  const auto no_db = execute_sql(db.dir / "absent.sqlite", "SELECT 1");
  EXPECT_EQ(no_db.status, ExecStatus::Error);
}

TEST(ExecuteSql, ReadOnly) {
  Db db;
  const auto r = execute_sql(db.file, "DELETE FROM employee");
  EXPECT_EQ(r.status, ExecStatus::Error);
  EXPECT_EQ(execute_sql(db.file, "SELECT COUNT(*) FROM employee").rows[0][0], Cell(std::int64_t{5}));
}

TEST(ExecuteSql, Timeout) {
  Db db;
  const auto r = execute_sql(db.file,
                             "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c",
                             std::chrono::milliseconds(200));
  EXPECT_EQ(r.status, ExecStatus::Timeout);
  EXPECT_TRUE(r.rows.empty());
  EXPECT_LT(r.elapsed, 5.0);
}

TEST(CellsEqual, Rules) {
  EXPECT_TRUE(cells_equal(Cell{}, Cell{}));
  EXPECT_FALSE(cells_equal(Cell{}, Cell(std::int64_t{0})));
  EXPECT_TRUE(cells_equal(Cell(std::int64_t{1}), Cell(1.0)));
  EXPECT_TRUE(cells_equal(Cell(0.1 + 0.2), Cell(0.3)));
  EXPECT_TRUE(cells_equal(Cell(1.0), Cell(1.0 + 9e-7)));
  EXPECT_FALSE(cells_equal(Cell(1.0), Cell(1.0 + 2e-6)));
  EXPECT_FALSE(cells_equal(Cell(std::int64_t{1}), Cell(std::string("1"))));
  EXPECT_TRUE(cells_equal(Cell(std::string("a")), Cell(std::string("a"))));
  EXPECT_FALSE(cells_equal(Cell(std::string("a")), Cell(std::string("A"))));
  EXPECT_TRUE(cells_equal(Cell(Blob{{1, 2}}), Cell(Blob{{1, 2}})));
}

TEST(ExecutionMatch, Cases) {
  const Row r1{std::int64_t{1}, std::string("a")};
  const Row r2{std::int64_t{2}, std::string("b")};
  EXPECT_TRUE(execution_match(ok_rows({r2, r1}), ok_rows({r1, r2})));
  EXPECT_FALSE(execution_match(ok_rows({r2, r1}), ok_rows({r1, r2}, true)));
  EXPECT_TRUE(execution_match(ok_rows({r1, r2}), ok_rows({r1, r2}, true)));
  EXPECT_FALSE(execution_match(ok_rows({r1, r1}), ok_rows({r1, r2})));
  EXPECT_FALSE(execution_match(ok_rows({r1}), ok_rows({r1, r1})));
  EXPECT_TRUE(execution_match(ok_rows({}), ok_rows({})));
  EXPECT_FALSE(execution_match(ok_rows({Row{std::int64_t{1}}}), ok_rows({r1})));
  EXPECT_TRUE(execution_match(ok_rows({Row{1.0000001}, Row{Cell{}}}), ok_rows({Row{Cell{}}, Row{std::int64_t{1}}})));
  auto failed = ok_rows({});
  failed.status = ExecStatus::Error;
  EXPECT_FALSE(execution_match(failed, ok_rows({})));
  EXPECT_FALSE(execution_match(ok_rows({}), failed));
}

TEST(Metrics, ExecutionAccuracy) {
  std::vector<bool> m(41, false);
  for (int i = 0; i < 17; ++i) m[i * 2] = true;
  EXPECT_NEAR(compute_ex(m), 41.46341463414634, 1e-9);
  EXPECT_THROW(compute_ex({}), EmptySetError);
}

TEST(Metrics, ValidEfficiencyScore) {
  EXPECT_NEAR(compute_ves({{true, 4.0, 1.0}}), 200.0, 1e-12);
  EXPECT_NEAR(compute_ves({{true, 1.0, 4.0}, {false, 0.0, 0.0}}), 25.0, 1e-12);
  EXPECT_NEAR(compute_ves({{true, 1e9, 1.0}}), 1000.0, 1e-9);
  EXPECT_NEAR(compute_ves({{true, 1e9, 1.0}}, {400.0}), 2000.0, 1e-9);
  // Equal times reduce VES to EX.
  EXPECT_NEAR(compute_ves({{true, 3.0, 3.0}, {false, 0, 0}, {true, 0.5, 0.5}}), 100.0 * 2.0 / 3.0, 1e-12);
  EXPECT_THROW(compute_ves({{true, 0.0, 1.0}}), NonPositiveTimeError);
  EXPECT_THROW(compute_ves({{true, 1.0, -1.0}}), NonPositiveTimeError);
  EXPECT_NO_THROW(compute_ves({{false, 0.0, 0.0}}));
  EXPECT_THROW(compute_ves({}), EmptySetError);
}

TEST(Metrics, KnowledgeMatch) {
  EXPECT_TRUE(knowledge_exact_match("ALB between 3.5 and 5.5.", "alb  between 3.5 and 5.5"));
  EXPECT_FALSE(knowledge_exact_match("ALB between 3.5 and 5.5", "ALB between 3.5 and 5"));
  const HashEmbeddingProvider provider;
  EXPECT_NEAR(knowledge_semantic_similarity("Trainee is a title", "trainee IS a title.", provider), 1.0, 1e-12);
  const double partial = knowledge_semantic_similarity("Trainee is a title", "Manager is a title", provider);
  EXPECT_GT(partial, 0.0);
  EXPECT_LT(partial, 1.0);
  EXPECT_THROW(knowledge_semantic_similarity("", "x", provider), ProviderError);
}

TEST(Metrics, KbCoverage) {
  KnowledgeBase kb;
  for (const auto& [q, k] : mini_records()) kb.insert({"", k, KnowledgeSource::Dataset, "hr", {}, {}});
  std::vector<std::string> gold{"FEMALE refers to gender = 'F'.", "Trainee is a positiontitle",
                                "Manager is a positiontitle"};
  for (int i = 0; i < 7; ++i) gold.push_back("unseen fact number " + std::to_string(i));
  const HashEmbeddingProvider provider;
  const auto cov = kb_coverage(kb, gold, provider);
  EXPECT_DOUBLE_EQ(cov.exact_match_pct, 30.0);
  ASSERT_EQ(cov.best_similarity.size(), 10u);
  EXPECT_NEAR(cov.best_similarity[0], 1.0, 1e-12);
  EXPECT_LT(cov.best_similarity[5], 1.0);
  EXPECT_THROW(kb_coverage(kb, {}, provider), EmptySetError);
  EXPECT_DOUBLE_EQ(kb_coverage(KnowledgeBase{}, {"x y z"}, provider).exact_match_pct, 0.0);
}

namespace {

// Four test records on the mini database with hand-known answers.
Dataset four_query_dataset(const TempDir& dir) {
  make_db(dir / "databases/hr/hr.sqlite", kMiniSchema);
  nlohmann::json recs = nlohmann::json::array();
  recs.push_back({{"question_id", "a"}, {"db_id", "hr"}, {"question", "female count"},
                  {"evidence", "female refers to gender = 'F'"},
                  {"SQL", "SELECT COUNT(*) FROM employee WHERE gender = 'F'"}});
  recs.push_back({{"question_id", "b"}, {"db_id", "hr"}, {"question", "titles by pay"},
                  {"SQL", "SELECT positiontitle FROM position ORDER BY minsalary"}});
  recs.push_back({{"question_id", "c"}, {"db_id", "hr"}, {"question", "trainee pay"},
                  {"evidence", "Trainee is a positiontitle"},
                  {"SQL", "SELECT minsalary FROM position WHERE positiontitle = 'Trainee'"}});
  recs.push_back({{"question_id", "d"}, {"db_id", "hr"}, {"question", "ssn list"},
                  {"SQL", "SELECT ssn FROM employee"}});
  write_file(dir / "test.json", recs.dump());
  return load_dataset(dir / "test.json", DatasetFormat::Bird, Split::Test);
}

std::vector<PipelineOutput> four_outputs() {
  std::vector<PipelineOutput> o(4);
  o[0] = {"a", "SELECT COUNT(*) FROM employee WHERE gender = 'F'", "Female refers to gender = 'F'.", {}, {}, {}};
  // Right rows, wrong order against an ordered gold.
  o[1] = {"b", "SELECT positiontitle FROM position ORDER BY minsalary DESC", "", {}, {}, {}};
  o[2] = {"c", "SELECT minsalary FROM positon", "Trainee is a title", {}, {}, {}};
  o[3] = {"d", std::nullopt, "", {}, {}, "llm-error: down"};
  return o;
}

}  // namespace

TEST(EvaluateRun, HandOracle) {
  TempDir dir;
  const auto test = four_query_dataset(dir);
  EvalConfig cfg;
  cfg.timing = TimingSource::VmSteps;
  cfg.setting = "toy";
  const HashEmbeddingProvider provider;
  const auto report = evaluate_run(four_outputs(), test, cfg, &provider);
  ASSERT_EQ(report.per_query.size(), 4u);
  EXPECT_TRUE(report.per_query[0].ex);
  EXPECT_FALSE(report.per_query[1].ex);
  EXPECT_FALSE(report.per_query[2].ex);
  EXPECT_EQ(report.per_query[2].pred_status, "error");
  EXPECT_EQ(report.per_query[3].pred_status, "missing");
  EXPECT_EQ(report.per_query[3].gold_status, "ok");
  EXPECT_DOUBLE_EQ(report.ex, 25.0);
  // Identical SQL takes identical VM steps, so VES equals EX.
  EXPECT_DOUBLE_EQ(report.ves, 25.0);
  EXPECT_EQ(report.per_query[0].t_gold, report.per_query[0].t_pred);
  EXPECT_EQ(report.per_query[1].t_gold, 0.0);
  // Two records carry gold knowledge; one is matched exactly.
  ASSERT_TRUE(report.em.has_value());
  EXPECT_DOUBLE_EQ(*report.em, 50.0);
  EXPECT_FALSE(report.per_query[1].em.has_value());
  ASSERT_TRUE(report.mean_ss.has_value());
  EXPECT_NEAR(*report.per_query[0].ss, 1.0, 1e-12);
  EXPECT_EQ(report.timing_source, "vm-steps");

  cfg.jobs = 3;
  const auto parallel = evaluate_run(four_outputs(), test, cfg, &provider);
  EXPECT_EQ(report_to_json(parallel), report_to_json(report));
}

TEST(EvaluateRun, Alignment) {
  TempDir dir;
  const auto test = four_query_dataset(dir);
  auto outs = four_outputs();
  EXPECT_THROW(evaluate_run({}, test, {}), AlignmentError);
  outs.pop_back();
  EXPECT_THROW(evaluate_run(outs, test, {}), AlignmentError);
  outs = four_outputs();
  std::swap(outs[0], outs[1]);
  EXPECT_THROW(evaluate_run(outs, test, {}), AlignmentError);
}

TEST(Report, JsonAndTable) {
  EvalReport r;
  r.setting = "refined";
  r.lineage = "abc";
  r.timing_source = "vm-steps";
  r.per_query = {{"q1", true, 1.0, 5, 5, "ok", "ok", true, 0.9}, {"q2", false, 0.0, 0, 0, "error", "ok", {}, {}}};
  r.recompute_aggregates();
  r.retrieval = RetrievalMetrics{0.75, {{1, 0.5}, {3, 1.0}, {10, 1.0}}, 2};
  r.coverage = CoverageReport{30.0, 0.5, {}, {}};

  const auto j = nlohmann::json::parse(report_to_json(r));
  EXPECT_EQ(j["kind"], "kbsql-eval-report");
  EXPECT_DOUBLE_EQ(j["aggregates"]["ex"].get<double>(), 50.0);
  EXPECT_DOUBLE_EQ(j["aggregates"]["ves"].get<double>(), 50.0);
  EXPECT_DOUBLE_EQ(j["aggregates"]["em"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(j["aggregates"]["mean_ss"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(j["retrieval"]["top_at"]["3"].get<double>(), 1.0);
  EXPECT_TRUE(j["per_query"][1]["em"].is_null());

  EXPECT_EQ(render_report_table(r),
            "Setting |    EX |   VES |     EM |    SS |    MRR | Top@1 |  Top@3 | Top@10\n"
            "--------+-------+-------+--------+-------+--------+-------+--------+-------\n"
            "refined | 50.00 | 50.00 | 100.00 | 90.00 | 0.7500 | 50.00 | 100.00 | 100.00\n"
            "KB coverage: 30.00% exact, mean best SS 50.00\n");

  EvalReport bare;
  bare.setting = "base";
  bare.per_query = {{"q", false, 0.0, 0, 0, "error", "ok", {}, {}}};
  bare.recompute_aggregates();
  EXPECT_EQ(render_report_table(bare),
            "Setting |   EX |  VES | EM | SS | MRR | Top@1 | Top@3 | Top@10\n"
            "--------+------+------+----+----+-----+-------+-------+-------\n"
            "base    | 0.00 | 0.00 |  - |  - |   - |     - |     - |      -\n");
}

TEST(TimingSource, Parse) {
  EXPECT_EQ(parse_timing_source("wall"), TimingSource::WallClock);
  EXPECT_EQ(parse_timing_source("vm-steps"), TimingSource::VmSteps);
  EXPECT_THROW(parse_timing_source("cpu"), ConfigError);
}
