#include <gtest/gtest.h>

#include "common/kb_fixture.hpp"
#include "common/test_util.hpp"
#include "kbsql/error.hpp"
#include "kbsql/llm_client.hpp"
#include "kbsql/pipeline.hpp"

using namespace kbsql;
using namespace kbsql::testing;

TEST(ExtractSql, Variants) {
  EXPECT_EQ(extract_sql("SELECT 1"), "SELECT 1");
  EXPECT_EQ(extract_sql("```sql\nSELECT a\nFROM t;\n```\nExplanation."), "SELECT a\nFROM t");
  EXPECT_EQ(extract_sql("SQL: SELECT x FROM t WHERE y = 'a;b'; trailing words"), "SELECT x FROM t WHERE y = 'a;b'");
  EXPECT_EQ(extract_sql("\n\n  SELECT 2\n\nThis query answers."), "SELECT 2");
  EXPECT_EQ(extract_sql("SQL:\nSELECT 3"), "SELECT 3");
  EXPECT_EQ(extract_sql("SELECT 'line one\n\nline two'"), "SELECT 'line one\n\nline two'");
  EXPECT_THROW(extract_sql(""), EmptySqlError);
  EXPECT_THROW(extract_sql("```\n```"), EmptySqlError);
  EXPECT_THROW(extract_sql(";"), EmptySqlError);
}

namespace {

DatabaseSchema lab_schema() {
  DatabaseSchema s;
  s.db_id = "thrombosis_prediction";
  s.tables = {{"Laboratory", {{"ID", "INTEGER", std::nullopt}, {"ALB", "REAL", "albumin"}}}};
  return s;
}

KnowledgeEntry entry(const std::string& text) {
  KnowledgeEntry e;
  e.text = text;
  e.id = knowledge_id(text);
  return e;
}

}  // namespace

TEST(RefineKnowledge, KeepsRangeAndCutsContinuation) {
  auto backend = std::make_unique<FunctionBackend>([](const std::string&) {
    return "Evidence: albumin is normal refers to ALB between 3.5 and 5.5\nQuestion: invented follow-up";
  });
  LlmClient llm(LlmConfig{}, std::move(backend));
  const Query q{"7", "How many patients have normal albumin?", "thrombosis_prediction"};
  const auto r = refine_knowledge(q, {entry("ALB between 3.5 and 5.5 is the normal range"), entry("ALB is albumin")},
                                  lab_schema(), llm);
  EXPECT_EQ(r.text, "albumin is normal refers to ALB between 3.5 and 5.5");
  EXPECT_EQ(r.query_id, "7");
  EXPECT_EQ(r.schema_id, "thrombosis_prediction");
  EXPECT_EQ(r.retrieved_ids.size(), 2u);

  const auto prompt = llm.ledger().records().at(0).prompt;
  EXPECT_NE(prompt.find("Question: How many patients have normal albumin?\nEvidence: ALB is albumin\n\n"),
            std::string::npos);
  EXPECT_TRUE(prompt.ends_with("Question: How many patients have normal albumin?\nEvidence: "));
}

namespace {

// Returns SQL for SQL prompts and a fixed refinement otherwise.
std::unique_ptr<LlmBackend> scripted_backend() {
  return std::make_unique<FunctionBackend>([](const std::string& p) -> std::string {
    if (p.ends_with("SQL: ")) return "```sql\nSELECT COUNT(*) FROM employee\n```";
    return "refined note for this question";
  });
}

struct Harness {
  TempDir dir;
  Dataset ds;
  std::shared_ptr<HashEmbeddingProvider> provider = std::make_shared<HashEmbeddingProvider>(64);
  std::optional<Retriever> retriever;
  std::optional<ExampleSelector> selector;

  Harness() {
    ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
    const auto kb = init_kb(ds);
    retriever.emplace(provider, std::nullopt, build_index(kb, *provider));
    selector.emplace(ds, *provider, ExampleSelector::Options{true, true});
  }

  GenerationContext ctx(LlmClient& llm, PipelineConfig cfg) const {
    cfg.record_timings = false;
    return GenerationContext{&*retriever, &*selector, &llm, cfg};
  }
};

}  // namespace

TEST(GenerateSql, CallOrderWithRefinement) {
  Harness h;
  LlmClient llm(LlmConfig{}, scripted_backend());
  PipelineConfig cfg;
  cfg.top_j = 3;
  cfg.sql_few_shot = 2;
  const auto res = generate_sql(h.ds.records[2].query, h.ds.schema("hr"), h.ctx(llm, cfg));
  EXPECT_EQ(res.sql.text, "SELECT COUNT(*) FROM employee");
  EXPECT_EQ(res.retrieved.size(), 3u);
  EXPECT_EQ(res.evidence, "refined note for this question");
  ASSERT_TRUE(res.sql.knowledge.has_value());
  const auto recs = llm.ledger().records();
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(recs[0].prompt.ends_with("Evidence: "));
  EXPECT_TRUE(recs[1].prompt.ends_with("Evidence: refined note for this question\nSQL: "));
  EXPECT_EQ(res.timings.generate_ms, 0.0);
}

TEST(GenerateSql, WithoutRefinementJoinsRetrievedTexts) {
  Harness h;
  LlmClient llm(LlmConfig{}, scripted_backend());
  PipelineConfig cfg;
  cfg.top_j = 2;
  cfg.use_refinement = false;
  const auto res = generate_sql(h.ds.records[2].query, h.ds.schema("hr"), h.ctx(llm, cfg));
  ASSERT_EQ(res.retrieved.size(), 2u);
  EXPECT_EQ(res.evidence, res.retrieved[0].entry.text + "; " + res.retrieved[1].entry.text);
  EXPECT_EQ(llm.ledger().size(), 1u);
  EXPECT_FALSE(res.sql.knowledge.has_value());
}

TEST(GenerateSql, RefinementToggleChangesOnlyEvidence) {
  Harness h;
  LlmClient with(LlmConfig{}, scripted_backend());
  LlmClient without(LlmConfig{}, scripted_backend());
  PipelineConfig cfg;
  cfg.top_j = 3;
  cfg.sql_few_shot = 3;
  for (const auto& rec : h.ds.records) {
    generate_sql(rec.query, h.ds.schema("hr"), h.ctx(with, cfg));
    cfg.use_refinement = false;
    generate_sql(rec.query, h.ds.schema("hr"), h.ctx(without, cfg));
    cfg.use_refinement = true;
  }
  std::vector<std::string> sql_with;
  for (const auto& r : with.ledger().records()) {
    if (r.prompt.ends_with("SQL: ")) sql_with.push_back(r.prompt);
  }
  const auto recs_without = without.ledger().records();
  ASSERT_EQ(sql_with.size(), recs_without.size());
  for (std::size_t i = 0; i < sql_with.size(); ++i) {
    const auto a = split_lines(sql_with[i]);
    const auto b = split_lines(recs_without[i].prompt);
    ASSERT_EQ(a.size(), b.size());
    std::size_t differing = 0;
    for (std::size_t l = 0; l < a.size(); ++l) {
      if (a[l] != b[l]) {
        ++differing;
        EXPECT_EQ(l, a.size() - 2);
        EXPECT_TRUE(a[l].starts_with("Evidence: "));
      }
    }
    EXPECT_EQ(differing, 1u);
  }
}

TEST(GenerateSql, ZeroTopJIsBaseline) {
  Harness h;
  LlmClient llm(LlmConfig{}, scripted_backend());
  PipelineConfig cfg;
  cfg.top_j = 0;
  const GenerationContext ctx{nullptr, nullptr, &llm, cfg};
  const auto res = generate_sql(h.ds.records[0].query, h.ds.schema("hr"), ctx);
  EXPECT_TRUE(res.retrieved.empty());
  EXPECT_EQ(res.evidence, "");
  EXPECT_EQ(llm.ledger().size(), 1u);
  cfg.top_j = 1;
  EXPECT_THROW(generate_sql(h.ds.records[0].query, h.ds.schema("hr"), GenerationContext{nullptr, nullptr, &llm, cfg}),
               ConfigError);
}

TEST(RunPipeline, RecordsPerQueryErrors) {
  Harness h;
  int calls = 0;
  auto backend = std::make_unique<FunctionBackend>([&](const std::string& p) -> std::string {
    if (!p.ends_with("SQL: ")) return "some refined note";
    if (++calls == 2) throw LlmHttpStatusError(400, "bad request");
    if (calls == 3) return "I cannot answer.\n";
    return "SELECT 1";
  });
  LlmClient llm(LlmConfig{}, std::move(backend));
  PipelineConfig cfg;
  cfg.top_j = 2;
  const auto outs = run_pipeline(h.ds, h.ctx(llm, cfg));
  ASSERT_EQ(outs.size(), 10u);
  EXPECT_EQ(outs[0].sql, "SELECT 1");
  EXPECT_FALSE(outs[1].sql.has_value());
  EXPECT_TRUE(outs[1].error->starts_with("llm-http-status"));
  // The completion is taken as SQL text; whether it runs is for evaluation to decide.
  EXPECT_EQ(outs[2].sql, "I cannot answer.");
  for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_EQ(outs[i].query_id, h.ds.records[i].query.id);
}

TEST(RunPipeline, JobsDoNotChangeOutputs) {
  Harness h;
  LlmClient a(LlmConfig{}, scripted_backend());
  LlmClient b(LlmConfig{}, scripted_backend());
  PipelineConfig cfg;
  cfg.top_j = 3;
  const auto serial = run_pipeline(h.ds, h.ctx(a, cfg));
  cfg.jobs = 4;
  const auto parallel = run_pipeline(h.ds, h.ctx(b, cfg));
  EXPECT_EQ(serial, parallel);
}

TEST(Outputs, RoundTrip) {
  TempDir dir;
  OutputsFile f;
  f.lineage = "0011223344556677";
  f.run_config = R"({"seed":1})";
  PipelineOutput a;
  a.query_id = "q1";
  a.sql = "SELECT 1";
  a.knowledge = "k";
  a.retrieved_ids = {"x", "y"};
  a.timings = {1.5, 2.25, 3.0};
  PipelineOutput b;
  b.query_id = "q2";
  b.error = "llm-error: boom";
  f.outputs = {a, b};
  save_outputs(f, dir / "o.jsonl");
  const auto back = load_outputs(dir / "o.jsonl");
  EXPECT_EQ(back.lineage, f.lineage);
  EXPECT_EQ(back.run_config, f.run_config);
  EXPECT_EQ(back.outputs, f.outputs);

  write_file(dir / "empty.jsonl", "");
  EXPECT_THROW(load_outputs(dir / "empty.jsonl"), ParseError);
  write_file(dir / "bad.jsonl", R"({"kind":"something"})");
  EXPECT_THROW(load_outputs(dir / "bad.jsonl"), ParseError);
}
