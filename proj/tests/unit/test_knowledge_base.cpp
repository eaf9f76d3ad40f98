#include <gtest/gtest.h>

#include <set>

#include "common/kb_fixture.hpp"
#include "common/test_util.hpp"
#include "kbsql/error.hpp"
#include "kbsql/knowledge_base.hpp"
#include "kbsql/llm_client.hpp"
#include "kbsql/text.hpp"

using namespace kbsql;
using namespace kbsql::testing;

TEST(KnowledgeBase, InsertDeduplicatesByNormalizedText) {
  KnowledgeBase kb;
  EXPECT_TRUE(kb.insert({"", "Female refers to SEX = 'F'", KnowledgeSource::Dataset, "db", {}, {}}));
  EXPECT_FALSE(kb.insert({"", "  female refers to   sex = 'f'. ", KnowledgeSource::Generated, "db", "1", 1}));
  EXPECT_FALSE(kb.insert({"", "   ", KnowledgeSource::Dataset, "db", {}, {}}));
  ASSERT_EQ(kb.size(), 1u);
  const auto& e = kb.entries().begin()->second;
  EXPECT_EQ(e.text, "Female refers to SEX = 'F'");
  EXPECT_EQ(e.source, KnowledgeSource::Dataset);
  EXPECT_EQ(e.id, sha256_hex("female refers to sex = 'f'").substr(0, 16));
  EXPECT_TRUE(kb.contains_text("FEMALE refers to sex = 'F'"));
}

TEST(KnowledgeBase, InitFromDataset) {
  TempDir dir;
  auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  ds.records[1].knowledge = ds.records[0].knowledge;  // duplicate text
  ds.records[2].knowledge.reset();
  const auto kb = init_kb(ds);
  EXPECT_EQ(kb.size(), 8u);
  for (const auto& [id, e] : kb.entries()) {
    EXPECT_EQ(e.source, KnowledgeSource::Dataset);
    EXPECT_EQ(e.db_id, "hr");
    EXPECT_FALSE(e.iteration.has_value());
  }
}

TEST(ParseKnowledgeCompletion, StripsMarkersAndStopsAtQuestion) {
  const auto lines = parse_knowledge_completion(
      "1. female refers to gender = 'F'\n"
      "2) Trainee is a positiontitle\n"
      "- Evidence: salary is in dollars\n"
      "* too short\n"
      "\n"
      "Evidence: minsalary is the minimum salary\n"
      "Question: next question here\n"
      "after the question line");
  const std::vector<std::string> expected{"female refers to gender = 'F'", "Trainee is a positiontitle",
                                          "salary is in dollars", "minsalary is the minimum salary"};
  EXPECT_EQ(lines, expected);
  EXPECT_TRUE(parse_knowledge_completion("").empty());
}

TEST(ExampleSelector, RanksBySimilarityAndExcludesSelf) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  const HashEmbeddingProvider embedder;
  const ExampleSelector selector(ds, embedder, {});
  EXPECT_EQ(selector.pool_size(), 10u);
  const auto top = selector.select("How many female employees are there?", 3, std::string("0"));
  ASSERT_EQ(top.size(), 3u);
  for (const auto& r : top) EXPECT_NE(r.query.id, "0");
  EXPECT_EQ(top[0].query.id, "1");  // differs only in one word

  const auto all = selector.select("anything at all", 50, std::nullopt);
  EXPECT_EQ(all.size(), 10u);
  EXPECT_THROW(selector.select("x", 0, std::nullopt), ConfigError);

  const auto via_helper = select_examples(ds.records[0].query, ds, 3, embedder);
  EXPECT_EQ(via_helper, top);
}

TEST(ExampleSelector, EmptyPool) {
  TempDir dir;
  auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  for (auto& r : ds.records) r.knowledge.reset();
  const HashEmbeddingProvider embedder;
  const ExampleSelector selector(ds, embedder, {});
  EXPECT_THROW(selector.select("q", 2, std::nullopt), InsufficientExamplesError);
}

namespace {

struct Expanded {
  KnowledgeBase kb;
  ExpandStats stats;
  std::size_t ledger = 0;
};

Expanded expand_mini(const Dataset& ds, std::size_t jobs, std::unique_ptr<LlmBackend> backend = nullptr) {
  KbBuildConfig cfg;
  cfg.few_shot_k = 3;
  cfg.iterations = 2;
  cfg.seed = 42;
  LlmClient llm(LlmConfig{}, backend ? std::move(backend) : novel_line_backend());
  const HashEmbeddingProvider embedder;
  Expanded out{init_kb(ds, cfg), {}, 0};
  out.stats = expand_kb(out.kb, ds, llm, cfg, embedder, {jobs});
  out.ledger = llm.ledger().size();
  return out;
}

}  // namespace

TEST(ExpandKb, GrowsByOneEntryPerCall) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  const auto run = expand_mini(ds, 1);
  EXPECT_EQ(run.kb.size(), 30u);
  EXPECT_EQ(run.stats.samples, 10u);
  EXPECT_EQ(run.stats.llm_calls, 20u);
  EXPECT_EQ(run.stats.added, 20u);
  EXPECT_EQ(run.stats.failures, 0u);
  EXPECT_EQ(run.ledger, 20u);
  const auto stats = kb_stats(run.kb);
  EXPECT_EQ(stats.from_dataset, 10u);
  EXPECT_EQ(stats.generated, 20u);
  EXPECT_EQ(stats.by_iteration.at(1), 10u);
  EXPECT_EQ(stats.by_iteration.at(2), 10u);
  EXPECT_EQ(stats.by_db.at("hr"), 30u);
}

TEST(ExpandKb, SameBytesForAnyJobCount) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  const auto a = expand_mini(ds, 1);
  const auto b = expand_mini(ds, 1);
  const auto c = expand_mini(ds, 4);
  save_kb(a.kb, dir / "a.jsonl");
  save_kb(b.kb, dir / "b.jsonl");
  save_kb(c.kb, dir / "c.jsonl");
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "c.jsonl"));
}

TEST(ExpandKb, PromptsHoldFewShotKExamples) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  std::vector<std::size_t> blocks;
  auto counting = std::make_unique<FunctionBackend>([&](const std::string& p) {
    std::size_t n = 0;
    for (auto pos = p.find("Question: "); pos != std::string::npos; pos = p.find("Question: ", pos + 1)) ++n;
    blocks.push_back(n);
    return std::string();
  });
  const auto run = expand_mini(ds, 1, std::move(counting));
  ASSERT_EQ(blocks.size(), 20u);
  for (auto n : blocks) EXPECT_EQ(n, 4u);  // three examples and the target
  EXPECT_EQ(run.kb.size(), 10u);
}

TEST(ExpandKb, FailuresAreSkipped) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  int calls = 0;
  auto flaky = std::make_unique<FunctionBackend>([&](const std::string& p) -> std::string {
    if (calls++ % 2 == 0) throw LlmHttpStatusError(400, "rejected");
    return "generated line for " + sha256_hex(p).substr(0, 8);
  });
  const auto run = expand_mini(ds, 1, std::move(flaky));
  EXPECT_EQ(run.stats.failures, 10u);
  EXPECT_EQ(run.stats.llm_calls, 10u);
  EXPECT_EQ(run.stats.failure_messages.size(), 10u);
  EXPECT_EQ(run.kb.size(), 20u);
}

TEST(KbPersistence, RoundTrip) {
  TempDir dir;
  const auto ds = load_dataset(write_mini_dataset(dir.path()), DatasetFormat::Bird);
  auto run = expand_mini(ds, 1);
  run.kb.lineage = "feedfacecafebeef";
  save_kb(run.kb, dir / "kb.jsonl");
  const auto back = load_kb(dir / "kb.jsonl");
  EXPECT_EQ(back, run.kb);
  EXPECT_EQ(serialize_kb(back), read_file(dir / "kb.jsonl"));
}

TEST(KbPersistence, RejectsDamage) {
  TempDir dir;
  KnowledgeBase kb;
  kb.insert({"", "Trainee is a positiontitle", KnowledgeSource::Dataset, "hr", {}, {}});
  const auto text = serialize_kb(kb);

  auto tampered = text;
  tampered.replace(tampered.find("Trainee"), 7, "Manager");
  write_file(dir / "a.jsonl", tampered);
  EXPECT_THROW(load_kb(dir / "a.jsonl"), ParseError);

  write_file(dir / "b.jsonl", text.substr(text.find('\n') + 1));
  EXPECT_THROW(load_kb(dir / "b.jsonl"), ParseError);

  write_file(dir / "c.jsonl", text + text.substr(text.find('\n') + 1));
  EXPECT_THROW(load_kb(dir / "c.jsonl"), ParseError);

  write_file(dir / "d.jsonl", "{not json\n");
  EXPECT_THROW(load_kb(dir / "d.jsonl"), ParseError);
  EXPECT_THROW(load_kb(dir / "missing.jsonl"), IoError);
}

TEST(KbStats, FreshKb) {
  const auto s = kb_stats(KnowledgeBase{});
  EXPECT_EQ(s.total, 0u);
  EXPECT_TRUE(s.by_db.empty());
}
