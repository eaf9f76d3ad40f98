#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kbsql/dataset.hpp"
#include "kbsql/embedding.hpp"
#include "kbsql/prompts.hpp"

namespace kbsql {

class LlmClient;

enum class KnowledgeSource { Dataset, Generated };

std::string to_string(KnowledgeSource source);

struct KnowledgeEntry {
  std::string id;  // knowledge_id(text)
  std::string text;
  KnowledgeSource source = KnowledgeSource::Dataset;
  std::string db_id;
  std::optional<std::string> origin_query_id;  // generated entries only
  std::optional<std::size_t> iteration;        // 1-based, generated entries only

  bool operator==(const KnowledgeEntry&) const = default;
};

// First 16 hex digits of sha256(normalize_knowledge(text)).
std::string knowledge_id(std::string_view text);

struct KbBuildConfig {
  std::size_t few_shot_k = 10;
  std::size_t iterations = 5;
  std::uint64_t seed = 0;
  std::string llm_backend;
  std::string llm_model;
  double llm_temperature = 0.0;
  std::size_t prompt_budget = 24000;

  void validate() const;
  bool operator==(const KbBuildConfig&) const = default;
};

class KnowledgeBase {
 public:
  // Returns false when an entry with the same normalized text exists; the
  // existing entry is kept.
  bool insert(KnowledgeEntry entry);
  bool contains_text(std::string_view text) const;
  const KnowledgeEntry* find(const std::string& id) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  // Ordered by id.
  const std::map<std::string, KnowledgeEntry>& entries() const { return entries_; }
  std::vector<KnowledgeEntry> entry_list() const;

  KbBuildConfig build_config;
  std::string lineage;  // run-config hash of the command that wrote it

  bool operator==(const KnowledgeBase&) const = default;

 private:
  std::map<std::string, KnowledgeEntry> entries_;
};

// Distinct knowledge texts of the dataset, tagged source=dataset.
KnowledgeBase init_kb(const Dataset& dataset, const KbBuildConfig& config = {});

// Ranks dataset records by cosine similarity between the query and each
// record's question. Question embeddings are computed once.
class ExampleSelector {
 public:
  struct Options {
    bool require_knowledge = true;
    bool require_sql = false;
  };

  ExampleSelector(const Dataset& dataset, const EmbeddingProvider& embedder, Options options);

  // Top-k by similarity, descending; ties by record id ascending. Records
  // whose id equals exclude_id are skipped. Returns fewer than k when the
  // pool is smaller. Throws InsufficientExamplesError when nothing qualifies.
  std::vector<ExampleTriplet> select(std::string_view query_text, std::size_t k,
                                     const std::optional<std::string>& exclude_id) const;

  std::size_t pool_size() const { return candidates_.size(); }

 private:
  const Dataset* dataset_;
  const EmbeddingProvider* embedder_;
  std::vector<std::size_t> candidates_;
  std::vector<Vector> embeddings_;
};

// Top-k relevant records with knowledge, excluding the query's own record.
std::vector<ExampleTriplet> select_examples(const Query& query, const Dataset& dataset, std::size_t k,
                                            const EmbeddingProvider& embedder);

// Completion -> candidate entries: one per line, list markers ("1)", "2.",
// "-", "*") and a leading "Evidence:" stripped, lines under three words
// dropped, parsing stops at a line starting with "Question:".
std::vector<std::string> parse_knowledge_completion(std::string_view completion);

struct ExpandStats {
  std::size_t samples = 0;
  std::size_t llm_calls = 0;
  std::size_t failures = 0;
  std::size_t added = 0;
  std::vector<std::string> failure_messages;
};

struct ExpandOptions {
  std::size_t jobs = 1;
};

// For every record and each iteration 1..N: sample few_shot_k examples from
// the 2k most similar records, permute them, prompt the LLM and insert the
// parsed lines. LLM failures are counted and skipped. Work may run on
// `jobs` threads; results are committed in (record, iteration) order.
ExpandStats expand_kb(KnowledgeBase& kb, const Dataset& dataset, LlmClient& llm,
                      const KbBuildConfig& config, const EmbeddingProvider& embedder,
                      const ExpandOptions& options = {});

// Line-delimited file: a header object with the build config, then one
// entry object per line ordered by id. Throws IoError, ParseError.
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
std::string serialize_kb(const KnowledgeBase& kb);
KnowledgeBase load_kb(const std::filesystem::path& path);

struct KbStats {
  std::size_t total = 0;
  std::size_t from_dataset = 0;
  std::size_t generated = 0;
  std::map<std::string, std::size_t> by_db;
  std::map<std::size_t, std::size_t> by_iteration;
};

KbStats kb_stats(const KnowledgeBase& kb);

}  // namespace kbsql
