#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kbsql/dataset.hpp"
#include "kbsql/knowledge_base.hpp"
#include "kbsql/retriever.hpp"

namespace kbsql {

class LlmClient;

struct PipelineConfig {
  std::size_t top_j = 5;  // 0 disables retrieval: the no-knowledge baseline
  std::size_t prompt_budget = 24000;
  bool use_refinement = true;
  std::size_t sql_few_shot = 10;
  std::size_t jobs = 1;
  bool record_timings = true;
};

struct RefinedKnowledge {
  std::string text;
  std::string query_id;
  std::vector<std::string> retrieved_ids;
  std::string schema_id;
};

struct SqlStatement {
  std::string text;
  std::string query_id;
  std::optional<RefinedKnowledge> knowledge;
};

// Asks the LLM for query-specific knowledge given retrieved entries.
// Continuation lines starting with "Question:" are cut. Throws LlmError.
RefinedKnowledge refine_knowledge(const Query& query, const std::vector<KnowledgeEntry>& retrieved,
                                  const DatabaseSchema& schema, LlmClient& llm,
                                  std::size_t budget = kUnlimitedBudget);

// Completion -> one SQL statement: markdown fences removed, a leading
// "SQL:" label removed, text kept up to the first ';' outside quotes or the
// first blank line. Throws EmptySqlError.
std::string extract_sql(std::string_view completion);

struct StageTimings {
  double retrieve_ms = 0.0;
  double refine_ms = 0.0;
  double generate_ms = 0.0;
};

struct GenerationContext {
  const Retriever* retriever = nullptr;           // required when top_j > 0
  const ExampleSelector* sql_examples = nullptr;  // null: zero-shot SQL prompt
  LlmClient* llm = nullptr;
  PipelineConfig config;
};

struct GenerationResult {
  SqlStatement sql;
  std::string evidence;  // what went into the Evidence line
  std::vector<ScoredEntry> retrieved;
  StageTimings timings;
};

// retrieve top-j -> refine (optional) -> SQL prompt -> complete -> extract.
// Without refinement the retrieved texts joined by "; " form the evidence.
GenerationResult generate_sql(const Query& query, const DatabaseSchema& schema, const GenerationContext& ctx);

struct PipelineOutput {
  std::string query_id;
  std::optional<std::string> sql;
  std::string knowledge;
  std::vector<std::string> retrieved_ids;
  StageTimings timings;
  std::optional<std::string> error;

  bool operator==(const PipelineOutput&) const;
};

// One output per record, in record order; failures are recorded per record.
std::vector<PipelineOutput> run_pipeline(const Dataset& test, const GenerationContext& ctx);

struct OutputsFile {
  std::string lineage;
  std::string run_config;  // serialized JSON of the producing configuration
  std::vector<PipelineOutput> outputs;
};

// Header line {"kind": "kbsql-outputs", "lineage", "run_config"} followed by
// one {query_id, sql, knowledge, retrieved_ids, timings[, error]} per line.
void save_outputs(const OutputsFile& file, const std::filesystem::path& path);
OutputsFile load_outputs(const std::filesystem::path& path);

}  // namespace kbsql
