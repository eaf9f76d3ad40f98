#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "kbsql/contrastive.hpp"
#include "kbsql/dataset.hpp"
#include "kbsql/evaluation.hpp"
#include "kbsql/knowledge_base.hpp"
#include "kbsql/llm_client.hpp"
#include "kbsql/pipeline.hpp"
#include "kbsql/retriever.hpp"

namespace kbsql {

enum class Scenario { Overlap, NonOverlap, CrossDataset };

std::string to_string(Scenario scenario);
Scenario parse_scenario(std::string_view s);

// Every setting a command can read, after merging flags, config file,
// environment and defaults. Relative paths are taken relative to workdir.
struct RunConfig {
  std::filesystem::path workdir = ".";

  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path train_db_dir;  // empty: "databases" next to the records file
  std::filesystem::path test_db_dir;
  DatasetFormat format = DatasetFormat::Bird;
  Scenario scenario = Scenario::Overlap;

  std::filesystem::path kb = "kb.jsonl";
  std::filesystem::path head = "head.txt";
  std::filesystem::path outputs = "outputs.jsonl";
  std::filesystem::path report = "report.json";
  std::filesystem::path ledger;            // empty: not written
  std::filesystem::path record_fixtures;   // empty: not written
  bool use_head = true;

  std::size_t few_shot_k = 10;
  std::size_t iterations = 5;
  Split expand_split = Split::Train;

  std::string embedder = "hash";  // hash | http
  std::size_t embed_dim = 256;
  std::string embed_endpoint;
  std::string embed_model;
  std::string embed_api_key;

  double tau = 0.05;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double validation_fraction = 0.2;

  LlmConfig llm;

  std::size_t top_j = 5;
  std::size_t prompt_budget = 24000;
  bool use_refinement = true;
  std::size_t sql_few_shot = 10;

  TimingSource timing = TimingSource::WallClock;
  std::size_t repeats = 3;
  double clip = 100.0;
  double exec_timeout_s = 30.0;
  bool timing_isolated = false;
  bool kb_metrics = true;
  bool force = false;
  std::string setting;  // empty: derived from the pipeline settings

  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Throws ConfigError.
  void validate() const;
};

// Artifacts carry the hash of the settings that produced them.
enum class Stage { KnowledgeBase, Head, Outputs };

// Canonical JSON of the settings a stage depends on. Paths, secrets,
// endpoints, job counts and evaluation knobs are excluded; dataset files
// enter by content hash.
std::string lineage_json(const RunConfig& config, Stage stage);
// First 16 hex digits of sha256(lineage_json).
std::string lineage_hash(const RunConfig& config, Stage stage);

struct ScenarioData {
  Dataset train;
  Dataset test;
};

// Loads both splits and applies the scenario: overlap requires a shared
// database, non-overlap drops train records on test databases.
ScenarioData load_scenario(const RunConfig& config);

std::shared_ptr<const EmbeddingProvider> make_embedder(const RunConfig& config);

// Replaces the configured LLM backend; used by fixture recording and tests.
using BackendFactory = std::function<std::unique_ptr<LlmBackend>(const LlmConfig&)>;

struct BuildKbResult {
  KbStats initial;
  KbStats final;
  ExpandStats expand;
};

BuildKbResult cmd_build_kb(const RunConfig& config, const BackendFactory& factory = {});
TrainResult cmd_train_retriever(const RunConfig& config);
std::vector<ScoredEntry> cmd_retrieve(const RunConfig& config, const std::string& query);
OutputsFile cmd_generate(const RunConfig& config, const BackendFactory& factory = {});
EvalReport cmd_evaluate(const RunConfig& config);
KbStats cmd_stats(const RunConfig& config);

// Parses arguments and runs one subcommand. Failures print
//   error: {"code": ..., "message": ...}
// to err. Returns 0 on success, 2 for usage and configuration errors, 1
// otherwise.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
            const BackendFactory& factory = {});

}  // namespace kbsql
