#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kbsql/dataset.hpp"
#include "kbsql/embedding.hpp"
#include "kbsql/knowledge_base.hpp"
#include "kbsql/pipeline.hpp"
#include "kbsql/retriever.hpp"
#include "kbsql/sqlite.hpp"

namespace kbsql {

enum class ExecStatus { Ok, Error, Timeout };

std::string to_string(ExecStatus status);

struct ExecutionResult {
  std::vector<Row> rows;  // empty unless status is Ok
  bool ordered = false;   // the executed SQL contains ORDER BY
  double elapsed = 0.0;   // wall-clock seconds
  std::int64_t vm_steps = 0;
  ExecStatus status = ExecStatus::Ok;
  std::string error;
};

// True when the SQL contains ORDER BY outside string literals and comments.
bool has_order_by(std::string_view sql);

// Opens the database read-only and runs one statement. Never throws for SQL
// problems: they are reported through status.
ExecutionResult execute_sql(const std::filesystem::path& db_file, const std::string& sql,
                            std::chrono::duration<double> timeout = std::chrono::seconds(30));

// Cells compare positionally. Numbers compare by value with 1e-6 absolute
// tolerance when either side is a float; NULL equals only NULL.
bool cells_equal(const Cell& a, const Cell& b);

// Both must be Ok. Ordered gold -> sequence equality; otherwise multiset
// equality.
bool execution_match(const ExecutionResult& pred, const ExecutionResult& gold);

// 100 * matches / N. Throws EmptySetError.
double compute_ex(const std::vector<bool>& matches);

struct VesSample {
  bool match = false;
  double t_gold = 0.0;
  double t_pred = 0.0;
};

struct VesOptions {
  double clip_max = 100.0;  // bound on t_gold / t_pred
};

// sqrt(clip(t_gold / t_pred)) for a matched query, 0 otherwise.
double ves_term(const VesSample& s, const VesOptions& options = {});

// (100 / N) * sum of ves_term. Throws EmptySetError, NonPositiveTimeError.
double compute_ves(const std::vector<VesSample>& samples, const VesOptions& options = {});

bool knowledge_exact_match(std::string_view generated, std::string_view gold);

// Cosine of provider embeddings. Throws ProviderError.
double knowledge_semantic_similarity(std::string_view generated, std::string_view gold,
                                     const EmbeddingProvider& provider);

struct CoverageReport {
  double exact_match_pct = 0.0;
  double mean_best_similarity = 0.0;
  std::vector<bool> exact;
  std::vector<double> best_similarity;
};

// Throws EmptySetError when gold is empty.
CoverageReport kb_coverage(const KnowledgeBase& kb, const std::vector<std::string>& gold,
                           const EmbeddingProvider& provider);

enum class TimingSource { WallClock, VmSteps };

std::string to_string(TimingSource source);
TimingSource parse_timing_source(std::string_view s);

struct EvalConfig {
  std::size_t repeats = 3;  // executions per SQL for timing; the median is used
  VesOptions ves;
  TimingSource timing = TimingSource::WallClock;
  std::chrono::duration<double> timeout = std::chrono::seconds(30);
  std::string setting = "default";  // row label in the rendered table
  // Queries on distinct database files run concurrently when jobs > 1, unless
  // timing_isolated is set.
  std::size_t jobs = 1;
  bool timing_isolated = false;
};

struct QueryEval {
  std::string query_id;
  bool ex = false;
  double ves = 0.0;  // ves_term, not scaled by 100
  double t_gold = 0.0;
  double t_pred = 0.0;
  std::string pred_status;
  std::string gold_status;
  std::optional<bool> em;   // present when gold knowledge exists
  std::optional<double> ss;
};

struct EvalReport {
  std::string setting;
  std::string lineage;
  std::vector<QueryEval> per_query;
  double ex = 0.0;
  double ves = 0.0;
  std::optional<double> em;       // percent over queries with gold knowledge
  std::optional<double> mean_ss;  // raw cosine
  std::optional<RetrievalMetrics> retrieval;
  std::optional<CoverageReport> coverage;
  std::string timing_source;

  // Recomputes ex/ves/em/mean_ss from per_query.
  void recompute_aggregates();
};

// Throws AlignmentError when outputs and test records differ in length or
// order of query ids.
EvalReport evaluate_run(const std::vector<PipelineOutput>& outputs, const Dataset& test,
                        const EvalConfig& config, const EmbeddingProvider* provider = nullptr);

std::string report_to_json(const EvalReport& report);
// Aligned text table: Setting | EX | VES | EM | SS | MRR | Top@1 | Top@3 | Top@10.
std::string render_report_table(const EvalReport& report);

}  // namespace kbsql
