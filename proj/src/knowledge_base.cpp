#include "kbsql/knowledge_base.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/llm_client.hpp"
#include "kbsql/rng.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;

std::string to_string(KnowledgeSource source) {
  return source == KnowledgeSource::Dataset ? "dataset" : "generated";
}

std::string knowledge_id(std::string_view text) {
  return sha256_hex(normalize_knowledge(text)).substr(0, 16);
}

void KbBuildConfig::validate() const {
  if (few_shot_k < 1) throw ConfigError("few_shot_k must be >= 1");
}

bool KnowledgeBase::insert(KnowledgeEntry entry) {
  if (trim(entry.text).empty()) return false;
  entry.id = knowledge_id(entry.text);
  return entries_.emplace(entry.id, std::move(entry)).second;
}

bool KnowledgeBase::contains_text(std::string_view text) const {
  return entries_.count(knowledge_id(text)) > 0;
}

const KnowledgeEntry* KnowledgeBase::find(const std::string& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<KnowledgeEntry> KnowledgeBase::entry_list() const {
  std::vector<KnowledgeEntry> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

KnowledgeBase init_kb(const Dataset& dataset, const KbBuildConfig& config) {
  KnowledgeBase kb;
  kb.build_config = config;
  for (const auto& rec : dataset.records) {
    if (!rec.knowledge) continue;
    KnowledgeEntry e;
    e.text = *rec.knowledge;
    e.source = KnowledgeSource::Dataset;
    e.db_id = rec.schema_ref;
    kb.insert(std::move(e));
  }
  return kb;
}

// ---- example selection -------------------------------------------------------

ExampleSelector::ExampleSelector(const Dataset& dataset, const EmbeddingProvider& embedder, Options options)
    : dataset_(&dataset), embedder_(&embedder) {
  std::vector<std::string> questions;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    if (options.require_knowledge && !r.knowledge) continue;
    if (options.require_sql && !r.gold_sql) continue;
    candidates_.push_back(i);
    questions.push_back(r.query.text);
  }
  embeddings_ = embedder.embed_batch(questions);
}

std::vector<ExampleTriplet> ExampleSelector::select(std::string_view query_text, std::size_t k,
                                                    const std::optional<std::string>& exclude_id) const {
  if (k < 1) throw ConfigError("k must be >= 1");
  const Vector q = embedder_->embed(query_text);
  struct Scored {
    double score;
    std::size_t record;
  };
  std::vector<Scored> scored;
  scored.reserve(candidates_.size());
  for (std::size_t c = 0; c < candidates_.size(); ++c) {
    const auto& rec = dataset_->records[candidates_[c]];
    if (exclude_id && rec.query.id == *exclude_id) continue;
    scored.push_back({cosine(q, embeddings_[c]), candidates_[c]});
  }
  if (scored.empty()) throw InsufficientExamplesError("no candidate examples for query");
  const auto& recs = dataset_->records;
  auto better = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return recs[a.record].query.id < recs[b.record].query.id;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  std::vector<ExampleTriplet> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(recs[scored[i].record]);
  return out;
}

std::vector<ExampleTriplet> select_examples(const Query& query, const Dataset& dataset, std::size_t k,
                                            const EmbeddingProvider& embedder) {
  ExampleSelector selector(dataset, embedder, {});
  return selector.select(query.text, k, query.id);
}

// ---- expansion ----------------------------------------------------------------

std::vector<std::string> parse_knowledge_completion(std::string_view completion) {
  static const std::regex kMarker(R"(^\s*(?:\(?\d+[\).:]|[-*•])\s*)");
  std::vector<std::string> out;
  for (auto line : split_lines(completion)) {
    line = trim(line);
    if (starts_with_ci(line, "question:")) break;
    line = std::regex_replace(line, kMarker, "", std::regex_constants::format_first_only);
    if (starts_with_ci(line, "evidence:")) line = line.substr(9);
    line = trim(line);
    std::istringstream words(line);
    std::size_t count = 0;
    for (std::string w; words >> w;) ++count;
    if (count >= 3) out.push_back(std::move(line));
  }
  return out;
}

ExpandStats expand_kb(KnowledgeBase& kb, const Dataset& dataset, LlmClient& llm,
                      const KbBuildConfig& config, const EmbeddingProvider& embedder,
                      const ExpandOptions& options) {
  config.validate();
  ExpandStats stats;
  stats.samples = dataset.records.size();
  if (config.iterations == 0 || dataset.records.empty()) return stats;

  const ExampleSelector selector(dataset, embedder, ExampleSelector::Options{});

  struct Task {
    std::size_t record;
    std::size_t iteration;
    std::optional<std::string> completion;
    std::string error;
  };
  std::vector<Task> tasks;
  tasks.reserve(dataset.records.size() * config.iterations);

  // Candidate pools are computed up front on the calling thread.
  std::vector<std::vector<ExampleTriplet>> pools(dataset.records.size());
  std::vector<std::string> pool_errors(dataset.records.size());
  for (std::size_t r = 0; r < dataset.records.size(); ++r) {
    const auto& rec = dataset.records[r];
    try {
      pools[r] = selector.select(rec.query.text, 2 * config.few_shot_k, rec.query.id);
    } catch (const InsufficientExamplesError& e) {
      pool_errors[r] = e.what();
    }
    for (std::size_t i = 1; i <= config.iterations; ++i) tasks.push_back({r, i, std::nullopt, {}});
  }

  auto run_task = [&](Task& task) {
    const auto& rec = dataset.records[task.record];
    if (!pool_errors[task.record].empty()) {
      task.error = rec.query.id + ": " + pool_errors[task.record];
      return;
    }
    const auto& pool = pools[task.record];
    std::mt19937_64 rng(mix_seed(config.seed, task.record, task.iteration));
    std::vector<std::size_t> picks(pool.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    shuffle(picks, rng);
    picks.resize(std::min(config.few_shot_k, picks.size()));
    std::sort(picks.begin(), picks.end());
    shuffle(picks, rng);
    std::vector<ExampleTriplet> shots;
    shots.reserve(picks.size());
    for (auto p : picks) shots.push_back(pool[p]);
    try {
      const auto& schema = dataset.schema(rec.schema_ref);
      const auto prompt = build_knowledge_prompt(rec.query.text, schema, shots, config.prompt_budget);
      task.completion = llm.complete(prompt.text());
    } catch (const LlmError& e) {
      task.error = rec.query.id + "#" + std::to_string(task.iteration) + ": " + e.what();
    } catch (const BudgetError& e) {
      task.error = rec.query.id + "#" + std::to_string(task.iteration) + ": " + e.what();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    for (auto& t : tasks) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) run_task(tasks[i]);
      });
    }
    for (auto& w : workers) w.join();
  }

  // Single-writer commit in task order.
  for (const auto& task : tasks) {
    if (!task.completion) {
      ++stats.failures;
      if (stats.failure_messages.size() < 100) stats.failure_messages.push_back(task.error);
      continue;
    }
    ++stats.llm_calls;
    const auto& rec = dataset.records[task.record];
    for (const auto& line : parse_knowledge_completion(*task.completion)) {
      KnowledgeEntry e;
      e.text = line;
      e.source = KnowledgeSource::Generated;
      e.db_id = rec.schema_ref;
      e.origin_query_id = rec.query.id;
      e.iteration = task.iteration;
      if (kb.insert(std::move(e))) ++stats.added;
    }
  }
  return stats;
}

// ---- persistence ----------------------------------------------------------------

namespace {

json config_to_json(const KbBuildConfig& c) {
  return json{{"few_shot_k", c.few_shot_k},         {"iterations", c.iterations},
              {"seed", c.seed},                     {"llm_backend", c.llm_backend},
              {"llm_model", c.llm_model},           {"llm_temperature", c.llm_temperature},
              {"prompt_budget", c.prompt_budget}};
}

KbBuildConfig config_from_json(const json& j) {
  KbBuildConfig c;
  c.few_shot_k = j.at("few_shot_k").get<std::size_t>();
  c.iterations = j.at("iterations").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.llm_backend = j.value("llm_backend", "");
  c.llm_model = j.value("llm_model", "");
  c.llm_temperature = j.value("llm_temperature", 0.0);
  c.prompt_budget = j.value("prompt_budget", std::size_t{24000});
  return c;
}

}  // namespace

std::string serialize_kb(const KnowledgeBase& kb) {
  json header{{"kind", "kbsql-knowledge-base"},
              {"version", 1},
              {"build_config", config_to_json(kb.build_config)},
              {"lineage", kb.lineage}};
  std::string out = header.dump() + "\n";
  for (const auto& [id, e] : kb.entries()) {
    json j{{"id", e.id}, {"text", e.text}, {"source", to_string(e.source)}, {"db_id", e.db_id}};
    if (e.origin_query_id) j["origin_query_id"] = *e.origin_query_id;
    if (e.iteration) j["iteration"] = *e.iteration;
    out += j.dump() + "\n";
  }
  return out;
}

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path) { write_file(path, serialize_kb(kb)); }

KnowledgeBase load_kb(const std::filesystem::path& path) {
  KnowledgeBase kb;
  bool header_seen = false;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = json::parse(line);
      if (!header_seen) {
        if (j.value("kind", "") != "kbsql-knowledge-base") throw ParseError(where + ": missing KB header");
        if (j.value("version", 0) != 1) throw ParseError(where + ": unsupported KB version");
        kb.build_config = config_from_json(j.at("build_config"));
        kb.lineage = j.value("lineage", "");
        header_seen = true;
        continue;
      }
      KnowledgeEntry e;
      e.id = j.at("id").get<std::string>();
      e.text = j.at("text").get<std::string>();
      const auto source = j.at("source").get<std::string>();
      if (source == "dataset") {
        e.source = KnowledgeSource::Dataset;
      } else if (source == "generated") {
        e.source = KnowledgeSource::Generated;
      } else {
        throw ParseError(where + ": unknown source '" + source + "'");
      }
      e.db_id = j.value("db_id", "");
      if (j.contains("origin_query_id")) e.origin_query_id = j["origin_query_id"].get<std::string>();
      if (j.contains("iteration")) e.iteration = j["iteration"].get<std::size_t>();
      if (trim(e.text).empty()) throw ParseError(where + ": empty knowledge text");
      if (kb.find(e.id)) throw ParseError(where + ": duplicate entry id " + e.id);
      const auto expected = knowledge_id(e.text);
      if (e.id != expected) {
        throw ParseError(where + ": id " + e.id + " does not match its text (expected " + expected + ")");
      }
      kb.insert(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(where + ": " + ex.what());
    }
  }
  return kb;
}

KbStats kb_stats(const KnowledgeBase& kb) {
  KbStats s;
  for (const auto& [id, e] : kb.entries()) {
    ++s.total;
    if (e.source == KnowledgeSource::Dataset) {
      ++s.from_dataset;
    } else {
      ++s.generated;
      if (e.iteration) ++s.by_iteration[*e.iteration];
    }
    ++s.by_db[e.db_id];
  }
  return s;
}

}  // namespace kbsql
