#include "kbsql/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/rng.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;

std::string to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::Overlap: return "overlap";
    case Scenario::NonOverlap: return "non-overlap";
    case Scenario::CrossDataset: return "cross-dataset";
  }
  return "overlap";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "overlap") return Scenario::Overlap;
  if (s == "non-overlap") return Scenario::NonOverlap;
  if (s == "cross-dataset") return Scenario::CrossDataset;
  throw ConfigError("unknown scenario '" + std::string(s) + "' (expected overlap, non-overlap or cross-dataset)");
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return workdir / p;
}

void RunConfig::validate() const {
  if (few_shot_k < 1) throw ConfigError("few-shot-k must be >= 1");
  if (embedder != "hash" && embedder != "http") throw ConfigError("embedder must be hash or http");
  if (embedder == "hash" && embed_dim < 1) throw ConfigError("embed-dim must be >= 1");
  if (embedder == "http" && embed_endpoint.empty()) throw ConfigError("http embedder needs --embed-endpoint");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (lr < 0.0) throw ConfigError("lr must be >= 0");
  if (batch_size < 2) throw ConfigError("batch-size must be >= 2");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw ConfigError("validation-fraction must be in [0, 1)");
  }
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
  if (!(exec_timeout_s > 0.0)) throw ConfigError("exec-timeout must be > 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  llm.validate();
}

namespace {

std::string file_digest(const RunConfig& config, const std::filesystem::path& p) {
  if (p.empty()) return "";
  return sha256_hex(read_file(config.resolve(p))).substr(0, 16);
}

json dataset_section(const RunConfig& c) {
  return {{"format", to_string(c.format)},
          {"scenario", to_string(c.scenario)},
          {"train", file_digest(c, c.train)},
          {"test", file_digest(c, c.test)}};
}

json embedder_section(const RunConfig& c) {
  json j{{"kind", c.embedder}};
  if (c.embedder == "hash") {
    j["dim"] = c.embed_dim;
  } else {
    j["model"] = c.embed_model;
  }
  return j;
}

json llm_section(const RunConfig& c) {
  return {{"backend", to_string(c.llm.backend)},
          {"model", c.llm.model},
          {"temperature", c.llm.temperature},
          {"max_tokens", c.llm.max_tokens},
          {"system_prompt", c.llm.system_prompt}};
}

json kb_section(const RunConfig& c) {
  return {{"few_shot_k", c.few_shot_k},
          {"iterations", c.iterations},
          {"expand_split", to_string(c.expand_split)},
          {"prompt_budget", c.prompt_budget}};
}

json training_section(const RunConfig& c) {
  return {{"tau", c.tau},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"validation_fraction", c.validation_fraction}};
}

json pipeline_section(const RunConfig& c) {
  return {{"top_j", c.top_j},
          {"prompt_budget", c.prompt_budget},
          {"use_refinement", c.use_refinement},
          {"sql_few_shot", c.sql_few_shot},
          {"use_head", c.use_head}};
}

}  // namespace

std::string lineage_json(const RunConfig& c, Stage stage) {
  json j{{"dataset", dataset_section(c)}, {"embedder", embedder_section(c)}, {"seed", c.seed}};
  switch (stage) {
    case Stage::KnowledgeBase:
      j["stage"] = "knowledge-base";
      j["kb"] = kb_section(c);
      j["llm"] = llm_section(c);
      break;
    case Stage::Head:
      j["stage"] = "head";
      j["training"] = training_section(c);
      break;
    case Stage::Outputs:
      j["stage"] = "outputs";
      j["kb"] = kb_section(c);
      j["llm"] = llm_section(c);
      j["training"] = training_section(c);
      j["pipeline"] = pipeline_section(c);
      break;
  }
  return j.dump();
}

std::string lineage_hash(const RunConfig& config, Stage stage) {
  return sha256_hex(lineage_json(config, stage)).substr(0, 16);
}

ScenarioData load_scenario(const RunConfig& config) {
  if (config.train.empty()) throw ConfigError("--train is required");
  if (config.test.empty()) throw ConfigError("--test is required");
  auto paths = [&](const std::filesystem::path& records, const std::filesystem::path& dbs) {
    DatasetPaths p{config.resolve(records), std::nullopt};
    if (!dbs.empty()) p.databases = config.resolve(dbs);
    return p;
  };
  ScenarioData data;
  data.train = load_dataset(paths(config.train, config.train_db_dir), config.format, Split::Train);
  data.test = load_dataset(paths(config.test, config.test_db_dir), config.format, Split::Test);

  const auto test_dbs = data.test.db_ids();
  switch (config.scenario) {
    case Scenario::Overlap: {
      const auto train_dbs = data.train.db_ids();
      const bool shared = std::any_of(test_dbs.begin(), test_dbs.end(),
                                      [&](const std::string& db) { return train_dbs.count(db) > 0; });
      if (!shared) throw ConfigError("overlap scenario, but no test database appears in the train split");
      break;
    }
    case Scenario::NonOverlap: {
      std::erase_if(data.train.records,
                    [&](const ExampleTriplet& r) { return test_dbs.count(r.schema_ref) > 0; });
      std::erase_if(data.train.schemas, [&](const auto& kv) { return test_dbs.count(kv.first) > 0; });
      if (data.train.records.empty()) {
        throw ConfigError("non-overlap scenario leaves no train records outside the test databases");
      }
      break;
    }
    case Scenario::CrossDataset: break;
  }
  return data;
}

std::shared_ptr<const EmbeddingProvider> make_embedder(const RunConfig& config) {
  if (config.embedder == "http") {
    HttpEmbeddingConfig hc;
    hc.endpoint = config.embed_endpoint;
    hc.model = config.embed_model;
    hc.api_key = config.embed_api_key;
    return std::make_shared<HttpEmbeddingProvider>(hc);
  }
  return std::make_shared<HashEmbeddingProvider>(config.embed_dim);
}

namespace {

void check_lineage(const RunConfig& config, const std::string& what, const std::string& found, Stage stage) {
  const auto expected = lineage_hash(config, stage);
  if (found == expected || config.force) return;
  throw LineageError(what + " has lineage " + (found.empty() ? "<none>" : found) + ", current settings give " +
                     expected + " (rerun the producing command or pass --force)");
}

void require_artifact(const std::filesystem::path& p, const std::string& what, const std::string& producer) {
  if (!std::filesystem::exists(p)) {
    throw MissingArtifactError(what + " not found at " + p.string() + " (run " + producer + " first)");
  }
}

KnowledgeBase load_checked_kb(const RunConfig& config) {
  const auto path = config.resolve(config.kb);
  require_artifact(path, "knowledge base", "build-kb");
  auto kb = load_kb(path);
  check_lineage(config, "knowledge base " + path.string(), kb.lineage, Stage::KnowledgeBase);
  return kb;
}

std::optional<ProjectionHead> load_checked_head(const RunConfig& config) {
  if (!config.use_head) return std::nullopt;
  const auto path = config.resolve(config.head);
  require_artifact(path, "projection head", "train-retriever");
  auto head = load_head(path);
  check_lineage(config, "projection head " + path.string(), head.lineage, Stage::Head);
  return head;
}

Retriever make_retriever(const RunConfig& config, const KnowledgeBase& kb,
                         std::shared_ptr<const EmbeddingProvider> provider) {
  auto head = load_checked_head(config);
  auto index = build_index(kb, *provider, head ? &*head : nullptr);
  return Retriever(std::move(provider), std::move(head), std::move(index));
}

LlmConfig resolved_llm(const RunConfig& config) {
  auto llm = config.llm;
  if (!llm.fixtures.empty()) llm.fixtures = config.resolve(llm.fixtures);
  return llm;
}

std::unique_ptr<LlmClient> make_client(const RunConfig& config, const BackendFactory& factory) {
  const auto llm = resolved_llm(config);
  if (factory) return std::make_unique<LlmClient>(llm, factory(llm));
  return make_llm_client(llm);
}

void write_call_logs(const RunConfig& config, const LlmClient& client) {
  if (!config.ledger.empty()) client.ledger().save(config.resolve(config.ledger));
  if (!config.record_fixtures.empty()) client.ledger().save_fixtures(config.resolve(config.record_fixtures));
}

std::string default_setting(const RunConfig& config) {
  if (config.top_j == 0) return "no-knowledge";
  return config.use_refinement ? "retrieval+refinement" : "retrieval";
}

}  // namespace

BuildKbResult cmd_build_kb(const RunConfig& config, const BackendFactory& factory) {
  config.validate();
  const auto data = load_scenario(config);
  KbBuildConfig bc;
  bc.few_shot_k = config.few_shot_k;
  bc.iterations = config.iterations;
  bc.seed = config.seed;
  bc.llm_backend = to_string(config.llm.backend);
  bc.llm_model = config.llm.model;
  bc.llm_temperature = config.llm.temperature;
  bc.prompt_budget = config.prompt_budget;
  bc.validate();

  BuildKbResult result;
  auto kb = init_kb(data.train, bc);
  kb.lineage = lineage_hash(config, Stage::KnowledgeBase);
  result.initial = kb_stats(kb);

  const auto provider = make_embedder(config);
  auto client = make_client(config, factory);
  const auto& source = config.expand_split == Split::Train ? data.train : data.test;
  result.expand = expand_kb(kb, source, *client, bc, *provider, ExpandOptions{config.jobs});
  result.final = kb_stats(kb);
  save_kb(kb, config.resolve(config.kb));
  write_call_logs(config, *client);
  return result;
}

TrainResult cmd_train_retriever(const RunConfig& config) {
  config.validate();
  const auto data = load_scenario(config);
  std::vector<TrainingPair> pairs;
  for (const auto& r : data.train.records) {
    if (r.knowledge) pairs.push_back({r.query.text, *r.knowledge, {}});
  }
  std::vector<TrainingPair> train = pairs;
  std::vector<TrainingPair> validation;
  const auto held = static_cast<std::size_t>(config.validation_fraction * static_cast<double>(pairs.size()));
  if (held >= 2 && pairs.size() - held >= 2) {
    std::mt19937_64 rng(mix_seed(config.seed, 0x7261696eULL));
    kbsql::shuffle(pairs, rng);
    validation.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(held));
    train.assign(pairs.begin() + static_cast<std::ptrdiff_t>(held), pairs.end());
  }

  TrainConfig tc;
  tc.batch_size = config.batch_size;
  tc.epochs = config.epochs;
  tc.learning_rate = config.lr;
  tc.temperature = config.tau;
  tc.seed = config.seed;
  const auto provider = make_embedder(config);
  auto result = train_head(train, *provider, tc, validation);
  result.head.lineage = lineage_hash(config, Stage::Head);
  save_head(result.head, config.resolve(config.head));
  return result;
}

std::vector<ScoredEntry> cmd_retrieve(const RunConfig& config, const std::string& query) {
  config.validate();
  if (config.top_j < 1) throw ConfigError("retrieve needs top-j >= 1");
  const auto kb = load_checked_kb(config);
  const auto retriever = make_retriever(config, kb, make_embedder(config));
  return retriever.retrieve(query, config.top_j);
}

OutputsFile cmd_generate(const RunConfig& config, const BackendFactory& factory) {
  config.validate();
  const auto data = load_scenario(config);
  const auto provider = make_embedder(config);
  std::optional<Retriever> retriever;
  if (config.top_j > 0) {
    const auto kb = load_checked_kb(config);
    retriever.emplace(make_retriever(config, kb, provider));
  }
  const ExampleSelector examples(data.train, *provider, {true, true});
  auto client = make_client(config, factory);

  GenerationContext ctx;
  ctx.retriever = retriever ? &*retriever : nullptr;
  ctx.sql_examples = &examples;
  ctx.llm = client.get();
  ctx.config.top_j = config.top_j;
  ctx.config.prompt_budget = config.prompt_budget;
  ctx.config.use_refinement = config.use_refinement;
  ctx.config.sql_few_shot = config.sql_few_shot;
  ctx.config.jobs = config.jobs;
  ctx.config.record_timings = !client->backend().deterministic();

  OutputsFile file;
  file.lineage = lineage_hash(config, Stage::Outputs);
  file.run_config = lineage_json(config, Stage::Outputs);
  file.outputs = run_pipeline(data.test, ctx);
  save_outputs(file, config.resolve(config.outputs));
  write_call_logs(config, *client);
  return file;
}

EvalReport cmd_evaluate(const RunConfig& config) {
  config.validate();
  const auto data = load_scenario(config);
  const auto outputs_path = config.resolve(config.outputs);
  require_artifact(outputs_path, "outputs", "generate");
  const auto outputs = load_outputs(outputs_path);
  check_lineage(config, "outputs " + outputs_path.string(), outputs.lineage, Stage::Outputs);

  EvalConfig ec;
  ec.repeats = config.repeats;
  ec.ves.clip_max = config.clip;
  ec.timing = config.timing;
  ec.timeout = std::chrono::duration<double>(config.exec_timeout_s);
  ec.setting = config.setting.empty() ? default_setting(config) : config.setting;
  ec.jobs = config.jobs;
  ec.timing_isolated = config.timing_isolated;
  const auto provider = make_embedder(config);
  auto report = evaluate_run(outputs.outputs, data.test, ec, provider.get());
  report.lineage = outputs.lineage;

  if (config.kb_metrics) {
    const auto kb = load_checked_kb(config);
    std::vector<std::string> gold;
    std::vector<LabeledQuery> labeled;
    for (const auto& r : data.test.records) {
      if (!r.knowledge) continue;
      gold.push_back(*r.knowledge);
      const auto id = knowledge_id(*r.knowledge);
      if (kb.find(id)) labeled.push_back({r.query.text, {id}});
    }
    if (!gold.empty()) report.coverage = kb_coverage(kb, gold, *provider);
    if (!labeled.empty()) {
      const auto retriever = make_retriever(config, kb, provider);
      report.retrieval = eval_retrieval(retriever, labeled);
    }
  }
  write_file(config.resolve(config.report), report_to_json(report));
  return report;
}

KbStats cmd_stats(const RunConfig& config) {
  const auto path = config.resolve(config.kb);
  require_artifact(path, "knowledge base", "build-kb");
  return kb_stats(load_kb(path));
}

namespace {

// Section headers only group keys; every key is a top-level flag name.
class SectionedConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    std::vector<CLI::ConfigItem> flat;
    for (auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      item.parents.clear();
      flat.push_back(std::move(item));
    }
    return flat;
  }
};

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

void emit_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << "error: " << json{{"code", code}, {"message", message}}.dump() << "\n";
}

void print_stats(std::ostream& out, const KbStats& s) {
  out << "entries: " << s.total << " (dataset " << s.from_dataset << ", generated " << s.generated << ")\n";
  for (const auto& [db, n] : s.by_db) out << "  db " << db << ": " << n << "\n";
  for (const auto& [it, n] : s.by_iteration) out << "  iteration " << it << ": " << n << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const BackendFactory& factory) {
  RunConfig cfg;
  std::string format = "bird", scenario = "overlap", expand_split = "train", llm_backend = "mock", timing = "wall";
  double llm_timeout_s = 60.0, backoff_s = 1.0;
  std::string fixtures;
  bool no_head = false, no_refinement = false, no_kb_metrics = false;
  std::string query;

  CLI::App app{"Knowledge-base augmented text-to-SQL: build, retrieve, generate, evaluate.", "kbsql"};
  app.config_formatter(std::make_shared<SectionedConfig>());
  auto* config_opt =
      app.set_config("--config", "", "TOML/INI run configuration. Sections group keys; keys are flag names.");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  auto* workdir_opt =
      app.add_option("--workdir", cfg.workdir, "Root for every relative path (default: the config file's directory)");
  app.add_option("--train", cfg.train, "Train split record file (JSON array)")->group("Dataset");
  app.add_option("--test", cfg.test, "Test split record file (JSON array)")->group("Dataset");
  app.add_option("--train-db-dir", cfg.train_db_dir, "Train databases (default: databases/ next to --train)")
      ->group("Dataset");
  app.add_option("--test-db-dir", cfg.test_db_dir, "Test databases (default: databases/ next to --test)")
      ->group("Dataset");
  app.add_option("--format", format, "Record format: bird | spider")->capture_default_str()->group("Dataset");
  app.add_option("--scenario", scenario, "overlap | non-overlap | cross-dataset")
      ->capture_default_str()
      ->group("Dataset");

  app.add_option("--kb", cfg.kb, "Knowledge base file")->capture_default_str()->group("Artifacts");
  app.add_option("--head", cfg.head, "Projection head file")->capture_default_str()->group("Artifacts");
  app.add_flag("--no-head", no_head, "Retrieve with raw provider embeddings")->group("Artifacts");
  app.add_option("--outputs", cfg.outputs, "Generation outputs file")->capture_default_str()->group("Artifacts");
  app.add_option("--report", cfg.report, "Evaluation report (JSON)")->capture_default_str()->group("Artifacts");
  app.add_option("--ledger", cfg.ledger, "Write every LLM call to this JSONL file")->group("Artifacts");
  app.add_option("--record-fixtures", cfg.record_fixtures, "Write successful LLM calls as mock fixtures")
      ->group("Artifacts");

  app.add_option("--few-shot-k", cfg.few_shot_k, "Examples per knowledge-generation prompt")
      ->capture_default_str()
      ->group("Knowledge base");
  app.add_option("--iterations", cfg.iterations, "Generation passes over the dataset")
      ->capture_default_str()
      ->group("Knowledge base");
  app.add_option("--expand-split", expand_split, "Split whose records drive generation: train | test")
      ->capture_default_str()
      ->group("Knowledge base");

  app.add_option("--embedder", cfg.embedder, "hash | http")->capture_default_str()->group("Embedding");
  app.add_option("--embed-dim", cfg.embed_dim, "Hash embedding size")->capture_default_str()->group("Embedding");
  app.add_option("--embed-endpoint", cfg.embed_endpoint, "Embedding service base URL")
      ->envname("KBSQL_EMBED_ENDPOINT")
      ->group("Embedding");
  app.add_option("--embed-model", cfg.embed_model, "Embedding model name")->group("Embedding");

  app.add_option("--tau", cfg.tau, "InfoNCE temperature")->capture_default_str()->group("Retriever");
  app.add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str()->group("Retriever");
  app.add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str()->group("Retriever");
  app.add_option("--batch-size", cfg.batch_size, "Training batch size")->capture_default_str()->group("Retriever");
  app.add_option("--validation-fraction", cfg.validation_fraction, "Share of pairs held out for model selection")
      ->capture_default_str()
      ->group("Retriever");
  app.add_option("--top-j", cfg.top_j, "Entries retrieved per query (0: no knowledge)")
      ->capture_default_str()
      ->group("Retriever");

  app.add_option("--llm", llm_backend, "http | mock")->capture_default_str()->group("LLM");
  app.add_option("--model", cfg.llm.model, "Model name sent to the endpoint")->group("LLM");
  app.add_option("--endpoint", cfg.llm.endpoint, "Chat-completions base URL")
      ->envname("KBSQL_LLM_ENDPOINT")
      ->group("LLM");
  app.add_option("--fixtures", fixtures, "Mock fixture file")->group("LLM");
  app.add_option("--system-prompt", cfg.llm.system_prompt, "System message")->group("LLM");
  app.add_option("--temperature", cfg.llm.temperature, "Sampling temperature")->capture_default_str()->group("LLM");
  app.add_option("--max-tokens", cfg.llm.max_tokens, "Completion token cap")->capture_default_str()->group("LLM");
  app.add_option("--timeout", llm_timeout_s, "Per-call timeout in seconds")->capture_default_str()->group("LLM");
  app.add_option("--retries", cfg.llm.retry.attempts, "Attempts per call")->capture_default_str()->group("LLM");
  app.add_option("--backoff", backoff_s, "Initial retry backoff in seconds")->capture_default_str()->group("LLM");
  app.add_option("--max-inflight", cfg.llm.max_in_flight, "Concurrent LLM calls")->capture_default_str()->group("LLM");
  app.add_option("--max-context", cfg.llm.max_context_chars, "Longest accepted prompt in characters")
      ->capture_default_str()
      ->group("LLM");

  app.add_option("--prompt-budget", cfg.prompt_budget, "Prompt size cap in characters")
      ->capture_default_str()
      ->group("Pipeline");
  app.add_flag("--no-refinement", no_refinement, "Use retrieved entries as evidence directly")->group("Pipeline");
  app.add_option("--sql-few-shot", cfg.sql_few_shot, "Examples per SQL prompt")->capture_default_str()->group("Pipeline");

  app.add_option("--timing", timing, "VES time source: wall | vm-steps")->capture_default_str()->group("Evaluation");
  app.add_option("--repeats", cfg.repeats, "Executions per SQL for timing")->capture_default_str()->group("Evaluation");
  app.add_option("--clip", cfg.clip, "Upper bound on the time ratio")->capture_default_str()->group("Evaluation");
  app.add_option("--exec-timeout", cfg.exec_timeout_s, "SQL execution timeout in seconds")
      ->capture_default_str()
      ->group("Evaluation");
  app.add_flag("--timing-isolated", cfg.timing_isolated, "Never run executions concurrently")->group("Evaluation");
  app.add_flag("--no-kb-metrics", no_kb_metrics, "Skip coverage and retrieval metrics")->group("Evaluation");
  app.add_option("--setting", cfg.setting, "Row label in the report table")->group("Evaluation");
  app.add_flag("--force", cfg.force, "Accept artifacts whose lineage differs")->group("Evaluation");

  app.add_option("--seed", cfg.seed, "Seed for sampling and training")->capture_default_str()->group("Run");
  app.add_option("--jobs", cfg.jobs, "Worker threads")->capture_default_str()->group("Run");

  auto* build = app.add_subcommand("build-kb", "Seed the knowledge base from the train split and expand it");
  auto* train = app.add_subcommand("train-retriever", "Fit the projection head on (question, evidence) pairs");
  auto* retrieve = app.add_subcommand("retrieve", "Print the top-j entries for a question");
  retrieve->add_option("query", query, "Question text")->required();
  auto* generate = app.add_subcommand("generate", "Produce SQL for every test record");
  auto* evaluate = app.add_subcommand("evaluate", "Score generated SQL and knowledge");
  auto* stats = app.add_subcommand("stats", "Summarize a knowledge base");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    emit_error(err, "usage-error", e.what());
    return 2;
  }

  try {
    if (workdir_opt->count() == 0 && config_opt->count() > 0) {
      cfg.workdir = std::filesystem::path(config_opt->as<std::string>()).parent_path();
      if (cfg.workdir.empty()) cfg.workdir = ".";
    }
    cfg.format = parse_dataset_format(format);
    cfg.scenario = parse_scenario(scenario);
    cfg.expand_split = parse_split(expand_split);
    cfg.llm.backend = parse_llm_backend(llm_backend);
    cfg.timing = parse_timing_source(timing);
    cfg.llm.fixtures = fixtures;
    cfg.llm.timeout = std::chrono::milliseconds(static_cast<long long>(llm_timeout_s * 1000.0));
    cfg.llm.retry.initial_backoff = std::chrono::milliseconds(static_cast<long long>(backoff_s * 1000.0));
    cfg.use_head = !no_head;
    cfg.use_refinement = !no_refinement;
    cfg.kb_metrics = !no_kb_metrics;
    if (const char* key = std::getenv("KBSQL_LLM_API_KEY")) cfg.llm.api_key = key;
    if (const char* key = std::getenv("KBSQL_EMBED_API_KEY")) cfg.embed_api_key = key;

    if (build->parsed()) {
      const auto r = cmd_build_kb(cfg, factory);
      out << "kb: " << cfg.resolve(cfg.kb).string() << "\n";
      print_stats(out, r.final);
      out << "expansion: " << r.expand.samples << " samples, " << r.expand.llm_calls << " llm calls, "
          << r.expand.failures << " failures, " << r.expand.added << " added\n";
      for (const auto& m : r.expand.failure_messages) err << "warning: " << m << "\n";
    } else if (train->parsed()) {
      const auto r = cmd_train_retriever(cfg);
      out << "epoch  loss       heldout_mrr\n";
      for (const auto& e : r.history) {
        char line[96];
        std::snprintf(line, sizeof line, "%-6zu %-10.6f %.4f\n", e.epoch, e.mean_loss, e.heldout_mrr);
        out << line;
      }
      out << "best epoch: " << r.best_epoch << "\n";
      out << "head: " << cfg.resolve(cfg.head).string() << "\n";
    } else if (retrieve->parsed()) {
      const auto hits = cmd_retrieve(cfg, query);
      for (std::size_t i = 0; i < hits.size(); ++i) {
        out << (i + 1) << "\t" << fixed(hits[i].score, 4) << "\t" << hits[i].entry.id << "\t" << hits[i].entry.text
            << "\n";
      }
    } else if (generate->parsed()) {
      const auto file = cmd_generate(cfg, factory);
      const auto failed = std::count_if(file.outputs.begin(), file.outputs.end(),
                                        [](const PipelineOutput& o) { return o.error.has_value(); });
      for (const auto& o : file.outputs) {
        if (o.error) err << "warning: query " << o.query_id << ": " << *o.error << "\n";
      }
      out << "outputs: " << cfg.resolve(cfg.outputs).string() << " (" << file.outputs.size() << " queries, "
          << failed << " failed)\n";
    } else if (evaluate->parsed()) {
      const auto report = cmd_evaluate(cfg);
      out << render_report_table(report);
      out << "report: " << cfg.resolve(cfg.report).string() << "\n";
    } else if (stats->parsed()) {
      print_stats(out, cmd_stats(cfg));
    }
  } catch (const ConfigError& e) {
    emit_error(err, e.code(), e.what());
    return 2;
  } catch (const Error& e) {
    emit_error(err, e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error(err, "internal-error", e.what());
    return 1;
  }
  return 0;
}

}  // namespace kbsql
