#include "kbsql/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/llm_client.hpp"
#include "kbsql/prompts.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string clean_knowledge_completion(std::string_view completion) {
  std::string out;
  bool first = true;
  for (auto line : split_lines(completion)) {
    const auto t = trim(line);
    if (starts_with_ci(t, "question:")) break;
    if (first && t.empty()) continue;
    if (first && starts_with_ci(t, "evidence:")) line = trim(t.substr(9));
    if (!first) out += "\n";
    out += line;
    first = false;
  }
  return trim(out);
}

}  // namespace

RefinedKnowledge refine_knowledge(const Query& query, const std::vector<KnowledgeEntry>& retrieved,
                                  const DatabaseSchema& schema, LlmClient& llm, std::size_t budget) {
  RefinedKnowledge k;
  k.query_id = query.id;
  k.schema_id = schema.db_id;
  std::vector<std::string> texts;
  for (const auto& e : retrieved) {
    texts.push_back(e.text);
    k.retrieved_ids.push_back(e.id);
  }
  const auto prompt = build_refinement_prompt(query.text, schema, texts, budget);
  k.text = clean_knowledge_completion(llm.complete(prompt.text()));
  return k;
}

std::string extract_sql(std::string_view completion) {
  std::string body(completion);
  if (const auto fence = body.find("```"); fence != std::string::npos) {
    auto start = body.find('\n', fence);
    start = start == std::string::npos ? body.size() : start + 1;
    const auto close = body.find("```", start);
    body = body.substr(start, close == std::string::npos ? std::string::npos : close - start);
  }

  std::string sql;
  bool started = false;
  char quote = 0;
  for (auto line : split_lines(body)) {
    if (!started) {
      line = trim(line);
      if (line.empty()) continue;
      if (starts_with_ci(line, "sql:")) line = trim(line.substr(4));
      if (line.empty()) continue;
      started = true;
    } else if (quote == 0 && trim(line).empty()) {
      break;
    } else {
      sql += "\n";
    }
    bool terminated = false;
    for (char c : line) {
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '\'' || c == '"' || c == '`') {
        quote = c;
      } else if (c == ';') {
        terminated = true;
        break;
      }
      sql.push_back(c);
    }
    if (terminated) break;
  }
  sql = trim(sql);
  if (sql.empty()) throw EmptySqlError("completion contains no SQL");
  return sql;
}

GenerationResult generate_sql(const Query& query, const DatabaseSchema& schema, const GenerationContext& ctx) {
  if (!ctx.llm) throw ConfigError("generation context has no LLM client");
  const auto& cfg = ctx.config;
  GenerationResult result;
  result.sql.query_id = query.id;

  if (cfg.top_j > 0) {
    if (!ctx.retriever) throw ConfigError("top_j > 0 needs a retriever");
    Stopwatch sw;
    result.retrieved = ctx.retriever->retrieve(query.text, cfg.top_j);
    if (cfg.record_timings) result.timings.retrieve_ms = sw.elapsed_ms();
  }

  std::vector<KnowledgeEntry> entries;
  for (const auto& s : result.retrieved) entries.push_back(s.entry);

  if (cfg.top_j > 0 && cfg.use_refinement) {
    Stopwatch sw;
    auto refined = refine_knowledge(query, entries, schema, *ctx.llm, cfg.prompt_budget);
    if (cfg.record_timings) result.timings.refine_ms = sw.elapsed_ms();
    result.evidence = refined.text;
    result.sql.knowledge = std::move(refined);
  } else {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (i) result.evidence += "; ";
      result.evidence += entries[i].text;
    }
  }

  std::vector<ExampleTriplet> shots;
  if (ctx.sql_examples && cfg.sql_few_shot > 0 && ctx.sql_examples->pool_size() > 0) {
    shots = ctx.sql_examples->select(query.text, cfg.sql_few_shot, std::nullopt);
  }
  Stopwatch sw;
  const auto prompt = build_sql_prompt(query.text, result.evidence, schema, shots, cfg.prompt_budget);
  const auto completion = ctx.llm->complete(prompt.text());
  if (cfg.record_timings) result.timings.generate_ms = sw.elapsed_ms();
  result.sql.text = extract_sql(completion);
  return result;
}

bool PipelineOutput::operator==(const PipelineOutput& o) const {
  return query_id == o.query_id && sql == o.sql && knowledge == o.knowledge && retrieved_ids == o.retrieved_ids &&
         timings.retrieve_ms == o.timings.retrieve_ms && timings.refine_ms == o.timings.refine_ms &&
         timings.generate_ms == o.timings.generate_ms && error == o.error;
}

std::vector<PipelineOutput> run_pipeline(const Dataset& test, const GenerationContext& ctx) {
  std::vector<PipelineOutput> outputs(test.records.size());
  auto run_one = [&](std::size_t i) {
    const auto& rec = test.records[i];
    auto& out = outputs[i];
    out.query_id = rec.query.id;
    try {
      const auto& schema = test.schema(rec.schema_ref);
      auto res = generate_sql(rec.query, schema, ctx);
      out.sql = res.sql.text;
      out.knowledge = res.evidence;
      for (const auto& s : res.retrieved) out.retrieved_ids.push_back(s.entry.id);
      out.timings = res.timings;
    } catch (const Error& e) {
      out.error = e.code() + ": " + e.what();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, ctx.config.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < outputs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < outputs.size(); i = next++) run_one(i);
      });
    }
    for (auto& w : workers) w.join();
  }
  return outputs;
}

void save_outputs(const OutputsFile& file, const std::filesystem::path& path) {
  json header{{"kind", "kbsql-outputs"}, {"lineage", file.lineage}};
  header["run_config"] = file.run_config.empty() ? json::object() : json::parse(file.run_config);
  std::string text = header.dump() + "\n";
  for (const auto& o : file.outputs) {
    json j;
    j["query_id"] = o.query_id;
    j["sql"] = o.sql ? json(*o.sql) : json(nullptr);
    j["knowledge"] = o.knowledge;
    j["retrieved_ids"] = o.retrieved_ids;
    j["timings"] = {{"retrieve_ms", o.timings.retrieve_ms},
                    {"refine_ms", o.timings.refine_ms},
                    {"generate_ms", o.timings.generate_ms}};
    if (o.error) j["error"] = *o.error;
    text += j.dump() + "\n";
  }
  write_file(path, text);
}

OutputsFile load_outputs(const std::filesystem::path& path) {
  OutputsFile file;
  bool header_seen = false;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (!header_seen) {
        if (j.value("kind", "") != "kbsql-outputs") throw ParseError(path.string() + ": missing outputs header");
        file.lineage = j.value("lineage", "");
        file.run_config = j.contains("run_config") ? j["run_config"].dump() : "";
        header_seen = true;
        continue;
      }
      PipelineOutput o;
      o.query_id = j.at("query_id").get<std::string>();
      if (!j.at("sql").is_null()) o.sql = j["sql"].get<std::string>();
      o.knowledge = j.value("knowledge", "");
      o.retrieved_ids = j.value("retrieved_ids", std::vector<std::string>{});
      if (j.contains("timings")) {
        const auto& t = j["timings"];
        o.timings = {t.value("retrieve_ms", 0.0), t.value("refine_ms", 0.0), t.value("generate_ms", 0.0)};
      }
      if (j.contains("error")) o.error = j["error"].get<std::string>();
      file.outputs.push_back(std::move(o));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header_seen) throw ParseError(path.string() + ": empty outputs file");
  return file;
}

}  // namespace kbsql
