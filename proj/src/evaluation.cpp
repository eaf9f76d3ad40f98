#include "kbsql/evaluation.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;

std::string to_string(ExecStatus status) {
  switch (status) {
    case ExecStatus::Ok: return "ok";
    case ExecStatus::Error: return "error";
    case ExecStatus::Timeout: return "timeout";
  }
  return "error";
}

std::string to_string(TimingSource source) {
  return source == TimingSource::WallClock ? "wall" : "vm-steps";
}

TimingSource parse_timing_source(std::string_view s) {
  if (s == "wall") return TimingSource::WallClock;
  if (s == "vm-steps") return TimingSource::VmSteps;
  throw ConfigError("unknown timing source '" + std::string(s) + "' (expected wall or vm-steps)");
}

bool has_order_by(std::string_view sql) {
  std::string words;  // identifiers outside literals and comments, upper-cased, space separated
  for (std::size_t i = 0; i < sql.size(); ++i) {
    const char c = sql[i];
    if (c == '\'' || c == '"' || c == '`' || c == '[') {
      const char close = c == '[' ? ']' : c;
      for (++i; i < sql.size() && sql[i] != close; ++i) {
      }
      words += ' ';
    } else if (c == '-' && i + 1 < sql.size() && sql[i + 1] == '-') {
      while (i < sql.size() && sql[i] != '\n') ++i;
      words += ' ';
    } else if (c == '/' && i + 1 < sql.size() && sql[i + 1] == '*') {
      const auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? sql.size() : end + 1;
      words += ' ';
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      words += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    } else {
      words += ' ';
    }
  }
  std::string prev;
  std::size_t pos = 0;
  while (pos < words.size()) {
    const auto start = words.find_first_not_of(' ', pos);
    if (start == std::string::npos) break;
    const auto end = words.find(' ', start);
    std::string word = words.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (prev == "ORDER" && word == "BY") return true;
    prev = std::move(word);
    pos = end;
  }
  return false;
}

namespace {

struct Deadline {
  std::chrono::steady_clock::time_point at;
  bool fired = false;
};

int progress_check(void* arg) {
  auto* d = static_cast<Deadline*>(arg);
  if (std::chrono::steady_clock::now() >= d->at) {
    d->fired = true;
    return 1;
  }
  return 0;
}

}  // namespace

ExecutionResult execute_sql(const std::filesystem::path& db_file, const std::string& sql,
                            std::chrono::duration<double> timeout) {
  ExecutionResult result;
  result.ordered = has_order_by(sql);
  std::optional<sqlite::Connection> conn;
  try {
    if (!std::filesystem::exists(db_file)) throw IoError("no database at " + db_file.string());
    conn.emplace(db_file, sqlite::OpenMode::ReadOnly);
  } catch (const Error& e) {
    result.status = ExecStatus::Error;
    result.error = e.what();
    return result;
  }

  const auto start = std::chrono::steady_clock::now();
  Deadline deadline{start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout)};
  sqlite3_progress_handler(conn->handle(), 1000, &progress_check, &deadline);
  try {
    sqlite::Statement stmt(*conn, sql);
    while (stmt.step()) result.rows.push_back(stmt.row());
    result.vm_steps = stmt.vm_steps();
  } catch (const Error& e) {
    result.rows.clear();
    result.status = deadline.fired ? ExecStatus::Timeout : ExecStatus::Error;
    result.error = e.what();
  }
  sqlite3_progress_handler(conn->handle(), 0, nullptr, nullptr);
  result.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

constexpr double kFloatTolerance = 1e-6;

int type_rank(const Cell& c) {
  switch (c.index()) {
    case 0: return 0;
    case 1:
    case 2: return 1;
    case 3: return 2;
    default: return 3;
  }
}

double as_double(const Cell& c) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
  return std::get<double>(c);
}

// Strict total order used to sort rows before multiset comparison.
int compare_cells(const Cell& a, const Cell& b) {
  const int ra = type_rank(a);
  const int rb = type_rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (ra) {
    case 0: return 0;
    case 1: {
      if (a.index() == 1 && b.index() == 1) {
        const auto x = std::get<std::int64_t>(a);
        const auto y = std::get<std::int64_t>(b);
        return x < y ? -1 : (x > y ? 1 : 0);
      }
      const double x = as_double(a);
      const double y = as_double(b);
      if (x < y) return -1;
      if (x > y) return 1;
      return 0;
    }
    case 2: return std::get<std::string>(a).compare(std::get<std::string>(b));
    default: {
      const auto& x = std::get<Blob>(a).bytes;
      const auto& y = std::get<Blob>(b).bytes;
      if (x < y) return -1;
      if (y < x) return 1;
      return 0;
    }
  }
}

bool rows_equal(const Row& a, const Row& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!cells_equal(a[i], b[i])) return false;
  }
  return true;
}

std::vector<Row> sorted_rows(std::vector<Row> rows) {
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
      const int c = compare_cells(a[i], b[i]);
      if (c != 0) return c < 0;
    }
    return a.size() < b.size();
  });
  return rows;
}

}  // namespace

bool cells_equal(const Cell& a, const Cell& b) {
  if (type_rank(a) != type_rank(b)) return false;
  if (type_rank(a) == 1) {
    if (a.index() == 1 && b.index() == 1) return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
    return std::fabs(as_double(a) - as_double(b)) <= kFloatTolerance;
  }
  return a == b;
}

bool execution_match(const ExecutionResult& pred, const ExecutionResult& gold) {
  if (pred.status != ExecStatus::Ok || gold.status != ExecStatus::Ok) return false;
  if (pred.rows.size() != gold.rows.size()) return false;
  if (gold.ordered) {
    for (std::size_t i = 0; i < gold.rows.size(); ++i) {
      if (!rows_equal(pred.rows[i], gold.rows[i])) return false;
    }
    return true;
  }
  const auto p = sorted_rows(pred.rows);
  const auto g = sorted_rows(gold.rows);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!rows_equal(p[i], g[i])) return false;
  }
  return true;
}

double compute_ex(const std::vector<bool>& matches) {
  if (matches.empty()) throw EmptySetError("no queries to score");
  const auto hits = std::count(matches.begin(), matches.end(), true);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(matches.size());
}

double ves_term(const VesSample& s, const VesOptions& options) {
  if (!s.match) return 0.0;
  if (!(s.t_gold > 0.0) || !(s.t_pred > 0.0)) {
    throw NonPositiveTimeError("matched query needs positive times (gold " + format_double(s.t_gold) +
                               ", pred " + format_double(s.t_pred) + ")");
  }
  return std::sqrt(std::clamp(s.t_gold / s.t_pred, 0.0, options.clip_max));
}

double compute_ves(const std::vector<VesSample>& samples, const VesOptions& options) {
  if (samples.empty()) throw EmptySetError("no queries to score");
  double sum = 0.0;
  for (const auto& s : samples) sum += ves_term(s, options);
  return 100.0 * sum / static_cast<double>(samples.size());
}

bool knowledge_exact_match(std::string_view generated, std::string_view gold) {
  return normalize_knowledge(generated) == normalize_knowledge(gold);
}

double knowledge_semantic_similarity(std::string_view generated, std::string_view gold,
                                     const EmbeddingProvider& provider) {
  if (trim(generated).empty() || trim(gold).empty()) throw ProviderError("cannot compare empty knowledge");
  const std::vector<std::string> texts{std::string(generated), std::string(gold)};
  const auto v = provider.embed_batch(texts);
  return cosine(v[0], v[1]);
}

CoverageReport kb_coverage(const KnowledgeBase& kb, const std::vector<std::string>& gold,
                           const EmbeddingProvider& provider) {
  if (gold.empty()) throw EmptySetError("no gold knowledge to cover");
  CoverageReport report;
  std::vector<std::string> texts;
  for (const auto& [id, e] : kb.entries()) texts.push_back(e.text);
  const auto kb_vecs = texts.empty() ? std::vector<Vector>{} : provider.embed_batch(texts);
  const auto gold_vecs = provider.embed_batch(gold);
  std::size_t hits = 0;
  double ss_sum = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool exact = kb.contains_text(gold[i]);
    double best = kb_vecs.empty() ? 0.0 : -1.0;
    for (const auto& v : kb_vecs) best = std::max(best, cosine(gold_vecs[i], v));
    report.exact.push_back(exact);
    report.best_similarity.push_back(best);
    hits += exact ? 1 : 0;
    ss_sum += best;
  }
  const double n = static_cast<double>(gold.size());
  report.exact_match_pct = 100.0 * static_cast<double>(hits) / n;
  report.mean_best_similarity = ss_sum / n;
  return report;
}

void EvalReport::recompute_aggregates() {
  if (per_query.empty()) throw EmptySetError("report has no queries");
  std::vector<bool> matches;
  double ves_sum = 0.0;
  std::size_t em_n = 0;
  std::size_t em_hits = 0;
  double ss_sum = 0.0;
  std::size_t ss_n = 0;
  for (const auto& q : per_query) {
    matches.push_back(q.ex);
    ves_sum += q.ves;
    if (q.em) {
      ++em_n;
      em_hits += *q.em ? 1 : 0;
    }
    if (q.ss) {
      ++ss_n;
      ss_sum += *q.ss;
    }
  }
  ex = compute_ex(matches);
  ves = 100.0 * ves_sum / static_cast<double>(per_query.size());
  em = em_n ? std::optional<double>(100.0 * static_cast<double>(em_hits) / static_cast<double>(em_n)) : std::nullopt;
  mean_ss = ss_n ? std::optional<double>(ss_sum / static_cast<double>(ss_n)) : std::nullopt;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// First execution decides rows and status; the timing is the median over all runs.
std::pair<ExecutionResult, double> timed_execution(const std::filesystem::path& db, const std::string& sql,
                                                   const EvalConfig& config) {
  auto first = execute_sql(db, sql, config.timeout);
  if (first.status != ExecStatus::Ok) return {std::move(first), 0.0};
  auto time_of = [&](const ExecutionResult& r) {
    return config.timing == TimingSource::WallClock ? r.elapsed : static_cast<double>(r.vm_steps);
  };
  std::vector<double> times{time_of(first)};
  for (std::size_t i = 1; i < config.repeats; ++i) times.push_back(time_of(execute_sql(db, sql, config.timeout)));
  return {std::move(first), median(std::move(times))};
}

}  // namespace

EvalReport evaluate_run(const std::vector<PipelineOutput>& outputs, const Dataset& test, const EvalConfig& config,
                        const EmbeddingProvider* provider) {
  if (outputs.empty()) throw AlignmentError("no outputs to evaluate");
  if (outputs.size() != test.records.size()) {
    throw AlignmentError(std::to_string(outputs.size()) + " outputs for " + std::to_string(test.records.size()) +
                         " test records");
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].query_id != test.records[i].query.id) {
      throw AlignmentError("output " + std::to_string(i) + " is for query " + outputs[i].query_id + ", expected " +
                           test.records[i].query.id);
    }
  }
  if (config.repeats < 1) throw ConfigError("repeats must be >= 1");

  EvalReport report;
  report.setting = config.setting;
  report.timing_source = to_string(config.timing);
  report.per_query.resize(outputs.size());

  auto score_one = [&](std::size_t i) {
    const auto& rec = test.records[i];
    const auto& out = outputs[i];
    auto& q = report.per_query[i];
    q.query_id = out.query_id;
    const auto& schema = test.schema(rec.schema_ref);
    if (!schema.db_file) throw IoError("schema " + schema.db_id + " has no database file");
    if (!rec.gold_sql) throw ConfigError("test record " + rec.query.id + " has no gold SQL");

    auto [gold, t_gold] = timed_execution(*schema.db_file, *rec.gold_sql, config);
    q.gold_status = to_string(gold.status);
    if (out.sql) {
      auto pred = execute_sql(*schema.db_file, *out.sql, config.timeout);
      q.pred_status = to_string(pred.status);
      q.ex = execution_match(pred, gold);
      if (q.ex) {
        q.t_gold = t_gold;
        q.t_pred = timed_execution(*schema.db_file, *out.sql, config).second;
      }
    } else {
      q.pred_status = "missing";
    }
    q.ves = ves_term({q.ex, q.t_gold, q.t_pred}, config.ves);
  };

  // Knowledge metrics are cheap and use the provider, which may not be thread-safe.
  auto knowledge_one = [&](std::size_t i) {
    const auto& rec = test.records[i];
    auto& q = report.per_query[i];
    if (!rec.knowledge) return;
    q.em = knowledge_exact_match(outputs[i].knowledge, *rec.knowledge);
    if (provider) {
      q.ss = trim(outputs[i].knowledge).empty()
                 ? 0.0
                 : knowledge_semantic_similarity(outputs[i].knowledge, *rec.knowledge, *provider);
    }
  };

  if (config.jobs <= 1 || config.timing_isolated) {
    for (std::size_t i = 0; i < outputs.size(); ++i) score_one(i);
  } else {
    // Executions on one database file stay sequential; distinct files run in parallel.
    std::map<std::string, std::vector<std::size_t>> by_db;
    for (std::size_t i = 0; i < outputs.size(); ++i) by_db[test.records[i].schema_ref].push_back(i);
    std::vector<const std::vector<std::size_t>*> groups;
    for (const auto& [db, idx] : by_db) groups.push_back(&idx);
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> workers;
    const std::size_t n = std::min(config.jobs, groups.size());
    for (std::size_t w = 0; w < n; ++w) {
      workers.emplace_back([&] {
        for (std::size_t g = next++; g < groups.size(); g = next++) {
          try {
            for (auto i : *groups[g]) score_one(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) knowledge_one(i);

  report.recompute_aggregates();
  return report;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  j["kind"] = "kbsql-eval-report";
  j["setting"] = report.setting;
  j["lineage"] = report.lineage;
  j["timing_source"] = report.timing_source;
  j["aggregates"] = {{"ex", report.ex}, {"ves", report.ves}, {"em", opt_json(report.em)},
                     {"mean_ss", opt_json(report.mean_ss)}};
  if (report.retrieval) {
    json top = json::object();
    for (const auto& [k, v] : report.retrieval->top_at) top[std::to_string(k)] = v;
    j["retrieval"] = {{"mrr", report.retrieval->mrr}, {"top_at", top}, {"queries", report.retrieval->queries}};
  } else {
    j["retrieval"] = nullptr;
  }
  if (report.coverage) {
    j["coverage"] = {{"exact_match_pct", report.coverage->exact_match_pct},
                     {"mean_best_similarity", report.coverage->mean_best_similarity}};
  } else {
    j["coverage"] = nullptr;
  }
  json rows = json::array();
  for (const auto& q : report.per_query) {
    json r{{"query_id", q.query_id}, {"ex", q.ex ? 1 : 0}, {"ves", q.ves}, {"t_gold", q.t_gold},
           {"t_pred", q.t_pred}, {"pred_status", q.pred_status}, {"gold_status", q.gold_status}};
    r["em"] = q.em ? json(*q.em ? 1 : 0) : json(nullptr);
    r["ss"] = opt_json(q.ss);
    rows.push_back(std::move(r));
  }
  j["per_query"] = std::move(rows);
  return j.dump(2) + "\n";
}

namespace {

std::string fixed2(std::optional<double> v) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

}  // namespace

std::string render_report_table(const EvalReport& report) {
  std::vector<std::string> header{"Setting", "EX", "VES", "EM", "SS", "MRR", "Top@1", "Top@3", "Top@10"};
  std::optional<double> mrr, t1, t3, t10;
  if (report.retrieval) {
    mrr = report.retrieval->mrr;
    auto at = [&](std::size_t k) -> std::optional<double> {
      auto it = report.retrieval->top_at.find(k);
      if (it == report.retrieval->top_at.end()) return std::nullopt;
      return 100.0 * it->second;
    };
    t1 = at(1);
    t3 = at(3);
    t10 = at(10);
  }
  std::optional<double> ss;
  if (report.mean_ss) ss = 100.0 * *report.mean_ss;
  std::vector<std::string> row{report.setting, fixed2(report.ex), fixed2(report.ves), fixed2(report.em), fixed2(ss)};
  if (mrr) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", *mrr);
    row.emplace_back(buf);
  } else {
    row.emplace_back("-");
  }
  row.push_back(fixed2(t1));
  row.push_back(fixed2(t3));
  row.push_back(fixed2(t10));

  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = std::max(header[i].size(), row[i].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += " | ";
      const auto pad = std::string(width[i] - cells[i].size(), ' ');
      s += i == 0 ? cells[i] + pad : pad + cells[i];
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string sep;
  for (std::size_t i = 0; i < width.size(); ++i) {
    if (i) sep += "-+-";
    sep += std::string(width[i], '-');
  }
  std::string out = line(header) + sep + "\n" + line(row);
  if (report.coverage) {
    out += "KB coverage: " + fixed2(report.coverage->exact_match_pct) + "% exact, mean best SS " +
           fixed2(100.0 * report.coverage->mean_best_similarity) + "\n";
  }
  return out;
}

}  // namespace kbsql
