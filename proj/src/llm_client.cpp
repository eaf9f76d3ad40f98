#include "kbsql/llm_client.hpp"

#include <algorithm>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "kbsql/error.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

using nlohmann::json;

std::string to_string(LlmBackendKind kind) { return kind == LlmBackendKind::Http ? "http" : "mock"; }

LlmBackendKind parse_llm_backend(std::string_view s) {
  if (s == "http") return LlmBackendKind::Http;
  if (s == "mock") return LlmBackendKind::Mock;
  throw ConfigError("unknown llm backend '" + std::string(s) + "'");
}

void LlmConfig::validate() const {
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  if (retry.attempts < 1) throw ConfigError("retry attempts must be >= 1");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (max_context_chars == 0) throw ConfigError("max_context_chars must be positive");
  if (backend == LlmBackendKind::Http && endpoint.empty()) throw ConfigError("llm endpoint is not set");
}

// ---- ledger ----------------------------------------------------------------

void CallLedger::append(LedgerRecord record) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(record));
}

std::vector<LedgerRecord> CallLedger::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t CallLedger::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

void CallLedger::clear() {
  std::lock_guard lock(mutex_);
  records_.clear();
}

void CallLedger::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& r : records()) {
    json j;
    j["prompt_sha256"] = r.prompt_sha256;
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
    j["latency_ms"] = r.latency_ms;
    j["backend"] = r.backend;
    j["ok"] = r.ok;
    if (!r.error.empty()) j["error"] = r.error;
    out += j.dump() + "\n";
  }
  write_file(path, out);
}

std::vector<LedgerRecord> CallLedger::load(const std::filesystem::path& path) {
  std::vector<LedgerRecord> ledger;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      LedgerRecord r;
      r.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
      r.prompt = j.value("prompt", "");
      r.completion = j.value("completion", "");
      r.latency_ms = j.value("latency_ms", 0.0);
      r.backend = j.value("backend", "");
      r.ok = j.value("ok", true);
      r.error = j.value("error", "");
      ledger.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ledger;
}

void CallLedger::save_fixtures(const std::filesystem::path& path, bool include_prompts) const {
  std::map<std::string, const LedgerRecord*> by_hash;
  const auto all = records();
  for (const auto& r : all) {
    if (r.ok) by_hash.emplace(r.prompt_sha256, &r);
  }
  std::string out;
  for (const auto& [hash, r] : by_hash) {
    json j;
    j["prompt_sha256"] = hash;
    j["completion"] = r->completion;
    if (include_prompts) j["prompt"] = r->prompt;
    out += j.dump() + "\n";
  }
  write_file(path, out);
}

// ---- mock ------------------------------------------------------------------

MockBackend MockBackend::from_fixtures(const std::filesystem::path& path) {
  std::map<std::string, std::string> table;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("prompt_sha256") || !j.contains("completion")) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing prompt_sha256/completion");
    }
    const auto hash = j["prompt_sha256"].get<std::string>();
    const auto completion = j["completion"].get<std::string>();
    if (j.contains("prompt") && sha256_hex(j["prompt"].get<std::string>()) != hash) {
      throw ReplayDriftError(path.string() + ":" + std::to_string(lineno) +
                             ": stored prompt does not hash to prompt_sha256");
    }
    auto [it, inserted] = table.emplace(hash, completion);
    if (!inserted && it->second != completion) {
      throw ReplayDriftError(path.string() + ": conflicting completions for " + hash);
    }
  }
  return MockBackend(std::move(table));
}

void MockBackend::add(const std::string& prompt, std::string completion) {
  by_hash_[sha256_hex(prompt)] = std::move(completion);
}

std::string MockBackend::complete(const std::string& prompt) {
  const auto hash = sha256_hex(prompt);
  auto it = by_hash_.find(hash);
  if (it == by_hash_.end()) throw MockMissError("no fixture for prompt " + hash);
  return it->second;
}

// ---- http ------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(LlmConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError("llm endpoint is not set");
}

std::string HttpChatBackend::complete(const std::string& prompt) {
  const auto ep = detail::split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  json body;
  body["model"] = config_.model;
  body["temperature"] = config_.temperature;
  body["max_tokens"] = config_.max_tokens;
  body["messages"] = json::array({
      {{"role", "system"}, {"content", config_.system_prompt}},
      {{"role", "user"}, {"content", prompt}},
  });
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(ep.path_prefix + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const std::string what = "chat request failed: " + httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
      throw LlmTimeoutError(what);
    }
    throw LlmError(what);
  }
  if (res->status != 200) {
    throw LlmHttpStatusError(res->status, "chat endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto doc = json::parse(res->body);
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw LlmError(std::string("malformed chat reply: ") + e.what());
  }
}

// ---- client ----------------------------------------------------------------

namespace {

bool retryable(const LlmError& e) {
  if (dynamic_cast<const LlmTimeoutError*>(&e)) return true;
  if (const auto* s = dynamic_cast<const LlmHttpStatusError*>(&e)) {
    return s->status() == 429 || (s->status() >= 500 && s->status() < 600);
  }
  return false;
}

}  // namespace

LlmClient::LlmClient(LlmConfig config, std::unique_ptr<LlmBackend> backend)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
  config_.validate();
  if (!backend_) throw ConfigError("llm client needs a backend");
}

std::string LlmClient::complete(const std::string& prompt) {
  LedgerRecord rec;
  rec.prompt_sha256 = sha256_hex(prompt);
  rec.prompt = prompt;
  rec.backend = backend_->name();

  auto fail = [&](const Error& e) {
    rec.ok = false;
    rec.error = e.code();
    ledger_.append(rec);
  };

  if (trim(prompt).empty()) {
    LlmError e("empty prompt");
    fail(e);
    throw e;
  }
  if (prompt.size() > config_.max_context_chars) {
    ContextOverflowError e("prompt has " + std::to_string(prompt.size()) + " chars, limit is " +
                           std::to_string(config_.max_context_chars));
    fail(e);
    throw e;
  }

  const auto started = std::chrono::steady_clock::now();
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  auto backoff = config_.retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      rec.completion = backend_->complete(prompt);
      break;
    } catch (const LlmError& e) {
      if (attempt >= config_.retry.attempts || !retryable(e)) {
        fail(e);
        throw;
      }
    }
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
  if (!backend_->deterministic()) {
    rec.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  }
  ledger_.append(rec);
  return rec.completion;
}

std::unique_ptr<LlmClient> make_llm_client(const LlmConfig& config) {
  std::unique_ptr<LlmBackend> backend;
  if (config.backend == LlmBackendKind::Http) {
    backend = std::make_unique<HttpChatBackend>(config);
  } else {
    if (config.fixtures.empty()) throw ConfigError("mock llm backend needs a fixtures file");
    backend = std::make_unique<MockBackend>(MockBackend::from_fixtures(config.fixtures));
  }
  return std::make_unique<LlmClient>(config, std::move(backend));
}

}  // namespace kbsql
