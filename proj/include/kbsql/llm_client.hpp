#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

namespace kbsql {

enum class LlmBackendKind { Http, Mock };

std::string to_string(LlmBackendKind kind);
LlmBackendKind parse_llm_backend(std::string_view s);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};  // doubles after each failure
};

struct LlmConfig {
  LlmBackendKind backend = LlmBackendKind::Mock;
  std::string model;
  std::string endpoint;  // base URL; chat/completions is appended
  std::string api_key;
  std::string system_prompt =
      "You are an expert in SQL and relational databases. Follow the format of the examples.";
  double temperature = 0.0;
  int max_tokens = 1024;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  std::size_t max_context_chars = 120000;
  std::size_t max_in_flight = 4;
  std::filesystem::path fixtures;  // mock backend only

  // Throws ConfigError.
  void validate() const;
};

struct LedgerRecord {
  std::string prompt_sha256;
  std::string prompt;
  std::string completion;
  double latency_ms = 0.0;
  std::string backend;
  bool ok = true;
  std::string error;  // error code when !ok

  bool operator==(const LedgerRecord&) const = default;
};

// Append-only record of every complete() call, failures included.
class CallLedger {
 public:
  void append(LedgerRecord record);
  std::vector<LedgerRecord> records() const;
  std::size_t size() const;
  void clear();

  void save(const std::filesystem::path& path) const;
  static std::vector<LedgerRecord> load(const std::filesystem::path& path);

  // Fixture file: one {prompt_sha256, completion, prompt} object per line for
  // every successful call, sorted by hash and deduplicated.
  void save_fixtures(const std::filesystem::path& path, bool include_prompts = true) const;

 private:
  mutable std::mutex mutex_;
  std::vector<LedgerRecord> records_;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string name() const = 0;
  // Deterministic backends record zero latency so ledgers are reproducible.
  virtual bool deterministic() const { return false; }
  // One attempt. Throws LlmError subclasses.
  virtual std::string complete(const std::string& prompt) = 0;
};

// Answers from a table keyed by prompt sha256; anything else is MockMissError.
class MockBackend final : public LlmBackend {
 public:
  MockBackend() = default;
  explicit MockBackend(std::map<std::string, std::string> by_hash) : by_hash_(std::move(by_hash)) {}

  // Throws IoError, ParseError, ReplayDriftError.
  static MockBackend from_fixtures(const std::filesystem::path& path);

  void add(const std::string& prompt, std::string completion);
  std::size_t size() const { return by_hash_.size(); }

  std::string name() const override { return "mock"; }
  bool deterministic() const override { return true; }
  std::string complete(const std::string& prompt) override;

 private:
  std::map<std::string, std::string> by_hash_;
};

// Wraps a callable; used for scripted test doubles.
class FunctionBackend final : public LlmBackend {
 public:
  using Fn = std::function<std::string(const std::string&)>;
  explicit FunctionBackend(Fn fn, std::string name = "function")
      : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  bool deterministic() const override { return true; }
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  Fn fn_;
  std::string name_;
};

// OpenAI-compatible chat-completions over HTTP(S), one system and one user message.
class HttpChatBackend final : public LlmBackend {
 public:
  explicit HttpChatBackend(LlmConfig config);
  std::string name() const override { return "http"; }
  std::string complete(const std::string& prompt) override;

 private:
  LlmConfig config_;
};

// Thread-safe front end: validation, context check, retries, in-flight cap
// and the call ledger.
class LlmClient {
 public:
  LlmClient(LlmConfig config, std::unique_ptr<LlmBackend> backend);

  // Throws ContextOverflowError before touching the backend, and after
  // retries are exhausted rethrows the last backend error.
  std::string complete(const std::string& prompt);

  const LlmConfig& config() const { return config_; }
  const LlmBackend& backend() const { return *backend_; }
  CallLedger& ledger() { return ledger_; }
  const CallLedger& ledger() const { return ledger_; }

 private:
  LlmConfig config_;
  std::unique_ptr<LlmBackend> backend_;
  CallLedger ledger_;
  std::counting_semaphore<> in_flight_;
};

// Builds the backend named by config.backend.
std::unique_ptr<LlmClient> make_llm_client(const LlmConfig& config);

}  // namespace kbsql
