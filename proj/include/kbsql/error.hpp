#pragma once

#include <stdexcept>
#include <string>

namespace kbsql {

// Root of every exception thrown by the library. `code()` is a stable
// kebab-case identifier used by the CLI's machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define KBSQL_DEFINE_ERROR(Name, Code)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(Code, message) {} \
  }

// I/O and parsing
KBSQL_DEFINE_ERROR(IoError, "io-error");
KBSQL_DEFINE_ERROR(ParseError, "parse-error");

// dataset
KBSQL_DEFINE_ERROR(SchemaRefError, "schema-ref-error");
KBSQL_DEFINE_ERROR(UnsupportedEngineError, "unsupported-engine");

// knowledge base
KBSQL_DEFINE_ERROR(InsufficientExamplesError, "insufficient-examples");

// retriever
KBSQL_DEFINE_ERROR(ProviderError, "provider-error");
KBSQL_DEFINE_ERROR(EmptyKbError, "empty-kb");
KBSQL_DEFINE_ERROR(DimensionMismatchError, "dimension-mismatch");
KBSQL_DEFINE_ERROR(ConfigError, "config-error");
KBSQL_DEFINE_ERROR(UnknownEntryError, "unknown-entry");
KBSQL_DEFINE_ERROR(FingerprintMismatchError, "fingerprint-mismatch");

// llm client
KBSQL_DEFINE_ERROR(ReplayDriftError, "replay-drift");

// prompts / pipeline
KBSQL_DEFINE_ERROR(BudgetError, "budget-error");
KBSQL_DEFINE_ERROR(EmptySqlError, "empty-sql");

// evaluation
KBSQL_DEFINE_ERROR(EmptySetError, "empty-set");
KBSQL_DEFINE_ERROR(NonPositiveTimeError, "non-positive-time");
KBSQL_DEFINE_ERROR(AlignmentError, "alignment-error");

// cli
KBSQL_DEFINE_ERROR(MissingArtifactError, "missing-artifact");
KBSQL_DEFINE_ERROR(LineageError, "lineage-mismatch");

#undef KBSQL_DEFINE_ERROR

// Any failed completion. Pipeline stages catch this type for their
// skip-and-log policy, so every backend failure derives from it.
class LlmError : public Error {
 public:
  explicit LlmError(const std::string& message) : Error("llm-error", message) {}

 protected:
  LlmError(std::string code, const std::string& message) : Error(std::move(code), message) {}
};

class LlmTimeoutError : public LlmError {
 public:
  explicit LlmTimeoutError(const std::string& message) : LlmError("llm-timeout", message) {}
};

class LlmHttpStatusError : public LlmError {
 public:
  LlmHttpStatusError(int status, const std::string& message)
      : LlmError("llm-http-status", message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class ContextOverflowError : public LlmError {
 public:
  explicit ContextOverflowError(const std::string& message)
      : LlmError("context-overflow", message) {}
};

// The mock backend has no fixture for a prompt.
class MockMissError : public LlmError {
 public:
  explicit MockMissError(const std::string& message) : LlmError("mock-miss", message) {}
};

}  // namespace kbsql
