#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kbsql {

using Vector = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
// Scales to unit length in place. Zero vectors are left untouched.
void l2_normalize(Vector& v);
// Cosine similarity; 0 when either side is the zero vector. Throws
// DimensionMismatchError.
double cosine(std::span<const double> a, std::span<const double> b);

enum class EmbeddingBackend { HttpService, DeterministicHash };

std::string to_string(EmbeddingBackend backend);

// Sentence-embedding source. Implementations return L2-normalized vectors
// of length dim() and must be safe to call from several threads.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingBackend backend() const = 0;

  // Throws ProviderError on empty text or backend failure.
  virtual Vector embed(std::string_view text) const = 0;
  virtual std::vector<Vector> embed_batch(std::span<const std::string> texts) const;

  // Identity string recorded in indexes and head files.
  std::string fingerprint() const;
};

// Bag-of-tokens feature hashing. For each token t of tokenize(text):
//   h = fnv1a64(t); v[h % dim] += (h >> 63) ? -1 : +1
// A text without tokens hashes as one token equal to the whole text. The
// result is L2-normalized; if the accumulated vector is exactly zero, the
// whole-text hash bucket is set to 1 instead.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim = 256);

  std::string name() const override;
  std::size_t dim() const override { return dim_; }
  EmbeddingBackend backend() const override { return EmbeddingBackend::DeterministicHash; }
  Vector embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

struct HttpEmbeddingConfig {
  std::string endpoint;  // base URL, e.g. http://localhost:8080/v1
  std::string model;
  std::string api_key;
  std::size_t dim = 0;   // expected length; 0 learns it from the first reply
  std::chrono::milliseconds timeout{30000};
};

// OpenAI-compatible POST {endpoint}/embeddings client.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEmbeddingConfig config);

  std::string name() const override;
  std::size_t dim() const override;
  EmbeddingBackend backend() const override { return EmbeddingBackend::HttpService; }
  Vector embed(std::string_view text) const override;
  std::vector<Vector> embed_batch(std::span<const std::string> texts) const override;

 private:
  HttpEmbeddingConfig config_;
  mutable std::atomic<std::size_t> dim_;
};

}  // namespace kbsql
