#include "kbsql/embedding.hpp"

#include <algorithm>
#include <cmath>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "kbsql/error.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatchError("dot: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void l2_normalize(Vector& v) {
  const double n = l2_norm(v);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double d = dot(a, b);
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return d / (na * nb);
}

std::string to_string(EmbeddingBackend backend) {
  return backend == EmbeddingBackend::HttpService ? "http-service" : "deterministic-hash";
}

std::vector<Vector> EmbeddingProvider::embed_batch(std::span<const std::string> texts) const {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

std::string EmbeddingProvider::fingerprint() const {
  return to_string(backend()) + ":" + name() + ":" + std::to_string(dim());
}

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw ConfigError("hash embedding dimension must be positive");
}

std::string HashEmbeddingProvider::name() const { return "fnv1a-bag"; }

Vector HashEmbeddingProvider::embed(std::string_view text) const {
  if (text.empty()) throw ProviderError("cannot embed empty text");
  Vector v(dim_, 0.0);
  auto add = [&](std::string_view token) {
    const std::uint64_t h = fnv1a64(token);
    v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
  };
  const auto tokens = tokenize(text);
  if (tokens.empty()) {
    add(text);
  } else {
    for (const auto& t : tokens) add(t);
  }
  if (l2_norm(v) == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    v[fnv1a64(text) % dim_] = 1.0;
  }
  l2_normalize(v);
  return v;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEmbeddingConfig config)
    : config_(std::move(config)), dim_(config_.dim) {
  if (config_.endpoint.empty()) throw ConfigError("embedding endpoint is not set");
}

std::string HttpEmbeddingProvider::name() const { return config_.model.empty() ? "default" : config_.model; }

std::size_t HttpEmbeddingProvider::dim() const {
  if (dim_.load() == 0) {
    // Learn the dimensionality from a probe request.
    (void)embed("dimension probe");
  }
  return dim_.load();
}

Vector HttpEmbeddingProvider::embed(std::string_view text) const {
  const std::string one(text);
  return embed_batch(std::span<const std::string>(&one, 1)).front();
}

std::vector<Vector> HttpEmbeddingProvider::embed_batch(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  for (const auto& t : texts) {
    if (t.empty()) throw ProviderError("cannot embed empty text");
  }
  const auto ep = detail::split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_connection_timeout(secs.count(), usecs.count());

  nlohmann::json body;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  if (!config_.model.empty()) body["model"] = config_.model;
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(ep.path_prefix + "/embeddings", headers, body.dump(), "application/json");
  if (!res) throw ProviderError("embedding request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ProviderError("embedding service returned HTTP " + std::to_string(res->status));
  }

  std::vector<Vector> out(texts.size());
  try {
    const auto doc = nlohmann::json::parse(res->body);
    const auto& data = doc.at("data");
    if (data.size() != texts.size()) throw ProviderError("embedding reply has wrong item count");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& item = data[i];
      const std::size_t index = item.contains("index") ? item.at("index").get<std::size_t>() : i;
      if (index >= out.size()) throw ProviderError("embedding reply index out of range");
      out[index] = item.at("embedding").get<Vector>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed embedding reply: ") + e.what());
  }

  for (auto& v : out) {
    std::size_t expected = dim_.load();
    if (expected == 0) {
      dim_.compare_exchange_strong(expected, v.size());
      expected = dim_.load();
    }
    if (v.size() != expected) {
      throw ProviderError("embedding has length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(expected));
    }
    l2_normalize(v);
  }
  return out;
}

}  // namespace kbsql
