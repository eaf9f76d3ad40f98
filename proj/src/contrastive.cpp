#include "kbsql/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "kbsql/error.hpp"
#include "kbsql/rng.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Projection of one raw vector plus what backprop needs.
struct Projected {
  Vector unit;
  double norm = 0.0;
};

Projected project_with_norm(const ProjectionHead& head, std::span<const double> x) {
  Projected p;
  p.unit = head.apply(x);
  p.norm = l2_norm(p.unit);
  if (p.norm > 0.0) {
    for (double& v : p.unit) v /= p.norm;
  }
  return p;
}

// Accumulates dL/dW for u = Wᵀx given dL/dn where n = u/|u|.
void backprop_into(std::vector<double>& grad, const ProjectionHead& head, std::span<const double> x,
                   const Projected& p, const Vector& d_unit) {
  if (p.norm == 0.0) return;
  const double radial = dot(p.unit, d_unit);
  Vector d_u(head.dim_out);
  for (std::size_t o = 0; o < head.dim_out; ++o) d_u[o] = (d_unit[o] - p.unit[o] * radial) / p.norm;
  for (std::size_t i = 0; i < head.dim_in; ++i) {
    if (x[i] == 0.0) continue;
    double* row = grad.data() + i * head.dim_out;
    for (std::size_t o = 0; o < head.dim_out; ++o) row[o] += x[i] * d_u[o];
  }
}

}  // namespace

ProjectionHead ProjectionHead::identity(std::size_t dim, double temperature) {
  ProjectionHead h;
  h.dim_in = h.dim_out = dim;
  h.weights.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) h.at(i, i) = 1.0;
  h.temperature = temperature;
  return h;
}

ProjectionHead ProjectionHead::random(std::size_t dim_in, std::size_t dim_out, double temperature,
                                      std::uint64_t seed) {
  ProjectionHead h;
  h.dim_in = dim_in;
  h.dim_out = dim_out;
  h.temperature = temperature;
  h.weights.resize(dim_in * dim_out);
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_out));
  for (double& w : h.weights) w = standard_normal(rng) * scale;
  return h;
}

Vector ProjectionHead::apply(std::span<const double> x) const {
  if (x.size() != dim_in) {
    throw DimensionMismatchError("head expects " + std::to_string(dim_in) + " inputs, got " +
                                 std::to_string(x.size()));
  }
  Vector u(dim_out, 0.0);
  for (std::size_t i = 0; i < dim_in; ++i) {
    if (x[i] == 0.0) continue;
    const double* row = weights.data() + i * dim_out;
    for (std::size_t o = 0; o < dim_out; ++o) u[o] += x[i] * row[o];
  }
  return u;
}

Vector ProjectionHead::project(std::span<const double> x) const {
  Vector u = apply(x);
  l2_normalize(u);
  return u;
}

void ProjectionHead::validate() const {
  if (dim_in == 0 || dim_out == 0 || weights.size() != dim_in * dim_out) {
    throw ConfigError("projection head has inconsistent shape");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive");
  }
  for (double w : weights) {
    if (!std::isfinite(w)) throw ConfigError("projection head has non-finite weights");
  }
}

std::string ProjectionHead::fingerprint() const { return sha256_hex(serialize_head(*this)).substr(0, 16); }

std::string serialize_head(const ProjectionHead& head) {
  std::ostringstream out;
  out << "kbsql-projection-head 1\n";
  out << "provider " << (head.provider_fingerprint.empty() ? "-" : head.provider_fingerprint) << "\n";
  out << "lineage " << (head.lineage.empty() ? "-" : head.lineage) << "\n";
  out << "dim_in " << head.dim_in << "\n";
  out << "dim_out " << head.dim_out << "\n";
  out << "tau " << format_double(head.temperature) << "\n";
  for (std::size_t i = 0; i < head.dim_in; ++i) {
    for (std::size_t o = 0; o < head.dim_out; ++o) {
      if (o) out << ' ';
      out << format_double(head.at(i, o));
    }
    out << "\n";
  }
  return out.str();
}

void save_head(const ProjectionHead& head, const std::filesystem::path& path) {
  head.validate();
  write_file(path, serialize_head(head));
}

ProjectionHead load_head(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  auto expect = [&](const std::string& key) {
    std::string got;
    if (!(in >> got) || got != key) throw ParseError(path.string() + ": expected '" + key + "'");
  };
  ProjectionHead head;
  std::string version;
  expect("kbsql-projection-head");
  if (!(in >> version) || version != "1") throw ParseError(path.string() + ": unsupported head version");
  expect("provider");
  in >> head.provider_fingerprint;
  if (head.provider_fingerprint == "-") head.provider_fingerprint.clear();
  expect("lineage");
  in >> head.lineage;
  if (head.lineage == "-") head.lineage.clear();
  expect("dim_in");
  in >> head.dim_in;
  expect("dim_out");
  in >> head.dim_out;
  expect("tau");
  std::string tau;
  in >> tau;
  try {
    head.temperature = std::stod(tau);
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": bad tau");
  }
  if (!in || head.dim_in == 0 || head.dim_out == 0 || head.dim_in > (1u << 16) || head.dim_out > (1u << 16)) {
    throw ParseError(path.string() + ": bad head header");
  }
  head.weights.resize(head.dim_in * head.dim_out);
  for (double& w : head.weights) {
    std::string tok;
    if (!(in >> tok)) throw ParseError(path.string() + ": truncated weights");
    try {
      w = std::stod(tok);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": bad weight '" + tok + "'");
    }
  }
  std::string extra;
  if (in >> extra) throw ParseError(path.string() + ": trailing data");
  head.validate();
  return head;
}

Vector embed(const EmbeddingProvider& provider, const ProjectionHead* head, std::string_view text) {
  Vector v = provider.embed(text);
  if (head) return head->project(v);
  return v;
}

double info_nce_loss(std::span<const double> query, std::span<const double> positive,
                     const std::vector<Vector>& negatives, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (negatives.empty()) throw ConfigError("info_nce_loss needs at least one negative");
  if (query.size() != positive.size()) throw DimensionMismatchError("query/positive length differ");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(cosine(query, positive) / temperature);
  for (const auto& neg : negatives) {
    if (neg.size() != query.size()) throw DimensionMismatchError("negative length differs from query");
    logits.push_back(cosine(query, neg) / temperature);
  }
  // Mathematically >= 0; clamp the rounding residue.
  return std::max(0.0, log_sum_exp(logits) - logits.front());
}

LossAndGradient batch_loss_and_gradient(const ProjectionHead& head, const ContrastiveBatch& batch) {
  const std::size_t n = batch.queries.size();
  if (n == 0 || batch.positives.size() != n) throw ConfigError("batch queries/positives mismatch");
  if (!batch.explicit_negatives.empty() && batch.explicit_negatives.size() != n) {
    throw ConfigError("explicit negatives must be given per row");
  }
  const double tau = head.temperature;

  std::vector<Projected> q(n);
  std::vector<Projected> k(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = project_with_norm(head, batch.queries[i]);
    k[i] = project_with_norm(head, batch.positives[i]);
  }
  std::vector<std::vector<Projected>> neg(n);
  for (std::size_t i = 0; i < n && !batch.explicit_negatives.empty(); ++i) {
    for (const auto& x : batch.explicit_negatives[i]) neg[i].push_back(project_with_norm(head, x));
  }

  std::vector<Vector> dq(n, Vector(head.dim_out, 0.0));
  std::vector<Vector> dk(n, Vector(head.dim_out, 0.0));
  std::vector<std::vector<Vector>> dneg(n);

  LossAndGradient out;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits;
    logits.reserve(n + neg[i].size());
    for (std::size_t j = 0; j < n; ++j) logits.push_back(dot(q[i].unit, k[j].unit) / tau);
    for (const auto& p : neg[i]) logits.push_back(dot(q[i].unit, p.unit) / tau);
    if (logits.size() < 2) throw ConfigError("row has no negatives");

    const double lse = log_sum_exp(logits);
    out.loss += (lse - logits[i]) * scale;

    dneg[i].assign(neg[i].size(), Vector(head.dim_out, 0.0));
    for (std::size_t c = 0; c < logits.size(); ++c) {
      const double g = (std::exp(logits[c] - lse) - (c == i ? 1.0 : 0.0)) * scale / tau;
      const Projected& other = c < n ? k[c] : neg[i][c - n];
      Vector& d_other = c < n ? dk[c] : dneg[i][c - n];
      for (std::size_t o = 0; o < head.dim_out; ++o) {
        dq[i][o] += g * other.unit[o];
        d_other[o] += g * q[i].unit[o];
      }
    }
  }

  out.gradient.assign(head.weights.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    backprop_into(out.gradient, head, batch.queries[i], q[i], dq[i]);
    backprop_into(out.gradient, head, batch.positives[i], k[i], dk[i]);
    for (std::size_t m = 0; m < neg[i].size(); ++m) {
      backprop_into(out.gradient, head, batch.explicit_negatives[i][m], neg[i][m], dneg[i][m]);
    }
  }
  return out;
}

double pairwise_mrr(const ProjectionHead& head, const std::vector<Vector>& queries,
                    const std::vector<Vector>& positives) {
  if (queries.empty() || queries.size() != positives.size()) {
    throw ConfigError("pairwise_mrr needs aligned, non-empty inputs");
  }
  std::vector<Vector> keys;
  keys.reserve(positives.size());
  for (const auto& p : positives) keys.push_back(head.project(p));
  double total = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Vector qv = head.project(queries[i]);
    const double own = dot(qv, keys[i]);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < keys.size(); ++c) {
      if (c == i) continue;
      const double s = dot(qv, keys[c]);
      if (s > own || (s == own && c < i)) ++rank;
    }
    total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(queries.size());
}

TrainResult train_head(const std::vector<TrainingPair>& pairs, const EmbeddingProvider& provider,
                       const TrainConfig& config, const std::vector<TrainingPair>& validation) {
  if (config.batch_size < 2) throw ConfigError("batch_size must be at least 2 for in-batch negatives");
  if (pairs.size() < 2) throw ConfigError("training needs at least 2 pairs");
  if (!(config.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (config.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");

  const std::size_t dim_in = provider.dim();
  const std::size_t dim_out = config.dim_out == 0 ? dim_in : config.dim_out;
  ProjectionHead head = dim_out == dim_in
                            ? ProjectionHead::identity(dim_in, config.temperature)
                            : ProjectionHead::random(dim_in, dim_out, config.temperature, config.seed);
  head.provider_fingerprint = provider.fingerprint();

  struct Embedded {
    Vector query;
    Vector positive;
    std::vector<Vector> negatives;
  };
  auto embed_pairs = [&](const std::vector<TrainingPair>& src) {
    std::vector<Embedded> out;
    out.reserve(src.size());
    for (const auto& p : src) {
      if (p.positive.empty()) throw ConfigError("training pair has an empty positive");
      Embedded e{provider.embed(p.query), provider.embed(p.positive), {}};
      for (const auto& n : p.negatives) e.negatives.push_back(provider.embed(n));
      out.push_back(std::move(e));
    }
    return out;
  };
  const auto train = embed_pairs(pairs);
  const auto held = validation.empty() ? train : embed_pairs(validation);
  std::vector<Vector> held_q;
  std::vector<Vector> held_k;
  for (const auto& e : held) {
    held_q.push_back(e.query);
    held_k.push_back(e.positive);
  }

  TrainResult result;
  result.initial = head;
  result.head = head;
  double best_mrr = pairwise_mrr(head, held_q, held_k);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Batches in the given order; a lone row without explicit negatives is skipped.
  auto for_each_batch = [&](auto&& fn) {
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ContrastiveBatch batch;
      bool any_explicit = false;
      for (std::size_t b = start; b < end; ++b) any_explicit |= !train[order[b]].negatives.empty();
      if (end - start < 2 && !any_explicit) continue;
      for (std::size_t b = start; b < end; ++b) {
        const auto& e = train[order[b]];
        batch.queries.push_back(e.query);
        batch.positives.push_back(e.positive);
        if (any_explicit) batch.explicit_negatives.push_back(e.negatives);
      }
      fn(batch);
    }
  };

  double init_loss = 0.0;
  std::size_t init_batches = 0;
  for_each_batch([&](const ContrastiveBatch& batch) {
    init_loss += batch_loss_and_gradient(head, batch).loss;
    ++init_batches;
  });
  result.history.push_back({0, init_batches ? init_loss / static_cast<double>(init_batches) : 0.0, best_mrr});

  // Adam state
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  std::vector<double> m(head.weights.size(), 0.0);
  std::vector<double> v(head.weights.size(), 0.0);
  std::uint64_t step = 0;

  std::mt19937_64 rng(mix_seed(config.seed, 0x7261696eULL));
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for_each_batch([&](const ContrastiveBatch& batch) {
      const auto lg = batch_loss_and_gradient(head, batch);
      loss_sum += lg.loss;
      ++batches;

      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t w = 0; w < head.weights.size(); ++w) {
        const double g = lg.gradient[w];
        m[w] = kBeta1 * m[w] + (1.0 - kBeta1) * g;
        v[w] = kBeta2 * v[w] + (1.0 - kBeta2) * g * g;
        head.weights[w] -= config.learning_rate * (m[w] / c1) / (std::sqrt(v[w] / c2) + kEps);
      }
    });
    const double mrr = pairwise_mrr(head, held_q, held_k);
    result.history.push_back({epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, mrr});
    if (mrr > best_mrr) {
      best_mrr = mrr;
      result.head = head;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace kbsql
