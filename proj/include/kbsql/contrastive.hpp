#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kbsql/embedding.hpp"

namespace kbsql {

// Linear map applied to frozen provider embeddings: u = Wᵀx, followed by
// L2 normalization. Weights are stored row-major, dim_in rows of dim_out.
struct ProjectionHead {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  std::vector<double> weights;
  double temperature = 0.05;
  std::string provider_fingerprint;
  std::string lineage;

  static ProjectionHead identity(std::size_t dim, double temperature);
  static ProjectionHead random(std::size_t dim_in, std::size_t dim_out, double temperature,
                               std::uint64_t seed);

  double& at(std::size_t in, std::size_t out) { return weights[in * dim_out + out]; }
  double at(std::size_t in, std::size_t out) const { return weights[in * dim_out + out]; }

  // Unnormalized projection Wᵀx.
  Vector apply(std::span<const double> x) const;
  // L2-normalized projection.
  Vector project(std::span<const double> x) const;

  // Throws ConfigError on non-finite weights, bad shape, or τ <= 0.
  void validate() const;
  std::string fingerprint() const;

  bool operator==(const ProjectionHead&) const = default;
};

void save_head(const ProjectionHead& head, const std::filesystem::path& path);
ProjectionHead load_head(const std::filesystem::path& path);
std::string serialize_head(const ProjectionHead& head);

// Embedding through an optional head. Returns a unit vector.
Vector embed(const EmbeddingProvider& provider, const ProjectionHead* head, std::string_view text);

// -log( e^{s+/τ} / (e^{s+/τ} + Σ e^{s-/τ}) ) with cosine similarity,
// evaluated with log-sum-exp. Throws DimensionMismatchError, ConfigError.
double info_nce_loss(std::span<const double> query, std::span<const double> positive,
                     const std::vector<Vector>& negatives, double temperature);

// One batch of raw (unprojected) embeddings. For row i the positives of all
// other rows act as in-batch negatives, followed by explicit_negatives[i].
struct ContrastiveBatch {
  std::vector<Vector> queries;
  std::vector<Vector> positives;
  std::vector<std::vector<Vector>> explicit_negatives;  // empty or one list per row
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as ProjectionHead::weights
};

// Mean InfoNCE over the batch and its analytic gradient with respect to
// the head weights.
LossAndGradient batch_loss_and_gradient(const ProjectionHead& head, const ContrastiveBatch& batch);

struct TrainingPair {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double temperature = 0.05;
  std::uint64_t seed = 0;
  // 0 keeps the provider dimensionality and starts from the identity map.
  std::size_t dim_out = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the initialization
  double mean_loss = 0.0;
  double heldout_mrr = 0.0;
};

struct TrainResult {
  ProjectionHead head;  // best held-out MRR; earliest epoch wins ties
  ProjectionHead initial;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

// Adam over mini-batches with in-batch negatives. `validation` selects the
// returned head; when empty the training pairs are used. Throws ConfigError
// when batch_size < 2 or fewer than 2 pairs are supplied.
TrainResult train_head(const std::vector<TrainingPair>& pairs, const EmbeddingProvider& provider,
                       const TrainConfig& config, const std::vector<TrainingPair>& validation = {});

// MRR of each query's own positive among all positives in `pairs`, ties
// broken by pair index.
double pairwise_mrr(const ProjectionHead& head, const std::vector<Vector>& queries,
                    const std::vector<Vector>& positives);

}  // namespace kbsql
