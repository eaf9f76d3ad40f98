#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbsql/contrastive.hpp"
#include "kbsql/embedding.hpp"
#include "kbsql/knowledge_base.hpp"

namespace kbsql {

// Flat embedding matrix aligned with KB entries (ordered by entry id).
class KnowledgeIndex {
 public:
  KnowledgeIndex() = default;

  // Rows are taken as given; scores divide by the stored row norms, so
  // unnormalized rows still rank by cosine.
  KnowledgeIndex(std::vector<KnowledgeEntry> entries, std::vector<Vector> rows,
                 std::string provider_fingerprint, std::string head_fingerprint);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<KnowledgeEntry>& entries() const { return entries_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  double row_norm(std::size_t i) const { return norms_[i]; }
  const std::string& provider_fingerprint() const { return provider_fingerprint_; }
  const std::string& head_fingerprint() const { return head_fingerprint_; }
  std::optional<std::size_t> position_of(const std::string& entry_id) const;

  bool operator==(const KnowledgeIndex&) const = default;

 private:
  std::vector<KnowledgeEntry> entries_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::size_t dim_ = 0;
  std::string provider_fingerprint_;
  std::string head_fingerprint_;
  std::map<std::string, std::size_t> positions_;
};

// Throws EmptyKbError, ProviderError.
KnowledgeIndex build_index(const KnowledgeBase& kb, const EmbeddingProvider& provider,
                           const ProjectionHead* head = nullptr);

struct ScoredEntry {
  KnowledgeEntry entry;
  double score = 0.0;
};

// Top-j by cosine, descending; equal scores ordered by entry id ascending.
std::vector<ScoredEntry> retrieve(std::span<const double> query, const KnowledgeIndex& index, std::size_t j);

// Every entry ranked, same order rule as retrieve().
std::vector<std::size_t> full_ranking(std::span<const double> query, const KnowledgeIndex& index);

// Bundles provider, optional head and index, and checks that they match.
class Retriever {
 public:
  // Throws FingerprintMismatchError.
  Retriever(std::shared_ptr<const EmbeddingProvider> provider, std::optional<ProjectionHead> head,
            KnowledgeIndex index);

  Vector embed_query(std::string_view text) const;
  std::vector<ScoredEntry> retrieve(std::string_view query, std::size_t j) const;

  const KnowledgeIndex& index() const { return index_; }
  const EmbeddingProvider& provider() const { return *provider_; }
  const ProjectionHead* head() const { return head_ ? &*head_ : nullptr; }

 private:
  std::shared_ptr<const EmbeddingProvider> provider_;
  std::optional<ProjectionHead> head_;
  KnowledgeIndex index_;
};

struct LabeledQuery {
  std::string query;
  std::vector<std::string> relevant_ids;
};

struct RetrievalMetrics {
  double mrr = 0.0;
  std::map<std::size_t, double> top_at;  // K -> fraction of queries hit in the first K
  std::size_t queries = 0;
};

// MRR over the first relevant entry of each query's full ranking, and
// Top@K for the requested cut-offs. Throws EmptySetError, UnknownEntryError.
RetrievalMetrics eval_retrieval(const Retriever& retriever, const std::vector<LabeledQuery>& labeled,
                                const std::vector<std::size_t>& ks = {1, 3, 10});

// Same metrics from first-relevant ranks (1-based) directly.
RetrievalMetrics metrics_from_ranks(const std::vector<std::size_t>& ranks,
                                    const std::vector<std::size_t>& ks = {1, 3, 10});

// Line-delimited {"query": ..., "relevant_ids": [...]} file.
std::vector<LabeledQuery> load_labeled_queries(const std::filesystem::path& path);
void save_labeled_queries(const std::vector<LabeledQuery>& labeled, const std::filesystem::path& path);

}  // namespace kbsql
