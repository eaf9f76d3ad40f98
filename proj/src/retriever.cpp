#include "kbsql/retriever.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "kbsql/error.hpp"
#include "kbsql/text.hpp"

namespace kbsql {

KnowledgeIndex::KnowledgeIndex(std::vector<KnowledgeEntry> entries, std::vector<Vector> rows,
                               std::string provider_fingerprint, std::string head_fingerprint)
    : entries_(std::move(entries)),
      provider_fingerprint_(std::move(provider_fingerprint)),
      head_fingerprint_(std::move(head_fingerprint)) {
  if (entries_.size() != rows.size()) throw ConfigError("index rows must align with entries");
  dim_ = rows.empty() ? 0 : rows.front().size();
  data_.reserve(rows.size() * dim_);
  norms_.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim_) throw DimensionMismatchError("index rows have mixed lengths");
    data_.insert(data_.end(), rows[i].begin(), rows[i].end());
    norms_.push_back(l2_norm(rows[i]));
    positions_.emplace(entries_[i].id, i);
  }
}

std::optional<std::size_t> KnowledgeIndex::position_of(const std::string& entry_id) const {
  auto it = positions_.find(entry_id);
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

KnowledgeIndex build_index(const KnowledgeBase& kb, const EmbeddingProvider& provider,
                           const ProjectionHead* head) {
  if (kb.empty()) throw EmptyKbError("cannot index an empty knowledge base");
  if (head && head->dim_in != provider.dim()) {
    throw DimensionMismatchError("head input size does not match the embedding provider");
  }
  auto entries = kb.entry_list();
  std::vector<std::string> texts;
  texts.reserve(entries.size());
  for (const auto& e : entries) texts.push_back(e.text);
  auto rows = provider.embed_batch(texts);
  if (head) {
    for (auto& r : rows) r = head->project(r);
  }
  return KnowledgeIndex(std::move(entries), std::move(rows), provider.fingerprint(),
                        head ? head->fingerprint() : std::string());
}

namespace {

std::vector<double> scores_for(std::span<const double> query, const KnowledgeIndex& index) {
  if (query.size() != index.dim()) {
    throw DimensionMismatchError("query has " + std::to_string(query.size()) + " dims, index has " +
                                 std::to_string(index.dim()));
  }
  const double qn = l2_norm(query);
  std::vector<double> scores(index.size(), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const double denom = qn * index.row_norm(i);
    scores[i] = denom == 0.0 ? 0.0 : dot(query, index.row(i)) / denom;
  }
  return scores;
}

}  // namespace

std::vector<ScoredEntry> retrieve(std::span<const double> query, const KnowledgeIndex& index, std::size_t j) {
  if (j < 1) throw ConfigError("j must be >= 1");
  if (index.empty()) throw EmptyKbError("index is empty");
  const auto scores = scores_for(query, index);
  const auto& entries = index.entries();
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return entries[a].id < entries[b].id;
  };
  const std::size_t take = std::min(j, index.size());
  // Bounded min-heap of the best `take` rows seen so far; top is the worst kept.
  std::vector<std::size_t> heap;
  heap.reserve(take);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (heap.size() < take) {
      heap.push_back(i);
      std::push_heap(heap.begin(), heap.end(), better);
    } else if (better(i, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), better);
      heap.back() = i;
      std::push_heap(heap.begin(), heap.end(), better);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), better);
  std::vector<ScoredEntry> out;
  out.reserve(heap.size());
  for (auto i : heap) out.push_back({entries[i], scores[i]});
  return out;
}

std::vector<std::size_t> full_ranking(std::span<const double> query, const KnowledgeIndex& index) {
  const auto scores = scores_for(query, index);
  const auto& entries = index.entries();
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return entries[a].id < entries[b].id;
  });
  return order;
}

Retriever::Retriever(std::shared_ptr<const EmbeddingProvider> provider, std::optional<ProjectionHead> head,
                     KnowledgeIndex index)
    : provider_(std::move(provider)), head_(std::move(head)), index_(std::move(index)) {
  if (!provider_) throw ConfigError("retriever needs an embedding provider");
  if (index_.provider_fingerprint() != provider_->fingerprint()) {
    throw FingerprintMismatchError("index was built with provider " + index_.provider_fingerprint() +
                                   ", not " + provider_->fingerprint());
  }
  const std::string head_fp = head_ ? head_->fingerprint() : std::string();
  if (index_.head_fingerprint() != head_fp) {
    throw FingerprintMismatchError("index was built with a different projection head");
  }
  if (head_ && !head_->provider_fingerprint.empty() && head_->provider_fingerprint != provider_->fingerprint()) {
    throw FingerprintMismatchError("head was trained on provider " + head_->provider_fingerprint);
  }
}

Vector Retriever::embed_query(std::string_view text) const { return embed(*provider_, head(), text); }

std::vector<ScoredEntry> Retriever::retrieve(std::string_view query, std::size_t j) const {
  return kbsql::retrieve(embed_query(query), index_, j);
}

RetrievalMetrics metrics_from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks) {
  if (ranks.empty()) throw EmptySetError("no labeled queries");
  RetrievalMetrics m;
  m.queries = ranks.size();
  for (auto k : ks) m.top_at[k] = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw ConfigError("ranks are 1-based");
    m.mrr += 1.0 / static_cast<double>(r);
    for (auto k : ks) {
      if (r <= k) m.top_at[k] += 1.0;
    }
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  for (auto& [k, v] : m.top_at) v /= n;
  return m;
}

RetrievalMetrics eval_retrieval(const Retriever& retriever, const std::vector<LabeledQuery>& labeled,
                                const std::vector<std::size_t>& ks) {
  if (labeled.empty()) throw EmptySetError("no labeled queries");
  const auto& index = retriever.index();
  std::vector<std::size_t> ranks;
  ranks.reserve(labeled.size());
  for (const auto& lq : labeled) {
    if (lq.relevant_ids.empty()) throw UnknownEntryError("query '" + lq.query + "' has no relevant ids");
    std::vector<bool> relevant(index.size(), false);
    for (const auto& id : lq.relevant_ids) {
      auto pos = index.position_of(id);
      if (!pos) throw UnknownEntryError("relevant entry " + id + " is not in the index");
      relevant[*pos] = true;
    }
    const auto order = full_ranking(retriever.embed_query(lq.query), index);
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (relevant[order[r]]) {
        ranks.push_back(r + 1);
        break;
      }
    }
  }
  return metrics_from_ranks(ranks, ks);
}

std::vector<LabeledQuery> load_labeled_queries(const std::filesystem::path& path) {
  std::vector<LabeledQuery> out;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("query").get<std::string>(), j.at("relevant_ids").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_labeled_queries(const std::vector<LabeledQuery>& labeled, const std::filesystem::path& path) {
  std::string out;
  for (const auto& lq : labeled) {
    out += nlohmann::json{{"query", lq.query}, {"relevant_ids", lq.relevant_ids}}.dump() + "\n";
  }
  write_file(path, out);
}

}  // namespace kbsql
