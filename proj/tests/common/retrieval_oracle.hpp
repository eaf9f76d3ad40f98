#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "kbsql/retriever.hpp"

namespace kbsql::testing {

// Brute force: score every row by cosine, sort everything, keep j ids.
inline std::vector<std::string> brute_force_top(const std::vector<double>& query,
                                                const std::vector<KnowledgeEntry>& entries,
                                                const std::vector<std::vector<double>>& rows, std::size_t j) {
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double d = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) d += query[k] * rows[i][k];
    const double denom = norm(query) * norm(rows[i]);
    scored.emplace_back(denom == 0.0 ? 0.0 : d / denom, entries[i].id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < std::min(j, scored.size()); ++i) ids.push_back(scored[i].second);
  return ids;
}

struct RandomKb {
  std::vector<KnowledgeEntry> entries;
  std::vector<std::vector<double>> rows;
};

// Entries with small-integer coordinates so exact score ties are common.
inline RandomKb random_kb(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::uniform_int_distribution<int> coord(-2, 2);
  RandomKb kb;
  for (std::size_t i = 0; i < n; ++i) {
    KnowledgeEntry e;
    e.id = "e" + std::to_string(1000 + (i * 7919) % 9000);
    e.text = "entry " + e.id;
    kb.entries.push_back(e);
    std::vector<double> row(dim);
    for (double& x : row) x = coord(rng);
    if (std::all_of(row.begin(), row.end(), [](double x) { return x == 0.0; })) row[0] = 1.0;
    kb.rows.push_back(row);
  }
  std::sort(kb.entries.begin(), kb.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return kb;
}

}  // namespace kbsql::testing
