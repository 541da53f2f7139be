#pragma once

// Independent brute-force references used to check the library's metric and
// loss implementations. Everything here is deliberately written with plain
// loops and no calls into the code paths under test.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "ivt/common.hpp"

namespace oracle {

// Rank of gallery item g for one query: 1 + count of items ordered before it
// (higher score, or equal score with a lower index).
inline int gallery_rank(const ivt::Mat& scores, const std::vector<int>& /*labels*/, int query,
                        int item) {
  int before = 0;
  for (int j = 0; j < scores.cols(); ++j) {
    if (j == item) continue;
    const double sj = scores(query, j);
    const double si = scores(query, item);
    if (sj > si || (sj == si && j < item)) ++before;
  }
  return before + 1;
}

inline std::map<int, double> cmc(const ivt::Mat& scores, const std::vector<int>& query_labels,
                                 const std::vector<int>& gallery_labels,
                                 const std::vector<int>& ks) {
  const int q_count = static_cast<int>(scores.rows());
  const int g_count = static_cast<int>(scores.cols());
  std::map<int, double> rates;
  for (int k : ks) {
    int hits = 0;
    for (int q = 0; q < q_count; ++q) {
      bool hit = false;
      for (int g = 0; g < g_count && !hit; ++g) {
        if (gallery_labels[static_cast<std::size_t>(g)] != query_labels[static_cast<std::size_t>(q)]) {
          continue;
        }
        if (gallery_rank(scores, gallery_labels, q, g) <= k) hit = true;
      }
      if (hit) ++hits;
    }
    rates[k] = static_cast<double>(hits) / static_cast<double>(q_count);
  }
  return rates;
}

inline double mean_average_precision(const ivt::Mat& scores, const std::vector<int>& query_labels,
                                     const std::vector<int>& gallery_labels) {
  const int q_count = static_cast<int>(scores.rows());
  const int g_count = static_cast<int>(scores.cols());
  double total = 0.0;
  for (int q = 0; q < q_count; ++q) {
    // Collect the ranks of all relevant items, ascending.
    std::vector<int> ranks;
    for (int g = 0; g < g_count; ++g) {
      if (gallery_labels[static_cast<std::size_t>(g)] == query_labels[static_cast<std::size_t>(q)]) {
        ranks.push_back(gallery_rank(scores, gallery_labels, q, g));
      }
    }
    std::sort(ranks.begin(), ranks.end());
    double ap = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      ap += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
    }
    total += ap / static_cast<double>(ranks.size());
  }
  return total / static_cast<double>(q_count);
}

// Scalar re-computation of the bidirectional matching loss, one direction.
inline double cmpm_one_direction(const ivt::Mat& fa, const ivt::Mat& fb,
                                 const std::vector<int>& labels, double eps,
                                 bool normalize_targets = false) {
  const int b = static_cast<int>(fa.rows());
  const int d = static_cast<int>(fa.cols());
  ivt::Mat targets = fb;
  if (normalize_targets) {
    for (int j = 0; j < b; ++j) {
      double norm = 0.0;
      for (int c = 0; c < d; ++c) norm += fb(j, c) * fb(j, c);
      norm = std::sqrt(norm);
      if (norm < 1e-12) norm = 1e-12;
      for (int c = 0; c < d; ++c) targets(j, c) = fb(j, c) / norm;
    }
  }
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    std::vector<double> exps(static_cast<std::size_t>(b));
    double denom = 0.0;
    for (int j = 0; j < b; ++j) {
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += fa(i, c) * targets(j, c);
      exps[static_cast<std::size_t>(j)] = std::exp(dot);
      denom += exps[static_cast<std::size_t>(j)];
    }
    int matches = 0;
    for (int j = 0; j < b; ++j) {
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) ++matches;
    }
    for (int j = 0; j < b; ++j) {
      const double p = exps[static_cast<std::size_t>(j)] / denom;
      const double q =
          labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]
              ? 1.0 / static_cast<double>(matches)
              : 0.0;
      loss += p * std::log(p / (q + eps));
    }
  }
  return loss / static_cast<double>(b);
}

}  // namespace oracle
