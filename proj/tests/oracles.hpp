#pragma once

// Independent reference implementations shared by unit and acceptance tests.
// Each is written straight from the stated rule, favouring obviousness over
// speed, and shares no code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "wxstereo/core/tensor.hpp"
#include "wxstereo/dfm/dfm.hpp"

namespace wxs::oracle {

inline double similarity(const double* a, double da, const double* b, double db, int64_t c, double alpha,
                         double d_max) {
  double dot = 0, na = 0, nb = 0;
  for (int64_t k = 0; k < c; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double cosine = (na == 0 || nb == 0) ? 0.0 : std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  const double agree = std::clamp(1.0 - std::abs(da - db) / d_max, 0.0, 1.0);
  return (1.0 - alpha) * cosine + alpha * agree;
}

/// n rounds of a full scan: each round takes the best remaining (src, dst)
/// pair over all N² candidates, ordered by similarity desc, src asc, dst asc,
/// among sources not yet taken.
inline std::vector<dfm::MatchPair> match_top_n(const dfm::TokenSet& src, const dfm::TokenSet& dst, int64_t n,
                                               double alpha, double d_max) {
  const int64_t ns = src.size(), nd = dst.size(), c = src.width();
  std::vector<char> taken(static_cast<size_t>(ns), 0);
  std::vector<dfm::MatchPair> out;
  for (int64_t round = 0; round < n; ++round) {
    dfm::MatchPair best{-1, -1, -1e300};
    for (int64_t i = 0; i < ns; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      for (int64_t j = 0; j < nd; ++j) {
        const double s = similarity(src.features.data() + i * c, src.disparity[static_cast<size_t>(i)],
                                    dst.features.data() + j * c, dst.disparity[static_cast<size_t>(j)], c, alpha,
                                    d_max);
        const bool better = best.src < 0 || s > best.similarity ||
                            (s == best.similarity && (i < best.src || (i == best.src && j < best.dst)));
        if (better) best = {i, j, s};
      }
    }
    taken[static_cast<size_t>(best.src)] = 1;
    out.push_back(best);
  }
  return out;
}

/// Per-position expected tokens after merge and unmerge: each destination
/// group (dst plus its linked sources) becomes its mean; everything else is
/// untouched. Returned as [2, N, C].
inline Tensor fused_views(const dfm::PatchSet& p, const std::vector<dfm::MatchPair>& pairs) {
  const int64_t n = p.tokens(), c = p.width();
  Tensor out = p.data;
  for (int64_t j = 0; j < n; ++j) {
    std::vector<int64_t> members;
    for (const auto& m : pairs)
      if (m.dst == j) members.push_back(m.src);
    if (members.empty()) continue;
    for (int64_t k = 0; k < c; ++k) {
      double acc = p.data.at(1, j, k);
      for (int64_t s : members) acc += p.data.at(0, s, k);
      const double mean = acc / static_cast<double>(members.size() + 1);
      out.at(1, j, k) = mean;
      for (int64_t s : members) out.at(0, s, k) = mean;
    }
  }
  return out;
}

/// Seeded two-view PatchSet. With `ties`, values come from a small integer
/// alphabet and some tokens are copies of others, so equal similarities occur.
inline dfm::PatchSet random_patchset(std::mt19937_64& rng, int64_t rows, int64_t cols, int64_t c, bool ties,
                                     double d_max) {
  const int64_t n = rows * cols;
  dfm::PatchSet p;
  p.data = Tensor({2, n, c});
  p.disparity = Tensor({2, n});
  p.grid = {rows, cols};
  p.scale = 16;
  std::uniform_real_distribution<double> u(-1, 1), ud(0, d_max);
  std::uniform_int_distribution<int> small(-2, 2), small_d(0, 3);
  for (int64_t i = 0; i < p.data.numel(); ++i) p.data[i] = ties ? small(rng) : u(rng);
  for (int64_t i = 0; i < p.disparity.numel(); ++i) p.disparity[i] = ties ? small_d(rng) * d_max / 4 : ud(rng);
  if (ties && n > 1) {
    std::uniform_int_distribution<int64_t> pick(0, n - 1);
    for (int copies = 0; copies < static_cast<int>(n / 3) + 1; ++copies) {
      const int64_t view = copies % 2, from = pick(rng), to = pick(rng);
      for (int64_t k = 0; k < c; ++k) p.data.at(view, to, k) = p.data.at(view, from, k);
      p.disparity.at(view, to) = p.disparity.at(view, from);
    }
  }
  return p;
}

}  // namespace wxs::oracle
