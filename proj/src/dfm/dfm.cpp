#include "wxstereo/dfm/dfm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/kernels/kernels.hpp"

namespace wxs::dfm {
namespace {

void validate_matches(const MatchMap& matches, int64_t n_src, int64_t n_dst) {
  std::vector<char> used(static_cast<size_t>(n_src), 0);
  for (const auto& p : matches.pairs) {
    if (p.src < 0 || p.src >= n_src || p.dst < 0 || p.dst >= n_dst)
      throw ArgumentError("match (" + std::to_string(p.src) + ", " + std::to_string(p.dst) +
                          ") out of range for " + std::to_string(n_src) + "x" + std::to_string(n_dst) + " tokens");
    if (used[static_cast<size_t>(p.src)]++) throw ArgumentError("source token " + std::to_string(p.src) + " matched twice");
  }
}

}  // namespace

void PatchSet::validate() const {
  if (data.rank() != 3 || data.dim(0) != 2) throw ValidationError("PatchSet data must be [2, N, C], got " + shape_str(data.shape()));
  if (disparity.shape() != Shape{2, data.dim(1)}) throw ValidationError("PatchSet disparity must be [2, N]");
  if (!data.all_finite() || !disparity.all_finite()) throw ValidationError("PatchSet holds non-finite values");
  if (grid.count() != data.dim(1)) throw ValidationError("PatchSet grid does not cover N tokens");
  if (scale < 1) throw ValidationError("PatchSet scale must be positive");
}

PatchSet PatchSet::from_views(const Tensor& left, const Tensor& right, GridShape grid, int64_t scale,
                              const Tensor& disparity) {
  if (left.rank() != 2 || left.shape() != right.shape())
    throw ValidationError("views must share shape [N, C]: " + shape_str(left.shape()) + " vs " + shape_str(right.shape()));
  PatchSet p;
  const int64_t n = left.dim(0), c = left.dim(1);
  p.data = Tensor({2, n, c});
  std::copy(left.data(), left.data() + left.numel(), p.data.data());
  std::copy(right.data(), right.data() + right.numel(), p.data.data() + left.numel());
  p.disparity = disparity.empty() ? Tensor({2, n}, 0.0) : disparity.reshaped({2, n});
  p.grid = grid;
  p.scale = scale;
  p.validate();
  return p;
}

void SimilarityConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("similarity alpha must lie in [0, 1]");
  if (!(d_max > 0.0)) throw ArgumentError("similarity d_max must be positive");
}

SimilarityConfig SimilarityConfig::at_scale(double alpha, double d_max_full, int64_t scale) {
  SimilarityConfig cfg{alpha, d_max_full / static_cast<double>(scale)};
  cfg.validate();
  return cfg;
}

std::pair<TokenSet, TokenSet> partition(const PatchSet& patches) {
  patches.validate();
  const int64_t n = patches.tokens(), c = patches.width();
  TokenSet src, dst;
  src.features = Tensor({n, c});
  dst.features = Tensor({n, c});
  std::copy(patches.data.data(), patches.data.data() + n * c, src.features.data());
  std::copy(patches.data.data() + n * c, patches.data.data() + 2 * n * c, dst.features.data());
  src.disparity.assign(patches.disparity.data(), patches.disparity.data() + n);
  dst.disparity.assign(patches.disparity.data() + n, patches.disparity.data() + 2 * n);
  return {std::move(src), std::move(dst)};
}

double patch_similarity(std::span<const double> src_feature, double src_disparity,
                        std::span<const double> dst_feature, double dst_disparity, const SimilarityConfig& cfg) {
  cfg.validate();
  if (src_feature.size() != dst_feature.size()) throw ArgumentError("feature vectors differ in length");
  if (!std::isfinite(src_disparity) || !std::isfinite(dst_disparity)) throw ArgumentError("non-finite disparity");
  return kernels::token_similarity(src_feature, src_disparity, dst_feature, dst_disparity, cfg.alpha, cfg.d_max);
}

MatchMap match_top_n(const TokenSet& src, const TokenSet& dst, int64_t n, const SimilarityConfig& cfg) {
  cfg.validate();
  const int64_t ns = src.size(), nd = dst.size();
  if (n < 0 || n > ns)
    throw ArgumentError("top-n of " + std::to_string(n) + " requested from " + std::to_string(ns) + " source tokens");
  if (n == 0) return {};
  if (nd == 0) throw ArgumentError("cannot match against an empty destination set");
  if (src.width() != dst.width()) throw ArgumentError("source and destination widths differ");

  std::vector<double> sim(static_cast<size_t>(ns * nd));
  kernels::similarity_matrix({src.features.values(), src.disparity, dst.features.values(), dst.disparity, ns, nd,
                              src.width(), cfg.alpha, cfg.d_max},
                             sim);

  // Best destination per source; strict '>' keeps the lowest dst on ties.
  std::vector<MatchPair> links(static_cast<size_t>(ns));
  for (int64_t i = 0; i < ns; ++i) {
    const double* row = sim.data() + i * nd;
    int64_t best = 0;
    for (int64_t j = 1; j < nd; ++j)
      if (row[j] > row[best]) best = j;
    links[static_cast<size_t>(i)] = {i, best, row[best]};
  }
  std::partial_sort(links.begin(), links.begin() + n, links.end(), [](const MatchPair& a, const MatchPair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  });
  links.resize(static_cast<size_t>(n));
  return {std::move(links)};
}

MergedTokens merge(const PatchSet& patches, const MatchMap& matches) {
  patches.validate();
  const int64_t n = patches.tokens(), c = patches.width();
  validate_matches(matches, n, n);

  const double* left = patches.data.data();
  const double* right = patches.data.data() + n * c;
  MergedTokens out;
  out.tokens = Tensor({2 * n - matches.n(), c});
  out.tokens_per_view = n;
  out.grid = patches.grid;
  out.scale = patches.scale;
  out.disparity = patches.disparity;

  std::vector<int64_t> group_size(static_cast<size_t>(n), 1);
  std::vector<char> matched(static_cast<size_t>(n), 0);
  std::copy(right, right + n * c, out.tokens.data());
  for (const auto& p : matches.pairs) {
    matched[static_cast<size_t>(p.src)] = 1;
    ++group_size[static_cast<size_t>(p.dst)];
    for (int64_t k = 0; k < c; ++k) out.tokens[p.dst * c + k] += left[p.src * c + k];
  }
  for (int64_t j = 0; j < n; ++j) {
    const auto g = group_size[static_cast<size_t>(j)];
    if (g == 1) continue;
    for (int64_t k = 0; k < c; ++k) out.tokens[j * c + k] /= static_cast<double>(g);
  }
  int64_t slot = n;
  for (int64_t i = 0; i < n; ++i) {
    if (matched[static_cast<size_t>(i)]) continue;
    std::copy(left + i * c, left + (i + 1) * c, out.tokens.data() + slot * c);
    ++slot;
  }
  return out;
}

PatchSet unmerge(const MergedTokens& merged, const MatchMap& matches) {
  const int64_t n = merged.tokens_per_view;
  if (merged.tokens.rank() != 2 || merged.tokens.dim(0) != 2 * n - matches.n())
    throw ArgumentError("merged sequence has " + std::to_string(merged.tokens.rank() == 2 ? merged.tokens.dim(0) : -1) +
                        " tokens, expected " + std::to_string(2 * n - matches.n()));
  validate_matches(matches, n, n);
  const int64_t c = merged.tokens.dim(1);

  PatchSet out;
  out.data = Tensor({2, n, c});
  out.disparity = merged.disparity.empty() ? Tensor({2, n}, 0.0) : merged.disparity;
  out.grid = merged.grid;
  out.scale = merged.scale;
  double* left = out.data.data();
  double* right = out.data.data() + n * c;
  const double* m = merged.tokens.data();

  std::copy(m, m + n * c, right);
  std::vector<int64_t> target(static_cast<size_t>(n), -1);
  for (const auto& p : matches.pairs) target[static_cast<size_t>(p.src)] = p.dst;
  int64_t slot = n;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t from = target[static_cast<size_t>(i)] >= 0 ? target[static_cast<size_t>(i)] : slot++;
    std::copy(m + from * c, m + (from + 1) * c, left + i * c);
  }
  return out;
}

PatchSet apply_consistency(const PatchSet& patches, int64_t n, const SimilarityConfig& cfg,
                           const TokenTransform& attn) {
  auto [src, dst] = partition(patches);
  const MatchMap matches = match_top_n(src, dst, n, cfg);
  MergedTokens merged = merge(patches, matches);
  Tensor attended = attn(merged.tokens);
  if (attended.shape() != merged.tokens.shape())
    throw ContractError("attention changed token shape " + shape_str(merged.tokens.shape()) + " -> " +
                        shape_str(attended.shape()));
  merged.tokens = std::move(attended);
  return unmerge(merged, matches);
}

}  // namespace wxs::dfm
