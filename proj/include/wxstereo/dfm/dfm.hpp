#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "wxstereo/core/tensor.hpp"

// Cross-view token fusion for two-view generation. Left-view tokens form the
// source set and right-view tokens the destination set; each source token is
// linked to its most similar destination token, the n strongest links are
// fused by averaging, the fused sequence goes through attention, and the
// result is scattered back to both views.

namespace wxs::dfm {

struct GridShape {
  int64_t rows = 0;
  int64_t cols = 0;
  int64_t count() const { return rows * cols; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Two-view token tensor: data [2, N, C] (0 = left, 1 = right) and a
/// per-token disparity [2, N] in pixels at the patch scale.
struct PatchSet {
  Tensor data;
  Tensor disparity;
  GridShape grid;
  int64_t scale = 1;

  int64_t tokens() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }

  /// Throws ValidationError on broken invariants.
  void validate() const;

  /// Stacks two [N, C] views; a missing disparity is all zeros.
  static PatchSet from_views(const Tensor& left, const Tensor& right, GridShape grid, int64_t scale,
                             const Tensor& disparity = Tensor());
};

struct TokenSet {
  Tensor features;  // [N, C]
  std::vector<double> disparity;
  int64_t size() const { return features.rank() == 2 ? features.dim(0) : 0; }
  int64_t width() const { return features.rank() == 2 ? features.dim(1) : 0; }
};

struct MatchPair {
  int64_t src = 0;
  int64_t dst = 0;
  double similarity = 0.0;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

/// Selected links in selection order (descending similarity, ties by lower
/// src index then lower dst index). Source indices are distinct.
struct MatchMap {
  std::vector<MatchPair> pairs;
  int64_t n() const { return static_cast<int64_t>(pairs.size()); }
};

struct SimilarityConfig {
  double alpha = 0.5;   // weight of disparity agreement vs. feature cosine
  double d_max = 192.0; // disparity normaliser at the patch scale
  void validate() const;
  /// d_max given at full resolution, divided by the patch scale.
  static SimilarityConfig at_scale(double alpha, double d_max_full, int64_t scale);
};

/// Fused sequence: right-view tokens in index order (fused groups in place),
/// then unmatched left-view tokens in index order. Length 2N - n.
struct MergedTokens {
  Tensor tokens;  // [2N - n, C]
  int64_t tokens_per_view = 0;
  GridShape grid;
  int64_t scale = 1;
  Tensor disparity;  // carried through for unmerge
};

/// Site attention: maps a token sequence [L, C] to [L, C].
using TokenTransform = std::function<Tensor(const Tensor&)>;

std::pair<TokenSet, TokenSet> partition(const PatchSet& patches);

/// alpha · disparity agreement + (1 - alpha) · cosine; a zero-norm feature
/// vector has cosine 0.
double patch_similarity(std::span<const double> src_feature, double src_disparity,
                        std::span<const double> dst_feature, double dst_disparity, const SimilarityConfig& cfg);

/// Throws ArgumentError when n exceeds the source set.
MatchMap match_top_n(const TokenSet& src, const TokenSet& dst, int64_t n, const SimilarityConfig& cfg);

/// When several source tokens link to the same destination, the group is
/// averaged as a whole (destination plus every linked source).
MergedTokens merge(const PatchSet& patches, const MatchMap& matches);

PatchSet unmerge(const MergedTokens& merged, const MatchMap& matches);

/// unmerge(attn(merge(P, E)), E) with E = match_top_n(partition(P), n).
/// Throws ContractError when attn changes the sequence shape.
PatchSet apply_consistency(const PatchSet& patches, int64_t n, const SimilarityConfig& cfg,
                           const TokenTransform& attn);

}  // namespace wxs::dfm
