#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "conmt/embedspace.hpp"

namespace conmt {

/// Exact k nearest neighbours (by cosine, self excluded) for every token.
struct NeighborProfile {
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // rows() * k
  std::vector<float> similarities;     // rows() * k, descending per token

  std::size_t size() const noexcept { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::uint32_t> neighbors(std::size_t token) const {
    return {indices.data() + token * k, k};
  }
  std::span<const float> sims(std::size_t token) const {
    return {similarities.data() + token * k, k};
  }
};

/// Ties are broken by lower token index. Throws InvalidArgument if k >= |V|.
NeighborProfile knn_profile(const EmbeddingTable& table, std::size_t k);

/// Frequency ranks of each token's nearest and 5th-nearest neighbour (the
/// k-th when the profile holds fewer than five).
struct NeighborRanks {
  std::vector<std::uint32_t> nn_rank;
  std::vector<std::uint32_t> nn5_rank;
};

NeighborRanks neighbor_rank_profile(const NeighborProfile& profile,
                                    const Vocab& vocab);

/// Summary of y grouped into contiguous bins over x (a frequency rank).
struct BinnedSeries {
  std::size_t bin_size = 0;
  std::vector<std::uint32_t> lower;  // inclusive bin start
  std::vector<std::uint32_t> upper;  // exclusive bin end
  std::vector<std::size_t> count;
  std::vector<double> mean;
  std::vector<double> p25;
  std::vector<double> median;
  std::vector<double> p75;

  std::size_t bins() const noexcept { return lower.size(); }
};

inline constexpr std::size_t kDefaultBinSize = 500;

/// Bins cover [0, max(x)] in steps of bin_size. Percentiles use linear
/// interpolation between order statistics; empty bins report NaN.
BinnedSeries binned_stats(std::span<const std::uint32_t> x,
                          std::span<const double> y,
                          std::size_t bin_size = kDefaultBinSize);

/// All unordered pairs (i < j) with cosine >= 1 - eps, sorted.
std::vector<std::pair<std::uint32_t, std::uint32_t>> near_duplicates(
    const EmbeddingTable& table, double eps = 1e-4);

/// Kolmogorov-Smirnov distance between a sample of ranks in [0, n) and the
/// discrete uniform distribution on that range.
double ks_uniform_statistic(std::span<const std::uint32_t> ranks, std::size_t n);

}  // namespace conmt
