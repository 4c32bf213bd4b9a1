#include "conmt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conmt/error.hpp"
#include "similarity_kernel.hpp"

namespace conmt {

NeighborProfile knn_profile(const EmbeddingTable& table, std::size_t k) {
  const std::size_t n = table.rows();
  if (k == 0 || k >= n) {
    throw InvalidArgument("knn_profile: need 0 < k < |V|, got k=" +
                          std::to_string(k) + " with |V|=" + std::to_string(n));
  }
  detail::DoubleRows rows(table);
  std::vector<detail::TopK> best(n, detail::TopK(k));
  detail::scan_all_pairs(rows, [&](std::size_t q, std::size_t c, double sim) {
    if (q != c) best[q].push(sim, static_cast<std::uint32_t>(c));
  });

  NeighborProfile out;
  out.k = k;
  out.indices.resize(n * k);
  out.similarities.resize(n * k);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < k; ++j) {
      out.indices[q * k + j] = best[q].items[j].second;
      out.similarities[q * k + j] = static_cast<float>(best[q].items[j].first);
    }
  }
  return out;
}

NeighborRanks neighbor_rank_profile(const NeighborProfile& profile,
                                    const Vocab& vocab) {
  const std::size_t n = profile.size();
  if (n != vocab.size()) {
    throw InvalidArgument("neighbor_rank_profile: profile covers " +
                          std::to_string(n) + " tokens but vocab has " +
                          std::to_string(vocab.size()));
  }
  if (n < 2 || profile.k == 0) {
    throw InvalidArgument("neighbor_rank_profile: no neighbours exist");
  }
  const std::size_t fifth = std::min<std::size_t>(5, profile.k) - 1;
  NeighborRanks out;
  out.nn_rank.resize(n);
  out.nn5_rank.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    auto nb = profile.neighbors(t);
    out.nn_rank[t] = vocab.rank_of(nb[0]);
    out.nn5_rank[t] = vocab.rank_of(nb[fifth]);
  }
  return out;
}

namespace {

double percentile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

}  // namespace

BinnedSeries binned_stats(std::span<const std::uint32_t> x,
                          std::span<const double> y, std::size_t bin_size) {
  if (x.size() != y.size()) {
    throw InvalidArgument("binned_stats: x and y lengths differ");
  }
  if (x.empty()) throw InvalidArgument("binned_stats: empty input");
  if (bin_size == 0) throw InvalidArgument("binned_stats: bin_size must be >= 1");

  const std::size_t max_x = *std::max_element(x.begin(), x.end());
  const std::size_t bins = max_x / bin_size + 1;
  std::vector<std::vector<double>> groups(bins);
  for (std::size_t i = 0; i < x.size(); ++i) groups[x[i] / bin_size].push_back(y[i]);

  BinnedSeries out;
  out.bin_size = bin_size;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < bins; ++b) {
    auto& g = groups[b];
    out.lower.push_back(static_cast<std::uint32_t>(b * bin_size));
    out.upper.push_back(static_cast<std::uint32_t>((b + 1) * bin_size));
    out.count.push_back(g.size());
    if (g.empty()) {
      out.mean.push_back(nan);
      out.p25.push_back(nan);
      out.median.push_back(nan);
      out.p75.push_back(nan);
      continue;
    }
    std::sort(g.begin(), g.end());
    double s = 0.0;
    for (double v : g) s += v;
    out.mean.push_back(s / static_cast<double>(g.size()));
    out.p25.push_back(percentile_sorted(g, 0.25));
    out.median.push_back(percentile_sorted(g, 0.5));
    out.p75.push_back(percentile_sorted(g, 0.75));
  }
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> near_duplicates(
    const EmbeddingTable& table, double eps) {
  const std::size_t n = table.rows();
  detail::DoubleRows rows(table);
  const double threshold = 1.0 - eps;
  std::vector<std::vector<std::uint32_t>> partners(n);
  detail::scan_all_pairs(rows, [&](std::size_t q, std::size_t c, double sim) {
    if (c > q && sim >= threshold) partners[q].push_back(static_cast<std::uint32_t>(c));
  });
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t q = 0; q < n; ++q) {
    for (auto c : partners[q]) out.emplace_back(static_cast<std::uint32_t>(q), c);
  }
  return out;
}

double ks_uniform_statistic(std::span<const std::uint32_t> ranks, std::size_t n) {
  if (ranks.empty() || n == 0) throw InvalidArgument("ks statistic: empty input");
  std::vector<std::size_t> counts(n, 0);
  for (auto r : ranks) {
    if (r >= n) throw InvalidArgument("ks statistic: rank out of range");
    ++counts[r];
  }
  const auto m = static_cast<double>(ranks.size());
  double cum = 0.0;
  double worst = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    cum += static_cast<double>(counts[v]);
    const double empirical = cum / m;
    const double model = static_cast<double>(v + 1) / static_cast<double>(n);
    worst = std::max(worst, std::abs(empirical - model));
  }
  return worst;
}

}  // namespace conmt
