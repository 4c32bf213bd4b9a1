#pragma once

// Exact blocked cosine scan shared by geometry and the flat index.
//
// Every dot product is accumulated in double, coordinate 0 first, one
// coordinate at a time. Products of two floats are exact in double, so the
// result matches a naive sequential double loop bit for bit; the blocking only
// changes how many pairs are in flight, never the order within a pair.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "conmt/embedspace.hpp"

namespace conmt::detail {

struct DoubleRows {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> data;
  std::vector<double> norm;

  explicit DoubleRows(const EmbeddingTable& table)
      : n(table.rows()), d(table.dim()), data(n * d), norm(n) {
    auto src = table.data();
    for (std::size_t i = 0; i < src.size(); ++i) data[i] = src[i];
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += data[r * d + t] * data[r * d + t];
      norm[r] = std::sqrt(s);
    }
  }
  const double* row(std::size_t i) const { return data.data() + i * d; }
};

inline constexpr std::size_t kPanel = 4;      // candidates per transposed panel
inline constexpr std::size_t kQueryBlock = 8; // queries per register tile
inline constexpr std::size_t kChunk = 256;    // candidates per cache chunk

// Candidates [begin, end) transposed into panels: panel p holds coordinate t
// of candidates begin+4p..begin+4p+3 at [p*d*4 + t*4 + j]. Missing slots are 0.
inline void pack_panels(const DoubleRows& rows, std::size_t begin, std::size_t end,
                        std::vector<double>& out) {
  const std::size_t d = rows.d;
  const std::size_t panels = (end - begin + kPanel - 1) / kPanel;
  out.assign(panels * d * kPanel, 0.0);
  for (std::size_t c = begin; c < end; ++c) {
    const std::size_t p = (c - begin) / kPanel;
    const std::size_t j = (c - begin) % kPanel;
    const double* r = rows.row(c);
    double* dst = out.data() + p * d * kPanel + j;
    for (std::size_t t = 0; t < d; ++t) dst[t * kPanel] = r[t];
  }
}

// Calls visit(query, candidate, cosine) for every query in [q_begin, q_end)
// and every candidate in the packed chunk starting at c_begin.
template <typename Visit>
void scan_chunk(const DoubleRows& queries, std::size_t q_begin, std::size_t q_end,
                const DoubleRows& cands, std::size_t c_begin, std::size_t c_end,
                const std::vector<double>& panels, Visit&& visit) {
  const std::size_t d = queries.d;
  const std::size_t n_panels = (c_end - c_begin + kPanel - 1) / kPanel;
  for (std::size_t q0 = q_begin; q0 < q_end; q0 += kQueryBlock) {
    const std::size_t qn = std::min(kQueryBlock, q_end - q0);
    const double* q[kQueryBlock];
    for (std::size_t a = 0; a < kQueryBlock; ++a) {
      q[a] = queries.row(q0 + std::min(a, qn - 1));
    }
    for (std::size_t p = 0; p < n_panels; ++p) {
      const double* pan = panels.data() + p * d * kPanel;
      double acc[kQueryBlock][kPanel] = {};
      for (std::size_t t = 0; t < d; ++t) {
        const double* c = pan + t * kPanel;
        for (std::size_t a = 0; a < kQueryBlock; ++a) {
          const double x = q[a][t];
          for (std::size_t j = 0; j < kPanel; ++j) acc[a][j] += x * c[j];
        }
      }
      const std::size_t cbase = c_begin + p * kPanel;
      const std::size_t cn = std::min(kPanel, c_end - cbase);
      for (std::size_t a = 0; a < qn; ++a) {
        const std::size_t qi = q0 + a;
        for (std::size_t j = 0; j < cn; ++j) {
          const std::size_t ci = cbase + j;
          visit(qi, ci, acc[a][j] / (queries.norm[qi] * cands.norm[ci]));
        }
      }
    }
  }
}

// Scans all (query, candidate) pairs of one table against itself. Queries are
// split into contiguous stripes, one per thread; each query is visited by one
// thread only, in increasing candidate order.
template <typename Visit>
void scan_all_pairs(const DoubleRows& rows, Visit&& visit) {
  const auto n = static_cast<std::int64_t>(rows.n);
  const std::int64_t stripe = static_cast<std::int64_t>(kQueryBlock) * 16;
#pragma omp parallel
  {
    std::vector<double> panels;
    for (std::size_t c0 = 0; c0 < rows.n; c0 += kChunk) {
      const std::size_t c1 = std::min(rows.n, c0 + kChunk);
      pack_panels(rows, c0, c1, panels);
#pragma omp for schedule(static) nowait
      for (std::int64_t s = 0; s < n; s += stripe) {
        const auto q1 = static_cast<std::size_t>(std::min(n, s + stripe));
        scan_chunk(rows, static_cast<std::size_t>(s), q1, rows, c0, c1, panels, visit);
      }
    }
  }
}

// Keeps the k best (similarity desc, index asc) entries.
struct TopK {
  std::size_t k = 0;
  std::vector<std::pair<double, std::uint32_t>> items;

  explicit TopK(std::size_t k_) : k(k_) { items.reserve(k_ + 1); }

  static bool better(const std::pair<double, std::uint32_t>& a,
                     const std::pair<double, std::uint32_t>& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  }

  void push(double sim, std::uint32_t idx) {
    std::pair<double, std::uint32_t> e{sim, idx};
    if (items.size() == k && !better(e, items.back())) return;
    auto pos = std::upper_bound(items.begin(), items.end(), e, better);
    items.insert(pos, e);
    if (items.size() > k) items.pop_back();
  }
};

}  // namespace conmt::detail
