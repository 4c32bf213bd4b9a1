#include "conmt/embedspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "conmt/error.hpp"
#include "conmt/rng.hpp"

namespace conmt {

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens, std::vector<std::uint64_t> freq)
    : tokens_(std::move(tokens)), freq_(std::move(freq)) {
  if (tokens_.size() != freq_.size()) {
    throw InvalidArgument("vocab: " + std::to_string(tokens_.size()) +
                          " tokens but " + std::to_string(freq_.size()) +
                          " frequency counts");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InvalidArgument("vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
  order_.resize(tokens_.size());
  std::iota(order_.begin(), order_.end(), TokenId{0});
  std::stable_sort(order_.begin(), order_.end(), [this](TokenId a, TokenId b) {
    return freq_[a] > freq_[b];
  });
  rank_.resize(tokens_.size());
  for (std::size_t r = 0; r < order_.size(); ++r) {
    rank_[order_[r]] = static_cast<std::uint32_t>(r);
  }
}

Vocab Vocab::identity(std::size_t n) {
  std::vector<std::string> tokens(n);
  std::vector<std::uint64_t> freq(n);
  for (std::size_t i = 0; i < n; ++i) {
    tokens[i] = std::to_string(i);
    freq[i] = n - i;
  }
  return Vocab(std::move(tokens), std::move(freq));
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// TableKind

std::string_view to_string(TableKind kind) {
  switch (kind) {
    case TableKind::kUniform: return "uniform";
    case TableKind::kHypercube: return "hypercube";
    case TableKind::kCombined: return "combined";
    case TableKind::kClumped: return "clumped";
    case TableKind::kImported: return "imported";
  }
  return "imported";
}

TableKind parse_table_kind(std::string_view name) {
  for (auto k : {TableKind::kUniform, TableKind::kHypercube, TableKind::kCombined,
                 TableKind::kClumped, TableKind::kImported}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown table kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// EmbeddingTable

namespace {

std::vector<std::string> index_names(std::size_t n) {
  std::vector<std::string> names(n);
  for (std::size_t i = 0; i < n; ++i) names[i] = std::to_string(i);
  return names;
}

double norm2(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

// Writes u/|u| into `out` (double math, f32 result). Returns |u|.
double normalize_into(std::span<const double> u, std::span<float> out) {
  double s = 0.0;
  for (double x : u) s += x * x;
  const double n = std::sqrt(s);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<float>(u[i] / n);
  return n;
}

void check_dims(std::size_t vocab_size, std::size_t dim) {
  if (vocab_size == 0) throw InvalidArgument("vocab_size must be positive");
  if (dim < 2) {
    throw InvalidArgument("embedding dimension must be >= 2, got " +
                          std::to_string(dim));
  }
}

std::string row_key(std::span<const float> row) {
  return std::string(reinterpret_cast<const char*>(row.data()),
                     row.size() * sizeof(float));
}

void fill_gaussian_row(Rng& rng, std::span<double> u) {
  for (auto& x : u) x = rng.normal();
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<float> data,
                               TableKind kind, std::optional<std::uint64_t> seed,
                               std::vector<std::string> tokens)
    : dim_(dim), data_(std::move(data)), kind_(kind), seed_(seed) {
  if (dim_ == 0 || data_.size() % dim_ != 0) {
    throw InvalidArgument("embedding table: data size " +
                          std::to_string(data_.size()) +
                          " is not a multiple of dim " + std::to_string(dim_));
  }
  set_tokens(std::move(tokens));
}

void EmbeddingTable::set_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) {
    tokens_ = index_names(rows());
  } else if (tokens.size() != rows()) {
    throw InvalidArgument("embedding table: " + std::to_string(tokens.size()) +
                          " token names for " + std::to_string(rows()) + " rows");
  } else {
    tokens_ = std::move(tokens);
  }
}

double EmbeddingTable::max_norm_deviation() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < rows(); ++i) {
    worst = std::max(worst, std::abs(std::sqrt(norm2(row(i))) - 1.0));
  }
  return worst;
}

bool EmbeddingTable::same_rows(const EmbeddingTable& other) const noexcept {
  return dim_ == other.dim_ && data_.size() == other.data_.size() &&
         std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// BitPackedTable

BitPackedTable::BitPackedTable(std::size_t dim, std::size_t rows)
    : dim_(dim), rows_(rows), words_((dim + 63) / 64), bits_(rows * words_, 0) {}

BitPackedTable BitPackedTable::from_signs(const EmbeddingTable& table) {
  BitPackedTable out(table.dim(), table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto packed = out.pack(table.row(r));
    std::copy(packed.begin(), packed.end(), out.plane(r).begin());
  }
  return out;
}

EmbeddingTable BitPackedTable::to_table(std::optional<std::uint64_t> seed) const {
  const auto scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dim_)));
  std::vector<float> data(rows_ * dim_);
  for (std::size_t r = 0; r < rows_; ++r) {
    auto p = plane(r);
    for (std::size_t i = 0; i < dim_; ++i) {
      const bool neg = (p[i / 64] >> (i % 64)) & 1U;
      data[r * dim_ + i] = neg ? -scale : scale;
    }
  }
  return EmbeddingTable(dim_, std::move(data), TableKind::kHypercube, seed);
}

std::uint32_t hamming(std::span<const std::uint64_t> a,
                      std::span<const std::uint64_t> b) noexcept {
  std::uint32_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

// ---------------------------------------------------------------------------
// Generators

EmbeddingTable gen_uniform(std::size_t vocab_size, std::size_t dim,
                           std::uint64_t seed) {
  check_dims(vocab_size, dim);
  std::vector<float> data(vocab_size * dim);
  const auto n = static_cast<std::int64_t>(vocab_size);
#pragma omp parallel
  {
    std::vector<double> u(dim);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      Rng rng(seed, static_cast<std::uint64_t>(i));
      fill_gaussian_row(rng, u);
      normalize_into(u, {data.data() + i * dim, dim});
    }
  }
  EmbeddingTable table(dim, std::move(data), TableKind::kUniform, seed);

  std::unordered_set<std::string> seen;
  seen.reserve(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (!seen.insert(row_key(table.row(i))).second) {
      throw std::logic_error("gen_uniform: duplicate row " + std::to_string(i));
    }
  }
  return table;
}

HypercubeTable gen_hypercube(std::size_t vocab_size, std::size_t dim,
                             std::uint64_t seed) {
  check_dims(vocab_size, dim);
  if (dim < 64 && vocab_size > (std::uint64_t{1} << dim)) {
    throw InvalidArgument("gen_hypercube: " + std::to_string(vocab_size) +
                          " distinct rows do not exist in dimension " +
                          std::to_string(dim));
  }
  BitPackedTable bits(dim, vocab_size);
  std::unordered_set<std::string> seen;
  seen.reserve(vocab_size);
  for (std::size_t r = 0; r < vocab_size; ++r) {
    Rng rng(seed, r);
    auto plane = bits.plane(r);
    for (;;) {
      std::fill(plane.begin(), plane.end(), 0);
      for (std::size_t i = 0; i < dim; ++i) {
        if (rng.coin()) plane[i / 64] |= std::uint64_t{1} << (i % 64);
      }
      std::string key(reinterpret_cast<const char*>(plane.data()),
                      plane.size() * sizeof(std::uint64_t));
      if (seen.insert(std::move(key)).second) break;
    }
  }
  auto table = bits.to_table(seed);
  return {std::move(table), std::move(bits)};
}

EmbeddingTable combine(const EmbeddingTable& pre, const EmbeddingTable& rand,
                       double alpha) {
  if (pre.rows() != rand.rows() || pre.dim() != rand.dim()) {
    throw InvalidArgument("combine: table shapes differ (" +
                          std::to_string(pre.rows()) + "x" +
                          std::to_string(pre.dim()) + " vs " +
                          std::to_string(rand.rows()) + "x" +
                          std::to_string(rand.dim()) + ")");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("combine: alpha must lie in [0, 1]");
  }
  const std::size_t d = pre.dim();
  auto seed = rand.seed();
  if (alpha == 1.0) {
    return EmbeddingTable(d, {pre.data().begin(), pre.data().end()},
                          TableKind::kCombined, seed, pre.tokens());
  }
  if (alpha == 0.0) {
    return EmbeddingTable(d, {rand.data().begin(), rand.data().end()},
                          TableKind::kCombined, seed, pre.tokens());
  }
  std::vector<float> data(pre.rows() * d);
  std::vector<double> mix(d);
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    auto a = pre.row(r);
    auto b = rand.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      mix[i] = alpha * static_cast<double>(a[i]) +
               (1.0 - alpha) * static_cast<double>(b[i]);
    }
    double s = 0.0;
    for (double x : mix) s += x * x;
    if (std::sqrt(s) <= 1e-12) {
      throw DegenerateRow("combine: row " + std::to_string(r) + " ('" +
                              pre.tokens()[r] + "') mixes to the zero vector",
                          r);
    }
    normalize_into(mix, {data.data() + r * d, d});
  }
  return EmbeddingTable(d, std::move(data), TableKind::kCombined, seed,
                        pre.tokens());
}

EmbeddingTable gen_clumped(std::size_t vocab_size, std::size_t dim,
                           std::uint64_t seed, double clump_fraction,
                           double clump_cos, const Vocab* vocab) {
  check_dims(vocab_size, dim);
  if (!(clump_fraction > 0.0 && clump_fraction < 1.0)) {
    throw InvalidArgument("gen_clumped: clump_fraction must lie in (0, 1)");
  }
  if (!(clump_cos > 0.0 && clump_cos < 1.0)) {
    throw InvalidArgument("gen_clumped: clump_cos must lie in (0, 1)");
  }
  if (vocab != nullptr && vocab->size() != vocab_size) {
    throw InvalidArgument("gen_clumped: vocab size does not match vocab_size");
  }
  auto token_at_rank = [&](std::size_t r) -> std::size_t {
    return vocab != nullptr ? vocab->at_rank(static_cast<std::uint32_t>(r)) : r;
  };

  const auto n_rare = static_cast<std::size_t>(
      std::llround(clump_fraction * static_cast<double>(vocab_size)));
  const std::size_t n_frequent = vocab_size - n_rare;

  std::vector<double> rows(vocab_size * dim);
  std::vector<double> u(dim);
  auto set_uniform = [&](std::size_t token) {
    Rng rng(seed, token);
    fill_gaussian_row(rng, u);
    double s = 0.0;
    for (double x : u) s += x * x;
    const double n = std::sqrt(s);
    for (std::size_t i = 0; i < dim; ++i) rows[token * dim + i] = u[i] / n;
  };

  for (std::size_t r = 0; r < n_frequent; ++r) set_uniform(token_at_rank(r));

  // Anchors are drawn from a separate stream so the frequent rows above stay
  // identical to a uniform table with the same seed.
  Rng anchor_rng(seed, 0xC1u | (std::uint64_t{1} << 63));
  const double sin_part = std::sqrt(1.0 - clump_cos * clump_cos);
  for (std::size_t r = n_frequent; r < vocab_size; ++r) {
    const std::size_t token = token_at_rank(r);
    if (r == n_frequent) {
      set_uniform(token);
      continue;
    }
    const std::size_t anchor =
        token_at_rank(n_frequent + anchor_rng.below(r - n_frequent));
    const double* a = &rows[anchor * dim];
    Rng rng(seed, token);
    double s;
    do {
      fill_gaussian_row(rng, u);
      double proj = 0.0;
      for (std::size_t i = 0; i < dim; ++i) proj += u[i] * a[i];
      s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        u[i] -= proj * a[i];
        s += u[i] * u[i];
      }
    } while (s < 1e-20);
    const double n = std::sqrt(s);
    double* out = &rows[token * dim];
    double t = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] = clump_cos * a[i] + sin_part * u[i] / n;
      t += out[i] * out[i];
    }
    t = std::sqrt(t);
    for (std::size_t i = 0; i < dim; ++i) out[i] /= t;
  }

  std::vector<float> data(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) data[i] = static_cast<float>(rows[i]);
  std::vector<std::string> names;
  if (vocab != nullptr) names = vocab->tokens();
  return EmbeddingTable(dim, std::move(data), TableKind::kClumped, seed,
                        std::move(names));
}

double mean_pairwise_cosine(const EmbeddingTable& table) {
  const std::size_t n = table.rows();
  if (n < 2) return 1.0;
  const std::size_t d = table.dim();
  std::vector<double> sum(d, 0.0);
  double self = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = table.row(r);
    const double nr = std::sqrt(norm2(row));
    for (std::size_t i = 0; i < d; ++i) sum[i] += row[i] / nr;
    self += 1.0;
  }
  double total = 0.0;
  for (double x : sum) total += x * x;
  return (total - self) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace conmt
