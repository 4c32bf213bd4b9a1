#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "conmt/types.hpp"

namespace conmt {

/// Token strings with training-set frequency counts.
///
/// Frequency rank 0 is the most frequent token; ties are broken by token
/// index so the ranking is a deterministic bijection on 0..size()-1.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens, std::vector<std::uint64_t> freq);

  /// Tokens named "0".."n-1" whose frequency order equals index order.
  static Vocab identity(std::size_t n);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::uint64_t freq(TokenId id) const { return freq_.at(id); }
  std::span<const std::uint64_t> freqs() const noexcept { return freq_; }

  /// Frequency rank of a token.
  std::uint32_t rank_of(TokenId id) const { return rank_.at(id); }
  /// Token holding the given frequency rank.
  TokenId at_rank(std::uint32_t rank) const { return order_.at(rank); }
  std::span<const std::uint32_t> ranks() const noexcept { return rank_; }

  std::optional<TokenId> find(std::string_view token) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freq_;
  std::vector<std::uint32_t> rank_;
  std::vector<TokenId> order_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class TableKind { kUniform, kHypercube, kCombined, kClumped, kImported };

std::string_view to_string(TableKind kind);
TableKind parse_table_kind(std::string_view name);

/// |V| x d matrix of unit-norm target embeddings, stored row-major in f32.
///
/// Immutable once built; safe to share across threads.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Takes ownership of `data` (rows()*dim floats). Token names default to
  /// the decimal row index. Does not renormalize; see `normalized()`.
  EmbeddingTable(std::size_t dim, std::vector<float> data, TableKind kind,
                 std::optional<std::uint64_t> seed = std::nullopt,
                 std::vector<std::string> tokens = {});

  std::size_t rows() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  TableKind kind() const noexcept { return kind_; }
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Largest |norm - 1| over all rows, computed in double.
  double max_norm_deviation() const;

  /// Byte-level equality of dimensions and row data.
  bool same_rows(const EmbeddingTable& other) const noexcept;

  void set_tokens(std::vector<std::string> tokens);

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  TableKind kind_ = TableKind::kImported;
  std::optional<std::uint64_t> seed_;
  std::vector<std::string> tokens_;
};

/// One d-bit sign plane per token; bit i is set when coordinate i is negative.
class BitPackedTable {
 public:
  BitPackedTable() = default;
  BitPackedTable(std::size_t dim, std::size_t rows);

  static BitPackedTable from_signs(const EmbeddingTable& table);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t words_per_row() const noexcept { return words_; }

  std::span<const std::uint64_t> plane(std::size_t i) const {
    return {bits_.data() + i * words_, words_};
  }
  std::span<std::uint64_t> plane(std::size_t i) {
    return {bits_.data() + i * words_, words_};
  }

  /// Sign bits of an arbitrary vector, packed like a plane. Zero counts as
  /// positive.
  template <typename T>
  std::vector<std::uint64_t> pack(std::span<const T> v) const;

  /// Rows with every coordinate ±1/sqrt(d).
  EmbeddingTable to_table(std::optional<std::uint64_t> seed = std::nullopt) const;

  bool operator==(const BitPackedTable&) const = default;

 private:
  std::size_t dim_ = 0;
  std::size_t rows_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

template <typename T>
std::vector<std::uint64_t> BitPackedTable::pack(std::span<const T> v) const {
  std::vector<std::uint64_t> out(words_, 0);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (v[i] < T(0)) out[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  return out;
}

/// Hamming distance between two packed planes of equal length.
std::uint32_t hamming(std::span<const std::uint64_t> a,
                      std::span<const std::uint64_t> b) noexcept;

struct HypercubeTable {
  EmbeddingTable table;
  BitPackedTable bits;
};

/// Rows u/|u| with u standard normal. Row i uses its own RNG stream so the
/// output does not depend on generation order.
EmbeddingTable gen_uniform(std::size_t vocab_size, std::size_t dim,
                           std::uint64_t seed);

/// Rows with independent ±1/sqrt(d) coordinates. A row equal to an earlier
/// row is redrawn from the next sub-stream until it is distinct.
HypercubeTable gen_hypercube(std::size_t vocab_size, std::size_t dim,
                             std::uint64_t seed);

/// normalize(alpha*pre_i + (1-alpha)*rand_i) per row. alpha = 0 and alpha = 1
/// return the corresponding input rows unchanged.
EmbeddingTable combine(const EmbeddingTable& pre, const EmbeddingTable& rand,
                       double alpha);

/// Synthetic stand-in for a pre-trained table whose rare tokens collapse onto
/// each other. The most frequent (1 - clump_fraction) share of the vocabulary
/// gets uniform rows; every other token is placed at cosine `clump_cos` from
/// an earlier-placed rare token chosen at random.
///
/// Frequency order is taken from `vocab`, or from token index when absent.
EmbeddingTable gen_clumped(std::size_t vocab_size, std::size_t dim,
                           std::uint64_t seed, double clump_fraction,
                           double clump_cos, const Vocab* vocab = nullptr);

/// Mean cosine over all unordered pairs of distinct rows.
double mean_pairwise_cosine(const EmbeddingTable& table);

}  // namespace conmt
