#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "conmt/embedspace.hpp"
#include "conmt/scoring.hpp"
#include "conmt/types.hpp"

namespace conmt {

struct Neighbor {
  TokenId token = 0;
  double cosine = 0.0;
  bool operator==(const Neighbor&) const = default;
};

/// Flat exact cosine index over an embedding table.
///
/// The table is split into contiguous shards that are scanned independently
/// and merged by (cosine desc, token asc), so results never depend on the
/// shard count. Hypercube tables also carry bit-packed sign planes for the
/// Hamming prefilter.
class NNIndex {
 public:
  NNIndex(std::shared_ptr<const EmbeddingTable> table, std::size_t shards = 1);

  const EmbeddingTable& table() const noexcept { return *table_; }
  std::shared_ptr<const EmbeddingTable> table_ptr() const noexcept { return table_; }
  std::size_t size() const noexcept { return table_->rows(); }
  std::size_t dim() const noexcept { return table_->dim(); }
  std::size_t shards() const noexcept { return shard_bounds_.size() - 1; }
  bool has_planes() const noexcept { return planes_.has_value(); }
  const BitPackedTable& planes() const { return planes_.value(); }

  /// Exact top-k by cosine. Throws DegenerateHiddenState for |h| <= 1e-12 and
  /// InvalidArgument if k is 0 or exceeds |V|.
  std::vector<Neighbor> nearest(std::span<const double> h, std::size_t k) const;

  /// Ranks every token by Hamming distance between the sign pattern of h and
  /// its plane, keeps the m closest (ties by token index), and re-ranks those
  /// by exact cosine. Throws UnsupportedIndex on non-hypercube tables.
  std::vector<Neighbor> nearest_prefiltered(std::span<const double> h,
                                            std::size_t k, std::size_t m) const;

  /// Cosine of h against one row, computed exactly as nearest() does.
  double cosine_to(TokenId token, std::span<const double> h) const;

 private:
  void scan(std::span<const double> h, double h_norm, std::size_t begin,
            std::size_t end, std::size_t k, std::vector<Neighbor>& out) const;

  std::shared_ptr<const EmbeddingTable> table_;
  std::vector<double> row_norm_;
  std::vector<std::size_t> shard_bounds_;
  std::optional<BitPackedTable> planes_;
};

NNIndex build_index(const EmbeddingTable& table, std::size_t shards = 1);
NNIndex build_index(std::shared_ptr<const EmbeddingTable> table,
                    std::size_t shards = 1);

/// A decoding model: hidden state for the next target position given the
/// source and the target prefix produced so far.
using StepFunction =
    std::function<std::vector<double>(std::span<const TokenId> src,
                                      std::span<const TokenId> prefix)>;

enum class LengthNorm { kNone, kPerToken };

LengthNorm parse_length_norm(std::string_view name);
std::string_view to_string(LengthNorm norm);

inline constexpr std::size_t kDefaultMaxExtra = 200;

struct DecodeOptions {
  TokenId eos = 0;
  /// Output is capped at len(src) + max_extra tokens.
  std::size_t max_extra = kDefaultMaxExtra;
  Kappa kappa{};
  ScoreSign sign = ScoreSign::kPlus;
  LengthNorm length_norm = LengthNorm::kNone;
  /// Number of finished hypotheses to return from beam_decode.
  std::size_t nbest = 1;
};

/// A (partial) output sequence. `tokens` never contains the EOS token.
struct Hypothesis {
  std::vector<TokenId> tokens;
  std::vector<double> step_scores;  // one per emitted token, EOS included
  double score = 0.0;               // sum of step_scores
  bool finished = false;            // emitted EOS

  double normalized(LengthNorm norm) const noexcept;
};

/// Emits the nearest token to each predicted hidden state until EOS or the
/// length cap. Step scores are filled with the vMF log-likelihood so the
/// result is comparable with beam_decode.
Hypothesis greedy_decode(const StepFunction& model, const NNIndex& index,
                         std::span<const TokenId> src,
                         const DecodeOptions& options = {});

/// Beam search over summed per-step vMF log-likelihoods. Each live hypothesis
/// proposes its top-B tokens by cosine; the best B proposals survive, those
/// ending in EOS are frozen as finished. Returns up to options.nbest finished
/// hypotheses, best first.
std::vector<Hypothesis> beam_decode(const StepFunction& model, const NNIndex& index,
                                    std::span<const TokenId> src, std::size_t beam,
                                    const DecodeOptions& options = {});

/// Sum of per-step vMF log-likelihoods of a given output (EOS appended when
/// `finished`), re-scored from the model.
double sequence_log_likelihood(const StepFunction& model, const NNIndex& index,
                               std::span<const TokenId> src,
                               std::span<const TokenId> output, bool finished,
                               const DecodeOptions& options = {});

}  // namespace conmt
