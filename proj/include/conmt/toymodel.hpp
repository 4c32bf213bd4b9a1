#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conmt/decoder.hpp"
#include "conmt/embedspace.hpp"
#include "conmt/types.hpp"

namespace conmt {

/// Token 0 is the end-of-sequence symbol in both source and target vocabularies.
inline constexpr TokenId kEos = 0;

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class TaskKind { kCopy, kReverse, kLexicon };

TaskKind parse_task_kind(std::string_view name);
std::string_view to_string(TaskKind kind);

struct ToyTask {
  TaskKind kind = TaskKind::kLexicon;
  /// Vocabulary sizes including EOS. Copy and reverse use src_vocab for both.
  std::size_t src_vocab = 2000;
  std::size_t tgt_vocab = 2000;
  /// Exponent of the Zipf law over source content tokens; 0 draws uniformly.
  double zipf = 1.2;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t pairs = 10000;
  std::uint64_t seed = 1;
};

struct Pair {
  Sentence src;  // no EOS
  Sentence tgt;  // no EOS; the model predicts EOS after the last token
};

struct Dataset {
  std::vector<Pair> pairs;
  Vocab src_vocab;
  Vocab tgt_vocab;  // frequencies counted over all pairs, one EOS per pair
  /// Source-to-target token map for lexicon tasks (identity otherwise).
  std::vector<TokenId> mapping;
};

Dataset gen_task(const ToyTask& task);

/// Deterministic shuffle-and-split into (train, held-out).
std::pair<std::vector<Pair>, std::vector<Pair>> split_heldout(
    const std::vector<Pair>& pairs, double heldout_fraction, std::uint64_t seed);

/// Target vocabulary with frequencies recounted over `pairs` (EOS included).
Vocab count_target_frequencies(const std::vector<Pair>& pairs, const Vocab& base);

// ---------------------------------------------------------------------------
// Model

enum class LossKind { kCosine, kDiscrete };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

struct ModelConfig {
  std::size_t src_vocab = 0;
  /// Hidden state width; 0 means "same as the target dimension".
  std::size_t hidden = 0;
  /// Positions beyond this are clamped to the last one.
  std::size_t max_positions = 16;
  std::uint64_t seed = 1;
};

/// Trainable tensors of ToySeq2Seq, flattened row-major.
struct ToyParams {
  std::vector<double> src_emb;  // src_vocab x d
  std::vector<double> pos;      // P x P alignment logits (target pos, source pos)
  std::vector<double> w;        // H x (H + 2d) recurrent weights
  std::vector<double> b;        // H
  std::vector<double> u;        // d x H output map
  std::vector<double> bo;       // d
  std::vector<double> targets;  // |V_t| x d; only updated when trainable

  /// Named views in a fixed order, for gradient checks and serialization.
  std::vector<std::pair<std::string_view, std::vector<double>*>> tensors();
  std::vector<std::pair<std::string_view, const std::vector<double>*>> tensors() const;
  void zero();
};

/// Desk-scale continuous-output encoder-decoder.
///
/// Encoder: source embeddings (with a source EOS appended) pooled by a
/// softmax over learned position logits, giving one context vector per
/// target position. Decoder: state_i = tanh(W [state_{i-1}; E(y_{i-1}); c_i] + b)
/// and h_i = U state_i + bo, compared against the target table.
class ToySeq2Seq {
 public:
  ToySeq2Seq(const ModelConfig& config, std::shared_ptr<const EmbeddingTable> targets);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t src_vocab() const noexcept { return src_vocab_; }
  std::size_t tgt_vocab() const noexcept { return tgt_vocab_; }
  std::size_t max_positions() const noexcept { return positions_; }
  std::size_t parameter_count() const noexcept;

  const ToyParams& params() const noexcept { return params_; }
  ToyParams& params() noexcept { return params_; }

  bool targets_trainable() const noexcept { return targets_trainable_; }
  void set_targets_trainable(bool on) noexcept { targets_trainable_ = on; }

  /// The table the model was built with (never modified).
  const std::shared_ptr<const EmbeddingTable>& initial_targets() const noexcept {
    return initial_targets_;
  }
  /// Current target rows as a table (equal to the initial table when frozen).
  EmbeddingTable export_targets() const;

  /// Hidden states h_1..h_{n+1} for a prefix of length n (teacher forcing).
  std::vector<std::vector<double>> forward(std::span<const TokenId> src,
                                           std::span<const TokenId> prefix) const;

  /// Mean per-token loss over the batch (EOS positions included). When `grad`
  /// is non-null, accumulates d(mean loss)/d(params) into it.
  double loss(std::span<const Pair* const> batch, LossKind kind,
              ToyParams* grad = nullptr) const;

  /// A StepFunction for the decoder. It caches recurrent states by prefix, so
  /// greedy and beam search cost one cell step per emitted token. Not
  /// thread-safe; make one per thread.
  StepFunction step_function() const;

  /// Checkpoint blob: "CTOY", u32 version, u32 src_vocab, u32 tgt_vocab,
  /// u32 d, u32 hidden, u32 positions, u32 trainable flag, then each tensor as
  /// little-endian f64 in ToyParams::tensors() order.
  void save(std::ostream& out) const;
  static ToySeq2Seq load(std::istream& in, std::shared_ptr<const EmbeddingTable> targets);

 private:
  struct Trace;
  ToySeq2Seq() = default;
  void check_tokens(std::span<const TokenId> src, std::span<const TokenId> tgt) const;
  void run(std::span<const TokenId> src, std::span<const TokenId> prefix,
           std::size_t steps, Trace& trace) const;
  void cell(const double* prev_state, const double* input, const double* context,
            double* state_out, double* h_out) const;
  void context_at(std::span<const TokenId> src_eos, std::size_t step, double* ctx,
                  double* attn) const;

  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t src_vocab_ = 0;
  std::size_t tgt_vocab_ = 0;
  std::size_t positions_ = 0;
  bool targets_trainable_ = false;
  ToyParams params_;
  std::shared_ptr<const EmbeddingTable> initial_targets_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  LossKind loss = LossKind::kCosine;
  bool targets_trainable = false;
  std::uint64_t seed = 1;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip = 1.0;
  /// Length cap for held-out greedy decoding (len(src) + this).
  std::size_t eval_max_extra = kDefaultMaxExtra;
  /// Skip held-out decoding (accuracy reported as NaN).
  bool evaluate = true;
};

/// Applies one SGD step on the batch and returns its mean loss before the
/// update. Throws TrainingFailure on a non-finite loss.
double train_step(ToySeq2Seq& model, std::span<const Pair* const> batch,
                  const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;              // mean training loss over the epoch
  double heldout_accuracy = 0.0;  // position-wise token accuracy, greedy decode
  double mean_target_cosine = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  bool diverged = false;
  std::string report;
};

/// Greedy-decodes each source sentence with the model's current targets.
std::vector<Sentence> decode_all(const ToySeq2Seq& model,
                                 const std::vector<Pair>& pairs,
                                 std::size_t max_extra = kDefaultMaxExtra);

/// Fraction of reference positions reproduced exactly at the same position.
double token_accuracy(const std::vector<Sentence>& hyps, const std::vector<Pair>& refs);

/// Trains for config.epochs epochs (shuffled mini-batches, fixed seed).
/// Stops early, with `diverged` set, once the epoch loss exceeds ten times
/// the first epoch's loss for three consecutive epochs. `on_epoch` sees each
/// epoch's metrics as they are produced.
TrainResult train(ToySeq2Seq& model, const std::vector<Pair>& train_pairs,
                  const std::vector<Pair>& heldout, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// JSON object for one epoch (one line of the metrics file).
std::string to_json_line(const EpochMetrics& m);

/// Mean pairwise target cosine before training and after every epoch.
std::vector<double> collapse_experiment(ToySeq2Seq& model,
                                        const std::vector<Pair>& train_pairs,
                                        const TrainConfig& config);

}  // namespace conmt
