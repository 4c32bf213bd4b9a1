#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conmt/embedspace.hpp"
#include "conmt/types.hpp"

namespace conmt {

enum class BleuSmoothing { kNone, kExp };

/// Corpus BLEU over token-id sequences, in [0, 100].
///
/// Modified n-gram precisions are pooled over the corpus. With kExp, the k-th
/// order (counting from 1) that has no matches gets precision 1/(2^k * total);
/// an order with no hypothesis n-grams at all uses total = 1. The brevity
/// penalty is exp(1 - r/c) for c < r and 0 when the hypotheses are empty.
double corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                   std::size_t max_n = 4, BleuSmoothing smoothing = BleuSmoothing::kExp);

/// Contiguous frequency buckets: bucket b holds tokens whose training
/// frequency f satisfies boundaries[b-1] <= f < boundaries[b].
class BucketSpec {
 public:
  BucketSpec() = default;
  explicit BucketSpec(std::vector<std::uint64_t> boundaries);

  /// Three-way split at the 1/3 and 2/3 quantiles of frequency mass
  /// (tokens sorted by ascending frequency).
  static BucketSpec from_frequency_mass(const Vocab& vocab, std::size_t buckets = 3);

  std::size_t buckets() const noexcept { return boundaries_.size() + 1; }
  const std::vector<std::uint64_t>& boundaries() const noexcept { return boundaries_; }
  std::size_t bucket_of(std::uint64_t freq) const noexcept;
  std::string label(std::size_t bucket) const;

 private:
  std::vector<std::uint64_t> boundaries_;
};

struct MatchCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t gold = 0;  // reference tokens in the group (tp + fn)

  double precision() const noexcept;
  double recall() const noexcept;
  double f1() const noexcept;
  MatchCounts& operator+=(const MatchCounts& o) noexcept;
};

/// Per-bucket counts; the last entry is the out-of-vocabulary bucket.
struct F1Report {
  std::vector<std::string> labels;
  std::vector<MatchCounts> groups;

  std::size_t oov_index() const noexcept { return groups.size() - 1; }
  MatchCounts micro() const noexcept;
};

/// Position-wise token matching. Position i with reference token t is a true
/// positive iff the hypothesis also has t at i. Mismatched or surplus
/// hypothesis tokens are false positives in the hypothesis token's bucket;
/// missed or surplus reference tokens are false negatives in the reference
/// token's bucket. Token ids >= |V| land in the OOV bucket.
F1Report token_f1_by_bucket(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                            const Vocab& vocab, const BucketSpec& spec);

/// Same matching, grouped by class_of[token] in [0, num_classes). Tokens
/// outside class_of go to an extra trailing "oov" class.
F1Report class_f1(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                  std::span<const std::uint32_t> class_of, std::size_t num_classes);

/// TSV with header "bucket\ttp\tfp\tfn\tgold\tprecision\trecall\tf1".
std::string to_tsv(const F1Report& report);

}  // namespace conmt
