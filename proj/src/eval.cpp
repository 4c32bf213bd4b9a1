#include "conmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "conmt/error.hpp"

namespace conmt {

namespace {

using NGramCounts = std::map<std::vector<TokenId>, std::uint64_t>;

NGramCounts ngrams(const Sentence& s, std::size_t n) {
  NGramCounts out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++out[std::vector<TokenId>(s.begin() + static_cast<std::ptrdiff_t>(i),
                               s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

}  // namespace

double corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                   std::size_t max_n, BleuSmoothing smoothing) {
  if (hyps.size() != refs.size()) {
    throw InvalidArgument("corpus_bleu: " + std::to_string(hyps.size()) +
                          " hypotheses but " + std::to_string(refs.size()) +
                          " references");
  }
  if (max_n == 0) throw InvalidArgument("corpus_bleu: max_n must be >= 1");
  std::vector<std::uint64_t> correct(max_n, 0), total(max_n, 0);
  std::uint64_t sys_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    sys_len += hyps[s].size();
    ref_len += refs[s].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyps[s], n);
      const auto r = ngrams(refs[s], n);
      for (const auto& [g, c] : h) {
        total[n - 1] += c;
        auto it = r.find(g);
        if (it != r.end()) correct[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (ref_len == 0) throw InvalidArgument("corpus_bleu: all references are empty");
  if (sys_len == 0) return 0.0;

  double log_sum = 0.0;
  double smooth = 1.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    double p;
    if (correct[n] > 0) {
      p = static_cast<double>(correct[n]) / static_cast<double>(total[n]);
    } else if (smoothing == BleuSmoothing::kExp) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(std::max<std::uint64_t>(total[n], 1)));
    } else {
      return 0.0;
    }
    log_sum += std::log(p);
  }
  const double bp = sys_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) /
                                             static_cast<double>(sys_len))
                        : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

// ---------------------------------------------------------------------------
// Buckets

BucketSpec::BucketSpec(std::vector<std::uint64_t> boundaries)
    : boundaries_(std::move(boundaries)) {
  for (std::size_t i = 1; i < boundaries_.size(); ++i) {
    if (boundaries_[i] <= boundaries_[i - 1]) {
      throw InvalidArgument("bucket boundaries must be strictly increasing");
    }
  }
  if (!boundaries_.empty() && boundaries_.front() == 0) {
    throw InvalidArgument("bucket boundaries must be positive");
  }
}

BucketSpec BucketSpec::from_frequency_mass(const Vocab& vocab, std::size_t buckets) {
  if (buckets == 0) throw InvalidArgument("need at least one bucket");
  std::vector<std::uint64_t> f(vocab.freqs().begin(), vocab.freqs().end());
  std::sort(f.begin(), f.end());
  const double mass = static_cast<double>(std::accumulate(f.begin(), f.end(), std::uint64_t{0}));
  std::vector<std::uint64_t> bounds;
  double cum = 0.0;
  std::size_t next = 1;
  for (std::size_t i = 0; i < f.size() && next < buckets; ++i) {
    cum += static_cast<double>(f[i]);
    while (next < buckets &&
           cum >= mass * static_cast<double>(next) / static_cast<double>(buckets)) {
      // The token that crosses the quantile opens the next bucket.
      std::uint64_t b = std::max<std::uint64_t>(f[i], 1);
      if (!bounds.empty() && b <= bounds.back()) b = bounds.back() + 1;
      bounds.push_back(b);
      ++next;
    }
  }
  return BucketSpec(std::move(bounds));
}

std::size_t BucketSpec::bucket_of(std::uint64_t freq) const noexcept {
  return static_cast<std::size_t>(
      std::upper_bound(boundaries_.begin(), boundaries_.end(), freq) - boundaries_.begin());
}

std::string BucketSpec::label(std::size_t bucket) const {
  const std::string lo = bucket == 0 ? "0" : std::to_string(boundaries_[bucket - 1]);
  const std::string hi = bucket < boundaries_.size() ? std::to_string(boundaries_[bucket])
                                                     : "inf";
  return "[" + lo + "," + hi + ")";
}

// ---------------------------------------------------------------------------
// Position-wise matching

double MatchCounts::precision() const noexcept {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}
double MatchCounts::recall() const noexcept {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}
double MatchCounts::f1() const noexcept {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}
MatchCounts& MatchCounts::operator+=(const MatchCounts& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  gold += o.gold;
  return *this;
}

MatchCounts F1Report::micro() const noexcept {
  MatchCounts m;
  for (const auto& g : groups) m += g;
  return m;
}

namespace {

F1Report match_by_group(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                        std::size_t groups,
                        const std::function<std::size_t(TokenId)>& group_of) {
  if (hyps.size() != refs.size()) {
    throw InvalidArgument("token F1: " + std::to_string(hyps.size()) +
                          " hypotheses but " + std::to_string(refs.size()) +
                          " references");
  }
  F1Report rep;
  rep.groups.assign(groups, {});
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    const std::size_t n = std::max(h.size(), r.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool has_h = i < h.size(), has_r = i < r.size();
      if (has_r) ++rep.groups[group_of(r[i])].gold;
      if (has_h && has_r && h[i] == r[i]) {
        ++rep.groups[group_of(r[i])].tp;
        continue;
      }
      if (has_h) ++rep.groups[group_of(h[i])].fp;
      if (has_r) ++rep.groups[group_of(r[i])].fn;
    }
  }
  return rep;
}

}  // namespace

F1Report token_f1_by_bucket(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                            const Vocab& vocab, const BucketSpec& spec) {
  const std::size_t nb = spec.buckets();
  auto rep = match_by_group(hyps, refs, nb + 1, [&](TokenId t) -> std::size_t {
    return t < vocab.size() ? spec.bucket_of(vocab.freq(t)) : nb;
  });
  for (std::size_t b = 0; b < nb; ++b) rep.labels.push_back(spec.label(b));
  rep.labels.emplace_back("oov");
  return rep;
}

F1Report class_f1(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                  std::span<const std::uint32_t> class_of, std::size_t num_classes) {
  for (auto c : class_of) {
    if (c >= num_classes) throw InvalidArgument("class_f1: class id out of range");
  }
  auto rep = match_by_group(hyps, refs, num_classes + 1, [&](TokenId t) -> std::size_t {
    return t < class_of.size() ? class_of[t] : num_classes;
  });
  for (std::size_t c = 0; c < num_classes; ++c) rep.labels.push_back(std::to_string(c));
  rep.labels.emplace_back("oov");
  return rep;
}

std::string to_tsv(const F1Report& report) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "bucket\ttp\tfp\tfn\tgold\tprecision\trecall\tf1\n";
  for (std::size_t g = 0; g < report.groups.size(); ++g) {
    const auto& c = report.groups[g];
    out << report.labels[g] << '\t' << c.tp << '\t' << c.fp << '\t' << c.fn << '\t'
        << c.gold << '\t' << c.precision() << '\t' << c.recall() << '\t' << c.f1()
        << '\n';
  }
  return out.str();
}

}  // namespace conmt
