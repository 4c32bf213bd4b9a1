#include "conmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conmt/error.hpp"
#include "similarity_kernel.hpp"

namespace conmt {

namespace {

bool better(const Neighbor& a, const Neighbor& b) {
  return a.cosine > b.cosine || (a.cosine == b.cosine && a.token < b.token);
}

double hidden_norm(std::span<const double> h, std::size_t dim) {
  if (h.size() != dim) {
    throw InvalidArgument("query has dimension " + std::to_string(h.size()) +
                          ", index has " + std::to_string(dim));
  }
  const double n = norm(h);
  if (!(n > kMinHiddenNorm)) {
    throw DegenerateHiddenState("query norm is below 1e-12");
  }
  return n;
}

}  // namespace

NNIndex::NNIndex(std::shared_ptr<const EmbeddingTable> table, std::size_t shards)
    : table_(std::move(table)) {
  if (!table_ || table_->rows() == 0) {
    throw InvalidArgument("cannot index an empty table");
  }
  const std::size_t n = table_->rows();
  row_norm_.resize(n);
  for (std::size_t r = 0; r < n; ++r) row_norm_[r] = norm(table_->row(r));
  shards = std::clamp<std::size_t>(shards, 1, n);
  for (std::size_t s = 0; s <= shards; ++s) shard_bounds_.push_back(s * n / shards);
  if (table_->kind() == TableKind::kHypercube) {
    planes_ = BitPackedTable::from_signs(*table_);
  }
}

double NNIndex::cosine_to(TokenId token, std::span<const double> h) const {
  const double hn = hidden_norm(h, dim());
  return dot(table_->row(token), h) / (row_norm_.at(token) * hn);
}

void NNIndex::scan(std::span<const double> h, double h_norm, std::size_t begin,
                   std::size_t end, std::size_t k, std::vector<Neighbor>& out) const {
  detail::TopK best(k);
  for (std::size_t r = begin; r < end; ++r) {
    best.push(dot(table_->row(r), h) / (row_norm_[r] * h_norm),
              static_cast<std::uint32_t>(r));
  }
  out.clear();
  for (auto& [sim, idx] : best.items) out.push_back({idx, sim});
}

std::vector<Neighbor> NNIndex::nearest(std::span<const double> h,
                                       std::size_t k) const {
  if (k == 0 || k > size()) {
    throw InvalidArgument("nearest: need 1 <= k <= |V|, got k=" + std::to_string(k));
  }
  const double hn = hidden_norm(h, dim());
  const std::size_t n_shards = shards();
  std::vector<std::vector<Neighbor>> partial(n_shards);
  const auto ns = static_cast<std::int64_t>(n_shards);
#pragma omp parallel for schedule(static) if (n_shards > 1)
  for (std::int64_t s = 0; s < ns; ++s) {
    scan(h, hn, shard_bounds_[s], shard_bounds_[s + 1], k, partial[s]);
  }
  std::vector<Neighbor> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::sort(merged.begin(), merged.end(), better);
  merged.resize(std::min(k, merged.size()));
  return merged;
}

std::vector<Neighbor> NNIndex::nearest_prefiltered(std::span<const double> h,
                                                   std::size_t k,
                                                   std::size_t m) const {
  if (!planes_) {
    throw UnsupportedIndex(std::string("Hamming prefilter needs a hypercube table, "
                                       "this index holds a ") +
                           std::string(to_string(table_->kind())) + " table");
  }
  if (k == 0 || k > m || m > size()) {
    throw InvalidArgument("nearest_prefiltered: need 1 <= k <= m <= |V|");
  }
  const double hn = hidden_norm(h, dim());
  const auto query_bits = planes_->pack(h);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ranked(size());
  for (std::size_t r = 0; r < size(); ++r) {
    ranked[r] = {hamming(query_bits, planes_->plane(r)), static_cast<std::uint32_t>(r)};
  }
  if (m < ranked.size()) {
    std::nth_element(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(m),
                     ranked.end());
    ranked.resize(m);
  }
  detail::TopK best(k);
  for (auto [dist, r] : ranked) {
    best.push(dot(table_->row(r), h) / (row_norm_[r] * hn), r);
  }
  std::vector<Neighbor> out;
  for (auto& [sim, idx] : best.items) out.push_back({idx, sim});
  return out;
}

NNIndex build_index(const EmbeddingTable& table, std::size_t shards) {
  return NNIndex(std::make_shared<const EmbeddingTable>(table), shards);
}

NNIndex build_index(std::shared_ptr<const EmbeddingTable> table, std::size_t shards) {
  return NNIndex(std::move(table), shards);
}

LengthNorm parse_length_norm(std::string_view name) {
  if (name == "none") return LengthNorm::kNone;
  if (name == "per-token") return LengthNorm::kPerToken;
  throw InvalidArgument("length norm must be 'none' or 'per-token', got '" +
                        std::string(name) + "'");
}

std::string_view to_string(LengthNorm norm) {
  return norm == LengthNorm::kNone ? "none" : "per-token";
}

double Hypothesis::normalized(LengthNorm norm) const noexcept {
  if (norm == LengthNorm::kNone || step_scores.empty()) return score;
  return score / static_cast<double>(step_scores.size());
}

Hypothesis greedy_decode(const StepFunction& model, const NNIndex& index,
                         std::span<const TokenId> src, const DecodeOptions& options) {
  const double log_norm = log_c_d(index.dim(), options.kappa);
  const std::size_t cap = src.size() + options.max_extra;
  Hypothesis hyp;
  while (hyp.tokens.size() < cap) {
    const auto h = model(src, hyp.tokens);
    const Neighbor best = index.nearest(h, 1).front();
    const double s = vmf_from_cosine(best.cosine, log_norm, options.kappa, options.sign);
    hyp.step_scores.push_back(s);
    hyp.score += s;
    if (best.token == options.eos) {
      hyp.finished = true;
      break;
    }
    hyp.tokens.push_back(best.token);
  }
  return hyp;
}

std::vector<Hypothesis> beam_decode(const StepFunction& model, const NNIndex& index,
                                    std::span<const TokenId> src, std::size_t beam,
                                    const DecodeOptions& options) {
  if (beam == 0) throw InvalidArgument("beam width must be >= 1");
  const double log_norm = log_c_d(index.dim(), options.kappa);
  // No single step can score above this; when it is <= 0 extending a
  // hypothesis never raises its unnormalised score.
  const double step_bound = options.kappa.value() + log_norm;
  const std::size_t cap = src.size() + options.max_extra;
  const std::size_t expand = std::min(beam, index.size());

  struct Candidate {
    std::size_t parent;
    Neighbor nb;
    double score;
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> done;
  std::vector<Candidate> cands;
  while (!live.empty()) {
    if (live.front().tokens.size() >= cap) {
      for (auto& h : live) done.push_back(std::move(h));
      live.clear();
      break;
    }
    cands.clear();
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto h = model(src, live[p].tokens);
      for (const auto& nb : index.nearest(h, expand)) {
        const double s = vmf_from_cosine(nb.cosine, log_norm, options.kappa, options.sign);
        cands.push_back({p, nb, live[p].score + s});
      }
    }
    // Candidates were generated in (parent, cosine rank) order; a stable sort
    // keeps that order among equal scores.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < std::min(beam, cands.size()); ++i) {
      const auto& c = cands[i];
      Hypothesis h = live[c.parent];
      const double s = c.score - h.score;
      h.step_scores.push_back(s);
      h.score = c.score;
      if (c.nb.token == options.eos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.nb.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);

    if (done.empty()) continue;
    if (options.length_norm == LengthNorm::kNone) {
      if (step_bound <= 0.0) {
        double best_done = done.front().score;
        for (const auto& h : done) best_done = std::max(best_done, h.score);
        if (live.empty() || best_done >= live.front().score) break;
      }
    } else if (done.size() >= beam) {
      break;
    }
  }

  std::stable_sort(done.begin(), done.end(),
                   [&](const Hypothesis& a, const Hypothesis& b) {
                     return a.normalized(options.length_norm) >
                            b.normalized(options.length_norm);
                   });
  done.resize(std::min(done.size(), std::max<std::size_t>(options.nbest, 1)));
  return done;
}

double sequence_log_likelihood(const StepFunction& model, const NNIndex& index,
                               std::span<const TokenId> src,
                               std::span<const TokenId> output, bool finished,
                               const DecodeOptions& options) {
  const double log_norm = log_c_d(index.dim(), options.kappa);
  double total = 0.0;
  const std::size_t steps = output.size() + (finished ? 1 : 0);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto h = model(src, output.first(std::min(i, output.size())));
    const TokenId t = i < output.size() ? output[i] : options.eos;
    total += vmf_from_cosine(index.cosine_to(t, h), log_norm, options.kappa,
                             options.sign);
  }
  return total;
}

}  // namespace conmt
