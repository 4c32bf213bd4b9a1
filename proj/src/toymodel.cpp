#include "conmt/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "conmt/error.hpp"
#include "conmt/rng.hpp"
#include "conmt/scoring.hpp"
#include "conmt/table_io.hpp"

namespace conmt {

// ---------------------------------------------------------------------------
// Tasks

TaskKind parse_task_kind(std::string_view name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "lexicon") return TaskKind::kLexicon;
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kLexicon: return "lexicon";
  }
  return "copy";
}

namespace {

std::vector<std::string> vocab_names(std::size_t n, char prefix) {
  std::vector<std::string> names(n);
  names[0] = "</s>";
  for (std::size_t i = 1; i < n; ++i) names[i] = prefix + std::to_string(i);
  return names;
}

// Rejects a sample whose content-token counts are wildly inconsistent with
// the Zipf law it was drawn from (chi-square, pooled tail, z > 8).
void check_zipf_sample(const std::vector<std::uint64_t>& counts,
                       const std::vector<double>& probs, std::uint64_t total) {
  double chi2 = 0.0;
  std::size_t bins = 0;
  double pooled_obs = 0.0, pooled_exp = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double expected = probs[k] * static_cast<double>(total);
    const auto observed = static_cast<double>(counts[k + 1]);
    if (expected >= 5.0) {
      chi2 += (observed - expected) * (observed - expected) / expected;
      ++bins;
    } else {
      pooled_obs += observed;
      pooled_exp += expected;
    }
  }
  if (pooled_exp > 0.0) {
    chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++bins;
  }
  if (bins < 2) return;
  const auto df = static_cast<double>(bins - 1);
  const double z = (chi2 - df) / std::sqrt(2.0 * df);
  if (z > 8.0) {
    throw std::logic_error("gen_task: token counts fail the Zipf sanity check (chi2=" +
                           std::to_string(chi2) + ", df=" + std::to_string(df) + ")");
  }
}

}  // namespace

Dataset gen_task(const ToyTask& task) {
  const std::size_t vs = task.src_vocab;
  const std::size_t vt = task.kind == TaskKind::kLexicon ? task.tgt_vocab : vs;
  if (vs < 2 || vt < 2) throw InvalidArgument("gen_task: vocab size must be >= 2");
  if (task.kind == TaskKind::kLexicon && vs != vt) {
    throw InvalidArgument("gen_task: lexicon task needs equal source and target vocab");
  }
  if (task.min_len == 0 || task.min_len > task.max_len) {
    throw InvalidArgument("gen_task: need 1 <= min_len <= max_len");
  }
  if (task.zipf < 0.0) throw InvalidArgument("gen_task: zipf exponent must be >= 0");

  const std::size_t content = vs - 1;
  std::vector<double> probs(content);
  for (std::size_t k = 0; k < content; ++k) {
    probs[k] = std::pow(static_cast<double>(k + 1), -task.zipf);
  }
  const double z = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (auto& p : probs) p /= z;
  std::vector<double> cdf(content);
  std::partial_sum(probs.begin(), probs.end(), cdf.begin());
  cdf.back() = 1.0;

  Dataset ds;
  ds.mapping.resize(vs);
  std::iota(ds.mapping.begin(), ds.mapping.end(), TokenId{0});
  Rng map_rng(task.seed, 0xB1EC7);
  if (task.kind == TaskKind::kLexicon) shuffle(ds.mapping.begin() + 1, ds.mapping.end(), map_rng);

  Rng rng(task.seed, 0xDA7A);
  std::vector<std::uint64_t> src_counts(vs, 0), tgt_counts(vt, 0);
  std::uint64_t content_total = 0;
  ds.pairs.reserve(task.pairs);
  for (std::size_t p = 0; p < task.pairs; ++p) {
    const std::size_t len =
        task.min_len + rng.below(task.max_len - task.min_len + 1);
    Pair pair;
    pair.src.resize(len);
    for (auto& t : pair.src) {
      const double u = rng.uniform();
      const auto k = static_cast<std::size_t>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      t = static_cast<TokenId>(std::min(k, content - 1) + 1);
      ++src_counts[t];
      ++content_total;
    }
    switch (task.kind) {
      case TaskKind::kCopy: pair.tgt = pair.src; break;
      case TaskKind::kReverse: pair.tgt.assign(pair.src.rbegin(), pair.src.rend()); break;
      case TaskKind::kLexicon:
        pair.tgt.resize(len);
        for (std::size_t i = 0; i < len; ++i) pair.tgt[i] = ds.mapping[pair.src[i]];
        break;
    }
    for (auto t : pair.tgt) ++tgt_counts[t];
    ++src_counts[kEos];
    ++tgt_counts[kEos];
    ds.pairs.push_back(std::move(pair));
  }
  if (task.zipf > 0.0) check_zipf_sample(src_counts, probs, content_total);

  ds.src_vocab = Vocab(vocab_names(vs, 's'), std::move(src_counts));
  ds.tgt_vocab = Vocab(vocab_names(vt, task.kind == TaskKind::kLexicon ? 't' : 's'),
                       std::move(tgt_counts));
  return ds;
}

std::pair<std::vector<Pair>, std::vector<Pair>> split_heldout(
    const std::vector<Pair>& pairs, double heldout_fraction, std::uint64_t seed) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw InvalidArgument("split_heldout: fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, 0x5B117);
  shuffle(order.begin(), order.end(), rng);
  const auto n_held = static_cast<std::size_t>(
      std::llround(heldout_fraction * static_cast<double>(pairs.size())));
  std::vector<Pair> train, held;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_held ? held : train).push_back(pairs[order[i]]);
  }
  return {std::move(train), std::move(held)};
}

Vocab count_target_frequencies(const std::vector<Pair>& pairs, const Vocab& base) {
  std::vector<std::uint64_t> counts(base.size(), 0);
  for (const auto& p : pairs) {
    for (auto t : p.tgt) ++counts.at(t);
    ++counts[kEos];
  }
  return Vocab(base.tokens(), std::move(counts));
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "cosine") return LossKind::kCosine;
  if (name == "discrete") return LossKind::kDiscrete;
  throw InvalidArgument("unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::kCosine ? "cosine" : "discrete";
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string_view, std::vector<double>*>> ToyParams::tensors() {
  return {{"src_emb", &src_emb}, {"pos", &pos}, {"w", &w},         {"b", &b},
          {"u", &u},             {"bo", &bo},   {"targets", &targets}};
}

std::vector<std::pair<std::string_view, const std::vector<double>*>> ToyParams::tensors()
    const {
  return {{"src_emb", &src_emb}, {"pos", &pos}, {"w", &w},         {"b", &b},
          {"u", &u},             {"bo", &bo},   {"targets", &targets}};
}

void ToyParams::zero() {
  for (auto& [name, t] : tensors()) std::fill(t->begin(), t->end(), 0.0);
}

// ---------------------------------------------------------------------------
// Model

struct ToySeq2Seq::Trace {
  std::vector<TokenId> src_eos;
  std::size_t steps = 0;
  std::vector<double> attn;   // steps x n_src
  std::vector<double> ctx;    // steps x d
  std::vector<double> input;  // steps x d
  std::vector<double> state;  // (steps + 1) x H, row 0 is the zero initial state
  std::vector<double> h;      // steps x d
};

ToySeq2Seq::ToySeq2Seq(const ModelConfig& config,
                       std::shared_ptr<const EmbeddingTable> targets)
    : initial_targets_(std::move(targets)) {
  if (!initial_targets_ || initial_targets_->rows() < 2) {
    throw InvalidArgument("ToySeq2Seq: target table needs at least two rows");
  }
  if (config.src_vocab < 2) throw InvalidArgument("ToySeq2Seq: src_vocab must be >= 2");
  if (config.max_positions < 2) {
    throw InvalidArgument("ToySeq2Seq: max_positions must be >= 2");
  }
  dim_ = initial_targets_->dim();
  hidden_ = config.hidden == 0 ? dim_ : config.hidden;
  src_vocab_ = config.src_vocab;
  tgt_vocab_ = initial_targets_->rows();
  positions_ = config.max_positions;

  const std::size_t in = hidden_ + 2 * dim_;
  auto fill = [&](std::vector<double>& v, std::size_t n, double scale,
                  std::uint64_t stream) {
    v.resize(n);
    Rng rng(config.seed, stream);
    for (auto& x : v) x = scale * rng.normal();
  };
  fill(params_.src_emb, src_vocab_ * dim_, 1.0 / std::sqrt(static_cast<double>(dim_)), 1);
  params_.pos.assign(positions_ * positions_, 0.0);
  fill(params_.w, hidden_ * in, 1.0 / std::sqrt(static_cast<double>(in)), 3);
  params_.b.assign(hidden_, 0.0);
  fill(params_.u, dim_ * hidden_, 1.0 / std::sqrt(static_cast<double>(hidden_)), 5);
  params_.bo.assign(dim_, 0.0);
  auto data = initial_targets_->data();
  params_.targets.assign(data.begin(), data.end());
}

std::size_t ToySeq2Seq::parameter_count() const noexcept {
  std::size_t n = 0;
  for (auto& [name, t] : params_.tensors()) {
    if (name != "targets" || targets_trainable_) n += t->size();
  }
  return n;
}

EmbeddingTable ToySeq2Seq::export_targets() const {
  if (!targets_trainable_) return *initial_targets_;
  std::vector<float> data(params_.targets.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<float>(params_.targets[i]);
  }
  return EmbeddingTable(dim_, std::move(data), initial_targets_->kind(),
                        initial_targets_->seed(), initial_targets_->tokens());
}

void ToySeq2Seq::check_tokens(std::span<const TokenId> src,
                              std::span<const TokenId> tgt) const {
  for (auto t : src) {
    if (t >= src_vocab_) {
      throw InvalidArgument("source token " + std::to_string(t) +
                            " out of range for vocab " + std::to_string(src_vocab_));
    }
  }
  for (auto t : tgt) {
    if (t >= tgt_vocab_) {
      throw InvalidArgument("target token " + std::to_string(t) +
                            " out of range for vocab " + std::to_string(tgt_vocab_));
    }
  }
}

void ToySeq2Seq::context_at(std::span<const TokenId> src_eos, std::size_t step,
                            double* ctx, double* attn) const {
  const std::size_t n = src_eos.size();
  const std::size_t row = std::min(step, positions_ - 1) * positions_;
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    attn[j] = params_.pos[row + std::min(j, positions_ - 1)];
    m = std::max(m, attn[j]);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    attn[j] = std::exp(attn[j] - m);
    s += attn[j];
  }
  std::fill(ctx, ctx + dim_, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    attn[j] /= s;
    const double* e = params_.src_emb.data() + src_eos[j] * dim_;
    for (std::size_t i = 0; i < dim_; ++i) ctx[i] += attn[j] * e[i];
  }
}

void ToySeq2Seq::cell(const double* prev_state, const double* input,
                      const double* context, double* state_out, double* h_out) const {
  const std::size_t in = hidden_ + 2 * dim_;
  for (std::size_t r = 0; r < hidden_; ++r) {
    const double* w = params_.w.data() + r * in;
    double z = params_.b[r];
    for (std::size_t i = 0; i < hidden_; ++i) z += w[i] * prev_state[i];
    for (std::size_t i = 0; i < dim_; ++i) z += w[hidden_ + i] * input[i];
    for (std::size_t i = 0; i < dim_; ++i) z += w[hidden_ + dim_ + i] * context[i];
    state_out[r] = std::tanh(z);
  }
  for (std::size_t o = 0; o < dim_; ++o) {
    const double* u = params_.u.data() + o * hidden_;
    double v = params_.bo[o];
    for (std::size_t i = 0; i < hidden_; ++i) v += u[i] * state_out[i];
    h_out[o] = v;
  }
}

void ToySeq2Seq::run(std::span<const TokenId> src, std::span<const TokenId> prefix,
                     std::size_t steps, Trace& tr) const {
  tr.src_eos.assign(src.begin(), src.end());
  tr.src_eos.push_back(kEos);
  const std::size_t n = tr.src_eos.size();
  tr.steps = steps;
  tr.attn.assign(steps * n, 0.0);
  tr.ctx.assign(steps * dim_, 0.0);
  tr.input.assign(steps * dim_, 0.0);
  tr.state.assign((steps + 1) * hidden_, 0.0);
  tr.h.assign(steps * dim_, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    context_at(tr.src_eos, i, &tr.ctx[i * dim_], &tr.attn[i * n]);
    if (i > 0) {
      const double* e = params_.targets.data() + prefix[i - 1] * dim_;
      std::copy(e, e + dim_, tr.input.begin() + static_cast<std::ptrdiff_t>(i * dim_));
    }
    cell(&tr.state[i * hidden_], &tr.input[i * dim_], &tr.ctx[i * dim_],
         &tr.state[(i + 1) * hidden_], &tr.h[i * dim_]);
  }
}

std::vector<std::vector<double>> ToySeq2Seq::forward(
    std::span<const TokenId> src, std::span<const TokenId> prefix) const {
  check_tokens(src, prefix);
  Trace tr;
  run(src, prefix, prefix.size() + 1, tr);
  std::vector<std::vector<double>> out(tr.steps);
  for (std::size_t i = 0; i < tr.steps; ++i) {
    out[i].assign(tr.h.begin() + static_cast<std::ptrdiff_t>(i * dim_),
                  tr.h.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_));
  }
  return out;
}

double ToySeq2Seq::loss(std::span<const Pair* const> batch, LossKind kind,
                        ToyParams* grad) const {
  std::size_t tokens = 0;
  for (const Pair* p : batch) tokens += p->tgt.size() + 1;
  if (tokens == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(tokens);
  const std::size_t d = dim_, H = hidden_, in = H + 2 * d;
  const std::size_t V = tgt_vocab_;
  const bool want_targets = grad != nullptr && targets_trainable_;

  Trace tr;
  std::vector<double> dh(d), ds(H), ds_next(H), dz(H), din(in), logits, dlogit;
  if (kind == LossKind::kDiscrete) {
    logits.resize(V);
    dlogit.resize(V);
  }
  std::vector<double> g_attn;
  double total = 0.0;

  for (const Pair* pair : batch) {
    check_tokens(pair->src, pair->tgt);
    const std::size_t steps = pair->tgt.size() + 1;
    run(pair->src, pair->tgt, steps, tr);
    const std::size_t n = tr.src_eos.size();
    std::fill(ds_next.begin(), ds_next.end(), 0.0);

    for (std::size_t ii = steps; ii-- > 0;) {
      const TokenId y = ii < pair->tgt.size() ? pair->tgt[ii] : kEos;
      const double* h = &tr.h[ii * d];
      const double* e = params_.targets.data() + y * d;

      if (kind == LossKind::kCosine) {
        double hh = 0.0, ee = 0.0, eh = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          hh += h[i] * h[i];
          ee += e[i] * e[i];
          eh += e[i] * h[i];
        }
        const double hn = std::sqrt(hh), en = std::sqrt(ee);
        if (!std::isfinite(hn)) return std::nan("");
        if (!(hn > kMinHiddenNorm)) {
          throw DegenerateHiddenState("toy model produced a zero hidden state");
        }
        const double c = eh / (hn * en);
        total += 1.0 - c;
        if (grad == nullptr) continue;
        for (std::size_t i = 0; i < d; ++i) {
          dh[i] = -scale * (e[i] / (en * hn) - c * h[i] / (hh));
        }
        if (want_targets) {
          double* ge = grad->targets.data() + y * d;
          for (std::size_t i = 0; i < d; ++i) {
            ge[i] += -scale * (h[i] / (en * hn) - c * e[i] / ee);
          }
        }
      } else {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < V; ++t) {
          const double* et = params_.targets.data() + t * d;
          double z = 0.0;
          for (std::size_t i = 0; i < d; ++i) z += et[i] * h[i];
          logits[t] = z;
          m = std::max(m, z);
        }
        double s = 0.0;
        for (std::size_t t = 0; t < V; ++t) s += std::exp(logits[t] - m);
        const double lse = m + std::log(s);
        total += lse - logits[y];
        if (grad == nullptr) continue;
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t t = 0; t < V; ++t) {
          dlogit[t] = scale * (std::exp(logits[t] - lse) - (t == y ? 1.0 : 0.0));
          const double* et = params_.targets.data() + t * d;
          for (std::size_t i = 0; i < d; ++i) dh[i] += dlogit[t] * et[i];
          if (want_targets) {
            double* ge = grad->targets.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) ge[i] += dlogit[t] * h[i];
          }
        }
      }

      // h = U s + bo
      const double* s_cur = &tr.state[(ii + 1) * H];
      const double* s_prev = &tr.state[ii * H];
      ds = ds_next;
      for (std::size_t o = 0; o < d; ++o) {
        grad->bo[o] += dh[o];
        double* gu = grad->u.data() + o * H;
        const double* u = params_.u.data() + o * H;
        for (std::size_t i = 0; i < H; ++i) {
          gu[i] += dh[o] * s_cur[i];
          ds[i] += u[i] * dh[o];
        }
      }
      // s = tanh(W [s_prev; x; c] + b)
      for (std::size_t r = 0; r < H; ++r) dz[r] = ds[r] * (1.0 - s_cur[r] * s_cur[r]);
      const double* x = &tr.input[ii * d];
      const double* c = &tr.ctx[ii * d];
      std::fill(din.begin(), din.end(), 0.0);
      for (std::size_t r = 0; r < H; ++r) {
        if (dz[r] == 0.0) continue;
        grad->b[r] += dz[r];
        double* gw = grad->w.data() + r * in;
        const double* w = params_.w.data() + r * in;
        for (std::size_t i = 0; i < H; ++i) gw[i] += dz[r] * s_prev[i];
        for (std::size_t i = 0; i < d; ++i) gw[H + i] += dz[r] * x[i];
        for (std::size_t i = 0; i < d; ++i) gw[H + d + i] += dz[r] * c[i];
        for (std::size_t i = 0; i < in; ++i) din[i] += w[i] * dz[r];
      }
      std::copy(din.begin(), din.begin() + static_cast<std::ptrdiff_t>(H), ds_next.begin());
      if (want_targets && ii > 0) {
        double* ge = grad->targets.data() + pair->tgt[ii - 1] * d;
        for (std::size_t i = 0; i < d; ++i) ge[i] += din[H + i];
      }
      // c = sum_j a_j S[src_j],  a = softmax(pos[row, j])
      const double* dc = &din[H + d];
      const double* a = &tr.attn[ii * n];
      g_attn.assign(n, 0.0);
      double mean_g = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const TokenId t = tr.src_eos[j];
        double* ge = grad->src_emb.data() + t * d;
        const double* e_src = params_.src_emb.data() + t * d;
        double g = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          ge[i] += a[j] * dc[i];
          g += dc[i] * e_src[i];
        }
        g_attn[j] = g;
        mean_g += a[j] * g;
      }
      const std::size_t row = std::min(ii, positions_ - 1) * positions_;
      for (std::size_t j = 0; j < n; ++j) {
        grad->pos[row + std::min(j, positions_ - 1)] += a[j] * (g_attn[j] - mean_g);
      }
    }
  }
  return total * scale;
}

StepFunction ToySeq2Seq::step_function() const {
  struct Cache {
    Sentence src;
    std::vector<TokenId> src_eos;
    std::map<Sentence, std::vector<double>> states;  // prefix -> state after it
  };
  auto cache = std::make_shared<Cache>();
  return [this, cache](std::span<const TokenId> src,
                       std::span<const TokenId> prefix) -> std::vector<double> {
    if (!std::equal(src.begin(), src.end(), cache->src.begin(), cache->src.end())) {
      check_tokens(src, {});
      cache->src.assign(src.begin(), src.end());
      cache->src_eos = cache->src;
      cache->src_eos.push_back(kEos);
      cache->states.clear();
    }
    check_tokens({}, prefix);
    // states[p] is the recurrent state that produces the hidden vector for
    // position len(p). Resume from the longest cached prefix.
    const Sentence key(prefix.begin(), prefix.end());
    std::vector<double> cur(hidden_, 0.0);
    std::size_t step = 0;
    for (std::size_t m = key.size() + 1; m-- > 0;) {
      auto it = cache->states.find(Sentence(key.begin(), key.begin() +
                                            static_cast<std::ptrdiff_t>(m)));
      if (it != cache->states.end()) {
        cur = it->second;
        step = m + 1;
        break;
      }
    }
    std::vector<double> ctx(dim_), attn(cache->src_eos.size()), input(dim_), h(dim_);
    std::vector<double> next(hidden_);
    for (; step <= key.size(); ++step) {
      context_at(cache->src_eos, step, ctx.data(), attn.data());
      if (step > 0) {
        const double* e = params_.targets.data() + key[step - 1] * dim_;
        std::copy(e, e + dim_, input.begin());
      } else {
        std::fill(input.begin(), input.end(), 0.0);
      }
      cell(cur.data(), input.data(), ctx.data(), next.data(), h.data());
      cur.swap(next);
      cache->states.emplace(
          Sentence(key.begin(), key.begin() + static_cast<std::ptrdiff_t>(step)), cur);
    }
    for (std::size_t o = 0; o < dim_; ++o) {
      const double* u = params_.u.data() + o * hidden_;
      double v = params_.bo[o];
      for (std::size_t i = 0; i < hidden_; ++i) v += u[i] * cur[i];
      h[o] = v;
    }
    return h;
  };
}

namespace {
constexpr char kToyMagic[4] = {'C', 'T', 'O', 'Y'};
constexpr std::uint32_t kToyVersion = 1;
}  // namespace

void ToySeq2Seq::save(std::ostream& out) const {
  out.write(kToyMagic, 4);
  le::put_u32(out, kToyVersion);
  for (std::size_t v : {src_vocab_, tgt_vocab_, dim_, hidden_, positions_}) {
    le::put_u32(out, static_cast<std::uint32_t>(v));
  }
  le::put_u32(out, targets_trainable_ ? 1U : 0U);
  for (auto& [name, t] : params_.tensors()) {
    for (double x : *t) le::put_f64(out, x);
  }
}

ToySeq2Seq ToySeq2Seq::load(std::istream& in,
                            std::shared_ptr<const EmbeddingTable> targets) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kToyMagic)) {
    throw ParseError("byte 0: missing CTOY magic", 0);
  }
  std::size_t offset = 4;
  const auto version = le::get_u32(in, offset);
  if (version != kToyVersion) {
    throw ParseError("byte 4: unsupported CTOY version " + std::to_string(version), 4);
  }
  ToySeq2Seq m;
  m.src_vocab_ = le::get_u32(in, offset);
  m.tgt_vocab_ = le::get_u32(in, offset);
  m.dim_ = le::get_u32(in, offset);
  m.hidden_ = le::get_u32(in, offset);
  m.positions_ = le::get_u32(in, offset);
  m.targets_trainable_ = le::get_u32(in, offset) != 0;
  if (!targets || targets->rows() != m.tgt_vocab_ || targets->dim() != m.dim_) {
    throw InvalidArgument("checkpoint expects a " + std::to_string(m.tgt_vocab_) + "x" +
                          std::to_string(m.dim_) + " target table");
  }
  m.initial_targets_ = std::move(targets);
  const std::size_t in_w = m.hidden_ + 2 * m.dim_;
  m.params_.src_emb.resize(m.src_vocab_ * m.dim_);
  m.params_.pos.resize(m.positions_ * m.positions_);
  m.params_.w.resize(m.hidden_ * in_w);
  m.params_.b.resize(m.hidden_);
  m.params_.u.resize(m.dim_ * m.hidden_);
  m.params_.bo.resize(m.dim_);
  m.params_.targets.resize(m.tgt_vocab_ * m.dim_);
  for (auto& [name, t] : m.params_.tensors()) {
    for (auto& x : *t) x = le::get_f64(in, offset);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training

namespace {

ToyParams zeros_like(const ToyParams& p) {
  ToyParams g;
  g.src_emb.assign(p.src_emb.size(), 0.0);
  g.pos.assign(p.pos.size(), 0.0);
  g.w.assign(p.w.size(), 0.0);
  g.b.assign(p.b.size(), 0.0);
  g.u.assign(p.u.size(), 0.0);
  g.bo.assign(p.bo.size(), 0.0);
  g.targets.assign(p.targets.size(), 0.0);
  return g;
}

}  // namespace

double train_step(ToySeq2Seq& model, std::span<const Pair* const> batch,
                  const TrainConfig& config) {
  model.set_targets_trainable(config.targets_trainable);
  ToyParams grad = zeros_like(model.params());
  const double loss = model.loss(batch, config.loss, &grad);
  if (!std::isfinite(loss)) {
    throw TrainingFailure("non-finite training loss (" + std::to_string(loss) +
                          ") on a batch of " + std::to_string(batch.size()) +
                          " pairs; lower the learning rate or enable clipping");
  }
  auto params = model.params().tensors();
  auto grads = grad.tensors();
  double sq = 0.0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (grads[t].first == "targets" && !config.targets_trainable) continue;
    for (double g : *grads[t].second) sq += g * g;
  }
  double factor = config.learning_rate;
  if (config.clip > 0.0 && std::sqrt(sq) > config.clip) {
    factor *= config.clip / std::sqrt(sq);
  }
  if (factor == 0.0) return loss;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].first == "targets" && !config.targets_trainable) continue;
    auto& p = *params[t].second;
    const auto& g = *grads[t].second;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= factor * g[i];
  }
  if (config.targets_trainable) {
    // Keep target rows on the unit sphere.
    auto& tgt = model.params().targets;
    const std::size_t d = model.dim();
    for (std::size_t r = 0; r < model.tgt_vocab(); ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += tgt[r * d + i] * tgt[r * d + i];
      const double n = std::sqrt(s);
      if (n > 0.0) {
        for (std::size_t i = 0; i < d; ++i) tgt[r * d + i] /= n;
      }
    }
  }
  return loss;
}

std::vector<Sentence> decode_all(const ToySeq2Seq& model, const std::vector<Pair>& pairs,
                                 std::size_t max_extra) {
  auto table = model.targets_trainable()
                   ? std::make_shared<const EmbeddingTable>(model.export_targets())
                   : model.initial_targets();
  const NNIndex index(table);
  DecodeOptions opts;
  opts.eos = kEos;
  opts.max_extra = max_extra;
  auto step = model.step_function();
  std::vector<Sentence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(greedy_decode(step, index, p.src, opts).tokens);
  return out;
}

double token_accuracy(const std::vector<Sentence>& hyps, const std::vector<Pair>& refs) {
  if (hyps.size() != refs.size()) {
    throw InvalidArgument("token_accuracy: hypothesis and reference counts differ");
  }
  std::size_t hit = 0, total = 0;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    const auto& ref = refs[s].tgt;
    total += ref.size();
    for (std::size_t i = 0; i < std::min(ref.size(), hyps[s].size()); ++i) {
      hit += hyps[s][i] == ref[i] ? 1 : 0;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

TrainResult train(ToySeq2Seq& model, const std::vector<Pair>& train_pairs,
                  const std::vector<Pair>& heldout, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (config.batch_size == 0) throw InvalidArgument("train: batch_size must be >= 1");
  if (train_pairs.empty()) throw InvalidArgument("train: empty training set");
  model.set_targets_trainable(config.targets_trainable);

  std::vector<const Pair*> order(train_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = &train_pairs[i];

  TrainResult result;
  double first_loss = 0.0;
  int strikes = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(config.seed, 0xE90C0000ULL + epoch);
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::span<const Pair* const> batch(order.data() + b,
                                         std::min(config.batch_size, order.size() - b));
      std::size_t bt = 0;
      for (const Pair* p : batch) bt += p->tgt.size() + 1;
      loss_sum += train_step(model, batch, config) * static_cast<double>(bt);
      tokens += bt;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(tokens);
    m.heldout_accuracy = (config.evaluate && !heldout.empty())
                             ? token_accuracy(decode_all(model, heldout,
                                                         config.eval_max_extra),
                                              heldout)
                             : std::numeric_limits<double>::quiet_NaN();
    m.mean_target_cosine = mean_pairwise_cosine(model.export_targets());
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);

    if (epoch == 1) first_loss = m.loss;
    strikes = m.loss > 10.0 * first_loss ? strikes + 1 : 0;
    if (strikes >= 3) {
      result.diverged = true;
      std::ostringstream msg;
      msg << "diverged at epoch " << epoch << ": loss " << m.loss
          << " exceeded 10x the first-epoch loss " << first_loss
          << " for 3 consecutive epochs";
      result.report = msg.str();
      break;
    }
  }
  return result;
}

std::string to_json_line(const EpochMetrics& m) {
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string("null");
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  return "{\"epoch\":" + std::to_string(m.epoch) + ",\"loss\":" + num(m.loss) +
         ",\"heldout_accuracy\":" + num(m.heldout_accuracy) +
         ",\"mean_target_cosine\":" + num(m.mean_target_cosine) + "}";
}

std::vector<double> collapse_experiment(ToySeq2Seq& model,
                                        const std::vector<Pair>& train_pairs,
                                        const TrainConfig& config) {
  if (config.loss != LossKind::kCosine) {
    throw InvalidArgument("collapse_experiment needs the cosine loss");
  }
  TrainConfig cfg = config;
  cfg.evaluate = false;
  model.set_targets_trainable(cfg.targets_trainable);
  std::vector<double> trajectory{mean_pairwise_cosine(model.export_targets())};
  train(model, train_pairs, {}, cfg,
        [&](const EpochMetrics& m) { trajectory.push_back(m.mean_target_cosine); });
  return trajectory;
}

}  // namespace conmt
