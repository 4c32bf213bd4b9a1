#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "conmt/embedspace.hpp"
#include "conmt/error.hpp"
#include "conmt/rng.hpp"
#include "conmt/toymodel.hpp"

using namespace conmt;

namespace {

ToyTask small_task(TaskKind kind, std::size_t vocab, std::size_t pairs, std::uint64_t seed) {
  ToyTask t;
  t.kind = kind;
  t.src_vocab = t.tgt_vocab = vocab;
  t.pairs = pairs;
  t.seed = seed;
  return t;
}

ToySeq2Seq micro_model(std::size_t vocab, std::size_t d, std::size_t hidden,
                       std::uint64_t seed, bool trainable) {
  ModelConfig mc;
  mc.src_vocab = vocab;
  mc.hidden = hidden;
  mc.max_positions = 4;
  mc.seed = seed;
  ToySeq2Seq m(mc, std::make_shared<const EmbeddingTable>(gen_uniform(vocab, d, seed + 1)));
  m.set_targets_trainable(trainable);
  // Nonzero position logits and biases so their gradients are exercised.
  Rng rng(seed, 77);
  for (auto& x : m.params().pos) x = 0.5 * rng.normal();
  for (auto& x : m.params().b) x = 0.1 * rng.normal();
  for (auto& x : m.params().bo) x = 0.1 * rng.normal();
  return m;
}

double max_gradient_error(ToySeq2Seq& m, const std::vector<Pair>& pairs, LossKind kind) {
  std::vector<const Pair*> batch;
  for (const auto& p : pairs) batch.push_back(&p);
  ToyParams grad = m.params();
  grad.zero();
  m.loss(batch, kind, &grad);
  auto params = m.params().tensors();
  auto grads = grad.tensors();
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].first == "targets" && !m.targets_trainable()) continue;
    auto& p = *params[t].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x = p[i], h = 1e-6;
      p[i] = x + h;
      const double up = m.loss(batch, kind);
      p[i] = x - h;
      const double down = m.loss(batch, kind);
      p[i] = x;
      const double fd = (up - down) / (2 * h);
      const double an = (*grads[t].second)[i];
      const double err = std::abs(fd - an) / std::max(1e-4, std::abs(fd) + std::abs(an));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST(Task, CopyAndReverse) {
  const auto copy = gen_task(small_task(TaskKind::kCopy, 50, 200, 1));
  for (const auto& p : copy.pairs) EXPECT_EQ(p.src, p.tgt);
  const auto rev = gen_task(small_task(TaskKind::kReverse, 50, 200, 1));
  for (const auto& p : rev.pairs) EXPECT_EQ(p.tgt, Sentence(p.src.rbegin(), p.src.rend()));
}

TEST(Task, LengthsAndTokens) {
  auto spec = small_task(TaskKind::kLexicon, 100, 500, 3);
  spec.min_len = 2;
  spec.max_len = 5;
  const auto d = gen_task(spec);
  ASSERT_EQ(d.pairs.size(), 500u);
  for (const auto& p : d.pairs) {
    EXPECT_GE(p.src.size(), 2u);
    EXPECT_LE(p.src.size(), 5u);
    for (auto t : p.src) {
      EXPECT_NE(t, kEos);
      EXPECT_LT(t, 100u);
    }
  }
  EXPECT_EQ(d.tgt_vocab.token(kEos), "</s>");
  EXPECT_EQ(d.tgt_vocab.freq(kEos), 500u);
}

TEST(Task, LexiconIsABijection) {
  const auto d = gen_task(small_task(TaskKind::kLexicon, 300, 2000, 4));
  ASSERT_EQ(d.mapping.size(), 300u);
  EXPECT_EQ(d.mapping[kEos], kEos);
  std::set<TokenId> image(d.mapping.begin(), d.mapping.end());
  EXPECT_EQ(image.size(), 300u);
  for (const auto& p : d.pairs) {
    ASSERT_EQ(p.src.size(), p.tgt.size());
    for (std::size_t i = 0; i < p.src.size(); ++i) EXPECT_EQ(p.tgt[i], d.mapping[p.src[i]]);
  }
}

TEST(Task, ZipfHeadDominatesRank500) {
  const auto d = gen_task(small_task(TaskKind::kLexicon, 2000, 10000, 5));
  const auto& v = d.src_vocab;
  // EOS (one per pair) sits at the head next to the top Zipf token.
  EXPECT_LE(v.rank_of(kEos), 1u);
  EXPECT_GE(v.freq(v.at_rank(2)), 10 * v.freq(v.at_rank(500)));
}

TEST(Task, DeterministicAndValidated) {
  const auto a = gen_task(small_task(TaskKind::kLexicon, 100, 300, 9));
  const auto b = gen_task(small_task(TaskKind::kLexicon, 100, 300, 9));
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) EXPECT_EQ(a.pairs[i].tgt, b.pairs[i].tgt);
  EXPECT_THROW(gen_task(small_task(TaskKind::kCopy, 1, 10, 1)), InvalidArgument);
  auto bad = small_task(TaskKind::kCopy, 10, 10, 1);
  bad.min_len = 5;
  bad.max_len = 4;
  EXPECT_THROW(gen_task(bad), InvalidArgument);
  EXPECT_EQ(parse_task_kind("reverse"), TaskKind::kReverse);
  EXPECT_THROW(parse_task_kind("sort"), InvalidArgument);
}

TEST(Split, DisjointAndDeterministic) {
  const auto d = gen_task(small_task(TaskKind::kCopy, 50, 1000, 2));
  const auto [train, held] = split_heldout(d.pairs, 0.1, 3);
  EXPECT_EQ(held.size(), 100u);
  EXPECT_EQ(train.size() + held.size(), 1000u);
  const auto [train2, held2] = split_heldout(d.pairs, 0.1, 3);
  for (std::size_t i = 0; i < held.size(); ++i) EXPECT_EQ(held[i].src, held2[i].src);
  EXPECT_THROW(split_heldout(d.pairs, 0.0, 1), InvalidArgument);
  const auto freq = count_target_frequencies(train, d.tgt_vocab);
  EXPECT_EQ(freq.freq(kEos), train.size());
}

TEST(Model, EmptyPrefixAndCausality) {
  auto m = micro_model(20, 8, 0, 1, false);
  const Sentence src{3, 4, 5};
  const auto h0 = m.forward(src, {});
  ASSERT_EQ(h0.size(), 1u);
  EXPECT_EQ(h0[0].size(), 8u);
  const Sentence a{7, 8, 9, 10}, b{7, 8, 11, 2};
  const auto ha = m.forward(src, a), hb = m.forward(src, b);
  ASSERT_EQ(ha.size(), 5u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ha[i], hb[i]) << i;
  EXPECT_NE(ha[3], hb[3]);
}

TEST(Model, SourceSensitivity) {
  auto m = micro_model(20, 8, 0, 2, false);
  const auto a = m.forward(Sentence{3, 4}, {}), b = m.forward(Sentence{3, 6}, {});
  double diff = 0;
  for (std::size_t i = 0; i < 8; ++i) diff += std::abs(a[0][i] - b[0][i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Model, IndexErrors) {
  auto m = micro_model(20, 8, 0, 2, false);
  EXPECT_THROW(m.forward(Sentence{20}, {}), InvalidArgument);
  EXPECT_THROW(m.forward(Sentence{1}, Sentence{99}), InvalidArgument);
}

TEST(Model, StepFunctionMatchesForward) {
  auto m = micro_model(20, 8, 6, 3, false);
  const Sentence src{1, 2, 3}, tgt{4, 5, 6, 7, 8, 9};
  const auto full = m.forward(src, tgt);
  auto step = m.step_function();
  // Out-of-order prefixes exercise the cache.
  for (std::size_t n : {3u, 0u, 6u, 2u, 5u, 1u, 4u}) {
    const auto h = step(src, std::span<const TokenId>(tgt).first(n));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(h[i], full[n][i]);
  }
}

TEST(Model, GradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const bool trainable = s % 2 == 1;
    auto m = micro_model(7, 8, s % 3 == 0 ? 0 : 5, s, trainable);
    const std::vector<Pair> pairs{{{1, 2, 3}, {4, 5}}, {{6, 1, 2, 3, 4}, {2, 2, 1, 6}}, {{5}, {}}};
    EXPECT_LT(max_gradient_error(m, pairs, LossKind::kCosine), 1e-4) << s;
    EXPECT_LT(max_gradient_error(m, pairs, LossKind::kDiscrete), 1e-4) << s;
  }
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  auto m = micro_model(20, 8, 0, 4, false);
  const auto before = m.params();
  const std::vector<Pair> pairs{{{1, 2}, {3, 4}}};
  std::vector<const Pair*> batch{&pairs[0]};
  TrainConfig c;
  c.learning_rate = 0.0;
  train_step(m, batch, c);
  auto a = before.tensors();
  auto b = m.params().tensors();
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(*a[t].second, *b[t].second);
}

TEST(Train, SmallStepReducesLossOnThePair) {
  for (LossKind kind : {LossKind::kCosine, LossKind::kDiscrete}) {
    auto m = micro_model(20, 8, 0, 5, false);
    const std::vector<Pair> pairs{{{1, 2, 3}, {3, 4, 5}}};
    std::vector<const Pair*> batch{&pairs[0]};
    TrainConfig c;
    c.loss = kind;
    c.learning_rate = 1e-2;
    const double before = train_step(m, batch, c);
    EXPECT_LT(m.loss(batch, kind), before);
  }
}

TEST(Train, FrozenTargetsAreUntouched) {
  const auto d = gen_task(small_task(TaskKind::kLexicon, 50, 300, 6));
  ModelConfig mc;
  mc.src_vocab = 50;
  auto table = std::make_shared<const EmbeddingTable>(gen_uniform(50, 16, 6));
  const EmbeddingTable copy = *table;
  ToySeq2Seq m(mc, table);
  TrainConfig c;
  c.epochs = 3;
  c.evaluate = false;
  const auto traj = collapse_experiment(m, d.pairs, c);
  EXPECT_TRUE(m.export_targets().same_rows(copy));
  EXPECT_TRUE(table->same_rows(copy));
  ASSERT_EQ(traj.size(), 4u);
  for (double x : traj) EXPECT_EQ(x, traj.front());
}

TEST(Train, TwoTokenTrainableTargetsDrawTogether) {
  // Minimal instance: one content token plus EOS.
  std::vector<Pair> pairs;
  for (int i = 0; i < 40; ++i) pairs.push_back({Sentence(1 + i % 3, 1), Sentence(1 + i % 3, 1)});
  ModelConfig mc;
  mc.src_vocab = 2;
  mc.seed = 3;
  ToySeq2Seq m(mc, std::make_shared<const EmbeddingTable>(gen_uniform(2, 8, 3)));
  TrainConfig c;
  c.targets_trainable = true;
  c.epochs = 60;
  c.batch_size = 8;
  c.learning_rate = 0.2;
  const auto traj = collapse_experiment(m, pairs, c);
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 5 <= traj.size(); i += 5) {
    double s = 0;
    for (std::size_t j = i; j < i + 5; ++j) s += traj[j];
    smooth.push_back(s / 5);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_GE(smooth[i], smooth[i - 1] - 1e-12) << i;
  EXPECT_GT(traj.back(), traj.front());
}

TEST(Train, Reproducible) {
  const auto d = gen_task(small_task(TaskKind::kLexicon, 60, 400, 7));
  const auto [tr, he] = split_heldout(d.pairs, 0.2, 7);
  auto run = [&, &tr = tr, &he = he] {
    ModelConfig mc;
    mc.src_vocab = 60;
    mc.seed = 7;
    ToySeq2Seq m(mc, std::make_shared<const EmbeddingTable>(gen_uniform(60, 16, 7)));
    TrainConfig c;
    c.epochs = 3;
    c.seed = 7;
    return train(m, tr, he, c);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].loss, b.epochs[i].loss);
    EXPECT_EQ(a.epochs[i].heldout_accuracy, b.epochs[i].heldout_accuracy);
  }
  EXPECT_LT(a.epochs.back().loss, a.epochs.front().loss);
  EXPECT_EQ(to_json_line(a.epochs[0]).front(), '{');
}

TEST(Train, NonFiniteLossAborts) {
  auto m = micro_model(20, 8, 0, 4, false);
  m.params().u[0] = std::nan("");
  const std::vector<Pair> pairs{{{1, 2}, {3, 4}}};
  std::vector<const Pair*> batch{&pairs[0]};
  EXPECT_THROW(train_step(m, batch, TrainConfig{}), TrainingFailure);
}

TEST(Train, CollapseNeedsCosineLoss) {
  auto m = micro_model(20, 8, 0, 4, true);
  TrainConfig c;
  c.loss = LossKind::kDiscrete;
  EXPECT_THROW(collapse_experiment(m, {{{1}, {1}}}, c), InvalidArgument);
}

TEST(Train, TokenAccuracy) {
  const std::vector<Pair> refs{{{}, {1, 2, 3}}, {{}, {4}}};
  EXPECT_DOUBLE_EQ(token_accuracy({{1, 2, 3}, {4}}, refs), 1.0);
  EXPECT_DOUBLE_EQ(token_accuracy({{1, 9}, {4, 4, 4}}, refs), 0.5);
  EXPECT_THROW(token_accuracy({{1}}, refs), InvalidArgument);
}

TEST(Checkpoint, RoundTrip) {
  auto m = micro_model(20, 8, 5, 6, true);
  std::stringstream buf;
  m.save(buf);
  EXPECT_EQ(buf.str().substr(0, 4), "CTOY");
  const auto back = ToySeq2Seq::load(buf, m.initial_targets());
  auto a = m.params().tensors();
  auto b = back.params().tensors();
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(*a[t].second, *b[t].second) << a[t].first;
  EXPECT_TRUE(back.targets_trainable());
  EXPECT_EQ(back.hidden(), 5u);
  std::istringstream junk("NOPE");
  EXPECT_THROW(ToySeq2Seq::load(junk, m.initial_targets()), ParseError);
}
