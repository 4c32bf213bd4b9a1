#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "conmt/decoder.hpp"
#include "conmt/embedspace.hpp"
#include "conmt/error.hpp"
#include "conmt/rng.hpp"
#include "oracles.hpp"

using namespace conmt;

namespace {

std::vector<double> gaussian(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

void expect_same(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].token, b[i].token) << i;
    EXPECT_EQ(std::memcmp(&a[i].cosine, &b[i].cosine, sizeof(double)), 0) << i;
  }
}

std::uint64_t prefix_hash(std::span<const TokenId> p) {
  std::uint64_t h = 0x1234;
  for (auto t : p) h = splitmix64(h ^ t);
  return h;
}

// Random but deterministic model that drifts toward EOS as the prefix grows.
StepFunction hash_model(const EmbeddingTable& t, std::uint64_t seed, double eos_pull) {
  return [&t, seed, eos_pull](std::span<const TokenId>, std::span<const TokenId> prefix) {
    Rng rng(seed, prefix_hash(prefix));
    auto h = gaussian(t.dim(), rng);
    for (std::size_t k = 0; k < t.dim(); ++k) h[k] += eos_pull * prefix.size() * t.row(0)[k];
    return h;
  };
}

const std::vector<TokenId> kSrc{3, 1, 4};

}  // namespace

TEST(Index, SingleRow) {
  const NNIndex idx = build_index(gen_uniform(1, 8, 1));
  const auto r = idx.nearest(std::vector<double>(8, -1.0), 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].token, 0u);
}

TEST(Index, PlanesOnlyForHypercube) {
  EXPECT_TRUE(build_index(gen_hypercube(20, 8, 1).table).has_planes());
  EXPECT_FALSE(build_index(gen_uniform(20, 8, 1)).has_planes());
}

TEST(Nearest, SelfRetrieval) {
  const auto t = gen_uniform(500, 32, 3);
  const auto idx = build_index(t);
  const auto r = idx.nearest(oracle::row_as_double(t, 7), 3);
  EXPECT_EQ(r[0].token, 7u);
  EXPECT_NEAR(r[0].cosine, 1.0, 1e-12);
}

TEST(Nearest, HandTableMatchesBruteForce) {
  const auto t = oracle::from_rows(
      {{1, 0, 0}, {0.9, 0.1, 0}, {0, 1, 0}, {0, 0.7, 0.7}, {-1, 0.2, 0.1}});
  const auto idx = build_index(t);
  const std::vector<double> h{0.3, 0.5, -0.2};
  const auto want = oracle::ranked(t, h);
  const auto got = idx.nearest(h, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(got[i].token, want[i].second);
    EXPECT_EQ(got[i].cosine, want[i].first);
  }
}

TEST(Nearest, MatchesBruteForceUpTo5000) {
  Rng rng(11);
  for (std::size_t v : {2u, 17u, 300u, 1999u, 5000u}) {
    const auto t = gen_uniform(v, 24, v);
    const auto idx = build_index(t, 3);
    for (int q = 0; q < 5; ++q) {
      const auto h = gaussian(24, rng);
      const auto want = oracle::ranked(t, h);
      const std::size_t k = std::min<std::size_t>(v, 10);
      const auto got = idx.nearest(h, k);
      for (std::size_t i = 0; i < k; ++i) {
        ASSERT_EQ(got[i].token, want[i].second) << v;
        ASSERT_EQ(got[i].cosine, want[i].first) << v;
      }
    }
  }
}

TEST(Nearest, TiesGoToLowerIndex) {
  const auto t = oracle::from_rows({{0, 1}, {1, 0}, {0, 1}, {1, 0}});
  const auto r = build_index(t).nearest(std::vector<double>{1, 0}, 4);
  EXPECT_EQ(r[0].token, 1u);
  EXPECT_EQ(r[1].token, 3u);
  EXPECT_EQ(r[2].token, 0u);
  EXPECT_EQ(r[3].token, 2u);
}

TEST(Nearest, ScaleInvariant) {
  const auto t = gen_uniform(800, 16, 2);
  const auto idx = build_index(t);
  Rng rng(3);
  auto h = gaussian(16, rng);
  const auto a = idx.nearest(h, 20);
  for (auto& x : h) x *= 2;
  expect_same(a, idx.nearest(h, 20));
}

TEST(Nearest, ShardCountDoesNotMatter) {
  auto t = std::make_shared<const EmbeddingTable>(gen_uniform(3001, 20, 4));
  const NNIndex one(t, 1), two(t, 2), eight(t, 8);
  Rng rng(5);
  for (int q = 0; q < 20; ++q) {
    const auto h = gaussian(20, rng);
    const auto a = one.nearest(h, 25);
    expect_same(a, two.nearest(h, 25));
    expect_same(a, eight.nearest(h, 25));
  }
}

TEST(Nearest, Rebuild) {
  const auto t = gen_uniform(100, 8, 9);
  Rng rng(1);
  const auto h = gaussian(8, rng);
  expect_same(build_index(t).nearest(h, 10), build_index(t).nearest(h, 10));
}

TEST(Nearest, Errors) {
  const auto idx = build_index(gen_uniform(10, 4, 1));
  EXPECT_THROW(idx.nearest(std::vector<double>(4, 0.0), 1), DegenerateHiddenState);
  EXPECT_THROW(idx.nearest(std::vector<double>(4, 1.0), 11), InvalidArgument);
  EXPECT_THROW(idx.nearest(std::vector<double>(4, 1.0), 0), InvalidArgument);
  EXPECT_THROW(idx.nearest(std::vector<double>(3, 1.0), 1), InvalidArgument);
}

TEST(Prefilter, ExhaustiveEqualsExact) {
  Rng rng(21);
  const auto t = gen_hypercube(1000, 32, 5).table;
  const auto idx = build_index(t);
  for (int q = 0; q < 50; ++q) {
    const auto h = gaussian(32, rng);
    expect_same(idx.nearest_prefiltered(h, 10, t.rows()), idx.nearest(h, 10));
  }
}

TEST(Prefilter, ExactRowWinsForAnyCandidateCount) {
  const auto t = gen_hypercube(2000, 16, 8).table;
  const auto idx = build_index(t);
  for (std::size_t i : {0u, 77u, 1999u}) {
    for (std::size_t m : {1u, 2u, 64u}) {
      const auto r = idx.nearest_prefiltered(oracle::row_as_double(t, i), 1, m);
      EXPECT_EQ(r[0].token, i);
    }
  }
}

TEST(Prefilter, RecallAt64IsReported) {
  const auto t = gen_hypercube(10000, 128, 1).table;
  const auto idx = build_index(t);
  Rng rng(2);
  int hits = 0;
  for (int q = 0; q < 1000; ++q) {
    const auto h = gaussian(128, rng);
    hits += idx.nearest_prefiltered(h, 1, 64)[0].token == idx.nearest(h, 1)[0].token;
  }
  const double recall = hits / 1000.0;
  RecordProperty("recall_at_1_m64", std::to_string(recall));
  std::printf("prefilter recall@1 with m=64: %.3f\n", recall);
  EXPECT_GT(recall, 0.0);
}

TEST(Prefilter, Errors) {
  const auto plain = build_index(gen_uniform(10, 8, 1));
  EXPECT_THROW(plain.nearest_prefiltered(std::vector<double>(8, 1.0), 1, 5), UnsupportedIndex);
  const auto cube = build_index(gen_hypercube(10, 8, 1).table);
  EXPECT_THROW(cube.nearest_prefiltered(std::vector<double>(8, 1.0), 6, 5), InvalidArgument);
  EXPECT_THROW(cube.nearest_prefiltered(std::vector<double>(8, 1.0), 1, 11), InvalidArgument);
}

TEST(Greedy, ConstantModelIsTruncated) {
  const auto t = gen_uniform(10, 8, 1);
  const auto idx = build_index(t);
  const StepFunction model = [&](auto, auto) { return oracle::row_as_double(t, 4); };
  const auto h = greedy_decode(model, idx, kSrc);
  EXPECT_EQ(h.tokens, std::vector<TokenId>(kSrc.size() + 200, 4));
  EXPECT_FALSE(h.finished);
  DecodeOptions o;
  o.max_extra = 5;
  EXPECT_EQ(greedy_decode(model, idx, kSrc, o).tokens.size(), 8u);
}

TEST(Greedy, ImmediateEos) {
  const auto t = gen_uniform(10, 8, 1);
  const auto idx = build_index(t);
  const StepFunction model = [&](auto, auto) { return oracle::row_as_double(t, 0); };
  const auto h = greedy_decode(model, idx, kSrc);
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_TRUE(h.finished);
  ASSERT_EQ(h.step_scores.size(), 1u);
  EXPECT_NEAR(h.score, 1.0 + log_c_d(8), 1e-12);
}

TEST(Beam, WidthOneIsGreedy) {
  const auto t = gen_uniform(40, 8, 3);
  const auto idx = build_index(t);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto model = hash_model(t, s, 0.4);
    const auto g = greedy_decode(model, idx, kSrc);
    const auto b = beam_decode(model, idx, kSrc, 1).front();
    EXPECT_EQ(g.tokens, b.tokens) << s;
    EXPECT_EQ(g.finished, b.finished);
    EXPECT_DOUBLE_EQ(g.score, b.score);
  }
}

TEST(Beam, TwoStepRecovery) {
  // Tokens: 0 = EOS (1,0), 1 = (0,1), 2 = (0.6,0.8).
  const auto t = oracle::from_rows({{1, 0}, {0, 1}, {0.6, 0.8}});
  const auto idx = build_index(t);
  const StepFunction model = [](auto, std::span<const TokenId> p) -> std::vector<double> {
    if (p.empty()) return {0, 1};
    if (p.size() == 1 && p[0] == 1) return {-0.6, -0.8};
    if (p.size() == 1 && p[0] == 2) return {1, 0};
    return {0, 1};
  };
  const double l = log_c_d(2);
  // Greedy: 1 (cos 1), then EOS (cos -0.6).
  const auto g = greedy_decode(model, idx, kSrc);
  EXPECT_EQ(g.tokens, std::vector<TokenId>{1});
  EXPECT_NEAR(g.score, 0.4 + 2 * l, 1e-6);
  // Runner-up 2 (cos 0.8), then EOS (cos 1).
  const auto b = beam_decode(model, idx, kSrc, 2).front();
  EXPECT_EQ(b.tokens, std::vector<TokenId>{2});
  EXPECT_TRUE(b.finished);
  EXPECT_NEAR(b.score, 1.8 + 2 * l, 1e-6);
  // Exhaustive check over every finished non-empty output of length <= 2.
  // (The empty output scores l, above both: EOS is outside the first step's
  // top-2, so no width-2 beam can reach it.)
  EXPECT_GT(sequence_log_likelihood(model, idx, kSrc, {}, true), b.score);
  double best = -1e300;
  std::vector<TokenId> arg;
  std::vector<std::vector<TokenId>> outs;
  for (TokenId a = 1; a < 3; ++a) {
    outs.push_back({a});
    for (TokenId c = 1; c < 3; ++c) outs.push_back({a, c});
  }
  for (const auto& o : outs) {
    const double s = sequence_log_likelihood(model, idx, kSrc, o, true);
    if (s > best) {
      best = s;
      arg = o;
    }
  }
  EXPECT_EQ(arg, b.tokens);
  EXPECT_NEAR(best, b.score, 1e-12);
}

TEST(Beam, AllFinishedAtFirstStep) {
  const auto t = gen_uniform(10, 8, 1);
  const auto idx = build_index(t);
  const StepFunction model = [&](auto, auto) { return oracle::row_as_double(t, 0); };
  for (std::size_t b : {1u, 3u, 10u}) {
    const auto h = beam_decode(model, idx, kSrc, b).front();
    EXPECT_TRUE(h.tokens.empty());
    EXPECT_TRUE(h.finished);
  }
}

TEST(Beam, ScoresAreSumsAndRescore) {
  const auto t = gen_uniform(30, 8, 7);
  const auto idx = build_index(t);
  DecodeOptions o;
  o.nbest = 4;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto model = hash_model(t, s, 0.5);
    const auto hs = beam_decode(model, idx, kSrc, 4, o);
    ASSERT_FALSE(hs.empty());
    ASSERT_LE(hs.size(), 4u);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      double sum = 0;
      for (double x : hs[i].step_scores) sum += x;
      EXPECT_NEAR(sum, hs[i].score, 1e-9);
      EXPECT_NEAR(sequence_log_likelihood(model, idx, kSrc, hs[i].tokens, hs[i].finished),
                  hs[i].score, 1e-9);
      for (auto tok : hs[i].tokens) EXPECT_NE(tok, 0u);
      if (i) EXPECT_GE(hs[i - 1].score, hs[i].score);
    }
  }
}

TEST(Beam, WideEnoughBeamIsExhaustive) {
  // Three tokens and a cap of three: a width-27 beam never prunes, so it must
  // find the best of all outputs, and no narrower beam may beat it.
  const std::vector<TokenId> src{1};
  DecodeOptions o;
  o.max_extra = 2;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto t = gen_uniform(3, 4, 50 + s);
    const auto idx = build_index(t);
    const auto model = hash_model(t, 200 + s, 0.3);
    double best = -1e300;
    std::vector<std::pair<std::vector<TokenId>, bool>> outs{{{}, true}};
    for (TokenId a = 1; a < 3; ++a) {
      outs.push_back({{a}, true});
      for (TokenId b = 1; b < 3; ++b) {
        outs.push_back({{a, b}, true});
        for (TokenId c = 1; c < 3; ++c) outs.push_back({{a, b, c}, false});
      }
    }
    for (const auto& [out, fin] : outs) {
      best = std::max(best, sequence_log_likelihood(model, idx, src, out, fin, o));
    }
    EXPECT_NEAR(beam_decode(model, idx, src, 27, o).front().score, best, 1e-12) << s;
    for (std::size_t b : {1u, 2u, 4u, 8u}) {
      EXPECT_LE(beam_decode(model, idx, src, b, o).front().score, best + 1e-12) << s;
    }
  }
}

TEST(Beam, WiderBeamCanScoreLower) {
  // Beam search is not monotone in width: the greedy path can be pruned at
  // width 2 in favour of a prefix whose continuations turn out worse. These
  // prefix-hashed models produce such cases; the scores must still rescore.
  const auto t = gen_uniform(40, 8, 5);
  const auto idx = build_index(t);
  int drops = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto model = hash_model(t, 100 + s, 0.3);
    const auto g = beam_decode(model, idx, kSrc, 1).front();
    const auto b = beam_decode(model, idx, kSrc, 2).front();
    EXPECT_NEAR(sequence_log_likelihood(model, idx, kSrc, b.tokens, b.finished), b.score, 1e-9);
    if (b.score < g.score) ++drops;
  }
  RecordProperty("width2_below_greedy", drops);
  EXPECT_GT(drops, 0);
}

TEST(Beam, MinusSignFlipsStepScores) {
  const auto t = oracle::from_rows({{1, 0}, {0, 1}, {0, -1}});
  const auto idx = build_index(t);
  const StepFunction model = [](auto, std::span<const TokenId> p) -> std::vector<double> {
    if (p.empty()) return {0, 1};
    return {1, 0};
  };
  DecodeOptions o;
  o.sign = ScoreSign::kMinus;
  const double l = log_c_d(2);
  // Candidates still come from the cosine top-B: token 2 (cos -1) now scores
  // 1 + l, the immediate EOS scores l, and every continuation of token 2 loses
  // at least one more l, so the empty output wins.
  const auto hs = [&] {
    auto opts = o;
    opts.nbest = 3;
    return beam_decode(model, idx, kSrc, 3, opts);
  }();
  EXPECT_TRUE(hs.front().tokens.empty());
  EXPECT_NEAR(hs.front().score, l, 1e-12);
  const auto g = greedy_decode(model, idx, kSrc, o);
  EXPECT_NEAR(g.step_scores.front(), -1.0 + l, 1e-12);
}

TEST(Beam, PerTokenNormalization) {
  Hypothesis h;
  h.tokens = {5, 6};
  h.step_scores = {-1, -2, -3};
  h.score = -6;
  h.finished = true;
  EXPECT_DOUBLE_EQ(h.normalized(LengthNorm::kNone), -6.0);
  EXPECT_DOUBLE_EQ(h.normalized(LengthNorm::kPerToken), -2.0);
  const auto t = gen_uniform(30, 8, 7);
  const auto idx = build_index(t);
  DecodeOptions o;
  o.length_norm = LengthNorm::kPerToken;
  o.nbest = 3;
  const auto hs = beam_decode(hash_model(t, 3, 0.5), idx, kSrc, 3, o);
  for (std::size_t i = 1; i < hs.size(); ++i) {
    EXPECT_GE(hs[i - 1].normalized(LengthNorm::kPerToken), hs[i].normalized(LengthNorm::kPerToken));
  }
}

TEST(Beam, Errors) {
  const auto t = gen_uniform(10, 8, 1);
  const auto idx = build_index(t);
  EXPECT_THROW(beam_decode(hash_model(t, 1, 0.5), idx, kSrc, 0), InvalidArgument);
  EXPECT_EQ(parse_length_norm("per-token"), LengthNorm::kPerToken);
  EXPECT_THROW(parse_length_norm("avg"), InvalidArgument);
}
