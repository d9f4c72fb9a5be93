// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "knnmt/eval.hpp"
#include "test_util.hpp"

namespace knnmt {
namespace {

using testing::random_pairs;
using testing::tiny_config;

// Independent corpus BLEU: counts n-grams with a linear scan per sentence.
double oracle_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  double match[4] = {0, 0, 0, 0}, tot[4] = {0, 0, 0, 0};
  double hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hl += static_cast<double>(h.size());
    rl += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      if (h.size() < n) continue;
      std::vector<bool> used(r.size() >= n ? r.size() - n + 1 : 0, false);
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        tot[n - 1] += 1;
        for (std::size_t j = 0; j < used.size(); ++j) {
          if (used[j]) continue;
          if (std::equal(h.begin() + static_cast<std::ptrdiff_t>(i), h.begin() + static_cast<std::ptrdiff_t>(i + n),
                         r.begin() + static_cast<std::ptrdiff_t>(j))) {
            used[j] = true;
            match[n - 1] += 1;
            break;
          }
        }
      }
    }
  }
  if (hl == 0) return 0.0;
  double lg = 0;
  for (int n = 0; n < 4; ++n) lg += std::log((match[n] == 0 ? 0.1 : match[n]) / (tot[n] == 0 ? 1 : tot[n]));
  const double bp = hl >= rl ? 1.0 : std::exp(1.0 - rl / hl);
  return 100.0 * bp * std::exp(lg / 4.0);
}

TEST(Bleu, PerfectMatchIsHundred) {
  const std::vector<TokenSeq> refs{{4, 5, 6, 7, 8}, {9, 10, 11, 12}};
  EXPECT_DOUBLE_EQ(corpus_bleu(refs, refs), 100.0);
}

TEST(Bleu, OneSubstitutionHandCount) {
  const std::vector<TokenSeq> hyp{{1, 2, 3, 4, 5, 6}};
  const std::vector<TokenSeq> ref{{1, 2, 3, 4, 5, 7}};
  const auto st = bleu_stats(hyp, ref);
  EXPECT_EQ(st.matches, (std::array<std::uint64_t, 4>{5, 4, 3, 2}));
  EXPECT_EQ(st.totals, (std::array<std::uint64_t, 4>{6, 5, 4, 3}));
  const double want = 100.0 * std::pow(5.0 / 6 * 4.0 / 5 * 3.0 / 4 * 2.0 / 3, 0.25);
  EXPECT_NEAR(corpus_bleu(hyp, ref), want, 1e-9);
  EXPECT_NEAR(corpus_bleu(hyp, ref), 75.98, 0.01);
}

TEST(Bleu, NoOverlapUsesFlooredCounts) {
  // Zero matches count as 0.1: precisions 0.1/4, 0.1/3, 0.1/2, 0.1/1.
  const double b = corpus_bleu({{4, 5, 6, 7}}, {{8, 9, 10, 11}});
  EXPECT_NEAR(b, 100.0 * 0.1 * std::pow(1.0 / 24.0, 0.25), 1e-9);
}

TEST(Bleu, EmptyHypothesesScoreZero) {
  EXPECT_EQ(corpus_bleu({{}, {}}, {{4, 5}, {6}}), 0.0);
}

TEST(Bleu, BrevityPenalty) {
  const double b = corpus_bleu({{4, 5, 6, 7}}, {{4, 5, 6, 7, 8, 9, 10, 11}});
  EXPECT_NEAR(b, 100.0 * std::exp(1.0 - 2.0), 1e-9);
}

TEST(Bleu, ClippedCounts) {
  const auto st = bleu_stats({{4, 4, 4, 4}}, {{4, 5}});
  EXPECT_EQ(st.matches[0], 1u);
}

TEST(Bleu, MatchesIndependentOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<TokenSeq> hyps, refs;
    for (int s = 0; s < 8; ++s) {
      hyps.push_back(testing::random_seq(rng, 9, 0, 9));
      refs.push_back(testing::random_seq(rng, 9, 1, 9));
    }
    EXPECT_NEAR(corpus_bleu(hyps, refs), oracle_bleu(hyps, refs), 1e-9);
  }
}

TEST(Bleu, SizeMismatchViolatesContract) {
  EXPECT_THROW(corpus_bleu({{4}}, {}), ContractViolation);
}

TEST(TuneLambda, SingletonGrid) {
  const std::vector<SentencePair> dev{{{4}, {5, 6}}};
  const auto r = tune_lambda(dev, [](double) { return std::vector<TokenSeq>{{5}}; }, {0.0});
  EXPECT_EQ(r.best_lambda, 0.0);
  EXPECT_EQ(r.curve.size(), 1u);
}

TEST(TuneLambda, TiesGoToSmallerLambda) {
  const std::vector<SentencePair> dev{{{4}, {5, 6, 7, 8}}};
  auto system = [](double l) {
    if (l == 0.25 || l == 0.5) return std::vector<TokenSeq>{{5, 6, 7, 8}};
    return std::vector<TokenSeq>{{9}};
  };
  const auto r = tune_lambda(dev, system, {0.75, 0.5, 0.25, 0.0});
  EXPECT_EQ(r.best_lambda, 0.25);
  EXPECT_DOUBLE_EQ(r.best_bleu, 100.0);
  ASSERT_EQ(r.curve.size(), 4u);
  EXPECT_EQ(r.curve.front().first, 0.0);
}

TEST(TuneLambda, RejectsBadGrid) {
  const std::vector<SentencePair> dev{{{4}, {5}}};
  auto system = [](double) { return std::vector<TokenSeq>{{5}}; };
  EXPECT_THROW(tune_lambda(dev, system, {}), ConfigError);
  EXPECT_THROW(tune_lambda(dev, system, {1.5}), ConfigError);
}

TEST(Similarity, SelfComparisonIsPerfect) {
  Matrix<float> a(3, 4);
  a.setRandom();
  const auto r = compare_representations(a, a);
  EXPECT_NEAR(r.mean_cosine, 1.0, 1e-12);
  EXPECT_EQ(r.mean_sq_euclidean, 0.0);
  EXPECT_EQ(r.n_positions, 3u);
}

TEST(Similarity, HandValues) {
  Matrix<float> a(2, 2), b(2, 2);
  a << 1, 0, 0, 2;
  b << 0, 1, 0, 3;
  const auto r = compare_representations(a, b);
  EXPECT_NEAR(r.mean_cosine, 0.5, 1e-12);
  EXPECT_NEAR(r.mean_sq_euclidean, (2.0 + 1.0) / 2.0, 1e-12);
  Matrix<float> c(1, 2);
  EXPECT_THROW(compare_representations(a, c), DimensionError);
}

TEST(Similarity, ParallelModeAgainstItself) {
  const int vocab = 20;
  const Transformer<float> model(TransformerWeights<float>::init(tiny_config(vocab), 5));
  Rng rng(1);
  const auto dev = random_pairs(rng, 10, vocab);
  DatastoreModels m;
  m.base = &model;
  const auto r = measure_similarity(dev, m, SimilarityMode::kParallel);
  EXPECT_NEAR(r.mean_cosine, 1.0, 1e-6);
  EXPECT_EQ(r.mean_sq_euclidean, 0.0);
  std::size_t positions = 0;
  for (const auto& p : dev) positions += p.target.size() + 1;
  EXPECT_EQ(r.n_positions, positions);
  EXPECT_THROW(measure_similarity(dev, m, SimilarityMode::kCopyAdapters), ConfigError);
  EXPECT_THROW(measure_similarity({}, m, SimilarityMode::kCopy), DataError);
  const auto identity = AdapterSet<float>::init(model.config(), 2);
  m.adapters = &identity;
  const auto copy = measure_similarity(dev, m, SimilarityMode::kCopy);
  const auto copy_id = measure_similarity(dev, m, SimilarityMode::kCopyAdapters);
  EXPECT_EQ(copy.mean_cosine, copy_id.mean_cosine);
  EXPECT_EQ(copy.mean_sq_euclidean, copy_id.mean_sq_euclidean);
}

TEST(SimilarityModeNames, RoundTrip) {
  for (auto m : {SimilarityMode::kParallel, SimilarityMode::kCopy, SimilarityMode::kCopyAdapters,
                 SimilarityMode::kEmpty, SimilarityMode::kBacktranslate})
    EXPECT_EQ(similarity_mode_from_string(to_string(m)), m);
  EXPECT_EQ(similarity_mode_from_string("uda"), SimilarityMode::kCopyAdapters);
  EXPECT_THROW(similarity_mode_from_string("x"), ConfigError);
}

TEST(DumpReps, FiltersAndRoundTrips) {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  const TokenId a = vocab.lookup("a"), b = vocab.lookup("b");
  Datastore ds;
  ds.dim = 3;
  ds.keys = {0.1f, -2.5f, 3.0e-7f, 1.0f, 2.0f, 3.0f, 0.3333333f, 7.0f, -0.0f};
  ds.values = {a, a, b};
  testing::TempDir dir("dump");
  const auto path = dir.path() / "a.tsv";
  const auto sum = dump_representations(ds, {a}, vocab, path);
  EXPECT_EQ(sum.rows, 2u);
  EXPECT_EQ(sum.missing_tokens, 0u);
  std::ifstream f(path);
  std::string tok;
  std::size_t id;
  for (std::size_t row = 0; row < 2; ++row) {
    ASSERT_TRUE(f >> tok >> id);
    EXPECT_EQ(tok, "a");
    for (int j = 0; j < 3; ++j) {
      std::string text;
      f >> text;
      EXPECT_EQ(std::stof(text), ds.key(id)[j]);
    }
  }
  EXPECT_FALSE(f >> tok);
  EXPECT_THROW(dump_representations(ds, {}, vocab, path), ContractViolation);
  EXPECT_EQ(dump_representations(ds, {Vocabulary::kUnk}, vocab, path).missing_tokens, 1u);
}

}  // namespace
}  // namespace knnmt
