// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "knnmt/datastore.hpp"
#include "knnmt/decode.hpp"
#include "knnmt/ivf.hpp"
#include "test_util.hpp"

namespace knnmt {
namespace {

using testing::random_pairs;
using testing::tiny_config;

double total(const VocabDistribution& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

TEST(KnnDistribution, LoneNeighborTakesAllMass) {
  const std::vector<Neighbor> n{{0, 0.0, 5}};
  const auto p = knn_distribution(n, 4.0, 8);
  ASSERT_TRUE(p);
  EXPECT_EQ((*p)[5], 1.0);
  EXPECT_EQ(total(*p), 1.0);
}

TEST(KnnDistribution, HandSoftmax) {
  const double t = 4.0;
  const std::vector<Neighbor> n{{0, 0.0, 4}, {1, t * std::log(3.0), 5}};
  const auto p = knn_distribution(n, t, 6);
  ASSERT_TRUE(p);
  EXPECT_NEAR((*p)[4], 0.75, 1e-12);
  EXPECT_NEAR((*p)[5], 0.25, 1e-12);
}

TEST(KnnDistribution, DuplicateValuesAggregate) {
  const std::vector<Neighbor> n{{0, 0.0, 4}, {1, 0.0, 4}, {2, 0.0, 5}};
  const auto p = knn_distribution(n, 1.0, 6);
  ASSERT_TRUE(p);
  EXPECT_NEAR((*p)[4], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR((*p)[5], 1.0 / 3.0, 1e-15);
}

TEST(KnnDistribution, EmptyNeighborsGiveNoEvidence) {
  EXPECT_FALSE(knn_distribution({}, 1.0, 6));
}

TEST(KnnDistribution, RejectsBadInputs) {
  const std::vector<Neighbor> n{{0, 0.0, 9}};
  EXPECT_THROW(knn_distribution(n, 1.0, 6), DimensionError);
  EXPECT_THROW(knn_distribution(n, 0.0, 16), ConfigError);
}

TEST(KnnDistribution, LargeDistancesStayFinite) {
  const std::vector<Neighbor> n{{0, 1e6, 4}, {1, 1e6 + 1.0, 5}};
  const auto p = knn_distribution(n, 1.0, 6);
  ASSERT_TRUE(p);
  EXPECT_NEAR((*p)[4], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(total(*p), 1.0, 1e-12);
}

TEST(Interpolate, Endpoints) {
  const VocabDistribution knn{0.0, 1.0, 0.0};
  const VocabDistribution nmt{0.2, 0.3, 0.5};
  EXPECT_EQ(interpolate(knn, nmt, 0.0), nmt);
  EXPECT_EQ(interpolate(knn, nmt, 1.0), knn);
}

TEST(Interpolate, HalfMix) {
  const auto p = interpolate({1.0, 0.0}, {0.5, 0.5}, 0.5);
  EXPECT_EQ(p[0], 0.75);
  EXPECT_EQ(p[1], 0.25);
}

TEST(Interpolate, RejectsMismatch) {
  EXPECT_THROW(interpolate({1.0}, {0.5, 0.5}, 0.5), DimensionError);
  EXPECT_THROW(interpolate({1.0, 0.0}, {0.5, 0.5}, 1.5), ConfigError);
}

TEST(Softmax, NormalizesAndOrders) {
  const std::vector<float> logits{1.0f, 2.0f, 3.0f, -50.0f};
  const auto p = softmax(logits);
  EXPECT_NEAR(total(p), 1.0, 1e-12);
  EXPECT_LT(p[0], p[1]);
  EXPECT_LT(p[1], p[2]);
}

TEST(MaxOutputLength, BoundedByPositions) {
  EXPECT_EQ(max_output_length(5, 256), 18);
  EXPECT_EQ(max_output_length(100, 64), 63);
}

class TranslatorTest : public ::testing::Test {
 protected:
  static constexpr int kVocab = 24;
  TranslatorTest() : model_(TransformerWeights<float>::init(tiny_config(kVocab), 7)) {
    Rng rng(11);
    pairs_ = random_pairs(rng, 30, kVocab, 2, 7);
    for (const auto& p : pairs_) sources_.push_back(p.source);
    DatastoreModels m;
    m.base = &model_;
    store_ = build_datastore(pairs_, SourceMode::kParallel, m);
    index_ = build_ivf(store_, 4, 5, 3);
  }

  Transformer<float> model_;
  std::vector<SentencePair> pairs_;
  std::vector<TokenSeq> sources_;
  Datastore store_;
  IvfIndex index_;
};

TEST_F(TranslatorTest, LambdaZeroMatchesBasic) {
  const Translator basic(model_, {}, KnnConfig{.lambda = 0.0});
  KnnConfig k;
  k.lambda = 0.0;
  const Translator with_store(model_, {&store_, &index_}, k);
  EXPECT_EQ(basic.translate(sources_), with_store.translate(sources_));
}

TEST_F(TranslatorTest, BeamOneEqualsGreedy) {
  for (double lambda : {0.0, 0.5}) {
    KnnConfig k;
    k.lambda = lambda;
    const Translator t(model_, {&store_, &index_}, k);
    DecodeOptions beam1;
    beam1.beam = 1;
    DecodeOptions beam_path;
    beam_path.beam = 1;
    beam_path.force_beam = true;
    EXPECT_EQ(t.translate(sources_, beam_path), t.translate(sources_, beam1));
  }
}

TEST_F(TranslatorTest, BatchingDoesNotChangeOutput) {
  KnnConfig k;
  k.lambda = 0.5;
  const Translator t(model_, {&store_, &index_}, k);
  DecodeOptions one;
  one.batch_sentences = 1;
  EXPECT_EQ(t.translate(sources_), t.translate(sources_, one));
}

TEST_F(TranslatorTest, BeamWidthsProduceBoundedOutput) {
  const Translator t(model_, {}, KnnConfig{.lambda = 0.0});
  for (int width : {2, 4}) {
    DecodeOptions o;
    o.beam = width;
    const auto hyps = t.translate(sources_, o);
    ASSERT_EQ(hyps.size(), sources_.size());
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      EXPECT_LE(static_cast<int>(hyps[i].size()), max_output_length(sources_[i].size(), model_.config().max_len));
      for (TokenId tok : hyps[i]) EXPECT_NE(tok, Vocabulary::kEos);
    }
  }
}

TEST_F(TranslatorTest, SingleEntryRetrievalReproducesTarget) {
  const SentencePair& star = pairs_.front();
  DatastoreModels m;
  m.base = &model_;
  const std::vector<SentencePair> one{star};
  const Datastore ds = build_datastore(one, SourceMode::kParallel, m);
  KnnConfig k;
  k.k = 1;
  k.lambda = 1.0;
  const Translator t(model_, {&ds, nullptr}, k);
  EXPECT_EQ(t.translate(star.source), star.target);
}

TEST_F(TranslatorTest, DecodeStepMatchesForcedPass) {
  const std::vector<SentencePair> some(pairs_.begin(), pairs_.begin() + 5);
  const Matrix<float> forced = forced_representations<float>(model_, some, ForcedSource::kGold, nullptr);
  Index row = 0;
  for (const auto& p : some) {
    TokenBatch src;
    TokenSeq x = p.source;
    x.push_back(Vocabulary::kEos);
    src.push(x);
    const Matrix<float> enc = model_.encode(src, nullptr);
    TokenSeq prefix{Vocabulary::kBos};
    for (std::size_t t = 0; t <= p.target.size(); ++t, ++row) {
      const StepOutput step = decode_step(model_, enc, prefix);
      EXPECT_NEAR(total(step.p_nmt), 1.0, 1e-6);
      for (Index j = 0; j < forced.cols(); ++j) EXPECT_NEAR(step.hidden[static_cast<std::size_t>(j)], forced(row, j), 1e-5);
      if (t < p.target.size()) prefix.push_back(p.target[t]);
    }
  }
  EXPECT_EQ(row, forced.rows());
}

TEST_F(TranslatorTest, DecodeStepContract) {
  TokenBatch src;
  src.push({5, Vocabulary::kEos});
  const Matrix<float> enc = model_.encode(src, nullptr);
  EXPECT_THROW(decode_step(model_, enc, {}), ContractViolation);
  EXPECT_THROW(decode_step(model_, enc, {5}), ContractViolation);
  const auto a = decode_step(model_, enc, {Vocabulary::kBos, 6});
  const auto b = decode_step(model_, enc, {Vocabulary::kBos, 6});
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.p_nmt, b.p_nmt);
}

TEST_F(TranslatorTest, TraceHasOneLinePerEmittedPosition) {
  KnnConfig k;
  k.lambda = 0.5;
  const Translator t(model_, {&store_, &index_}, k);
  std::ostringstream trace;
  DecodeOptions o;
  o.trace = &trace;
  const std::vector<TokenSeq> two(sources_.begin(), sources_.begin() + 2);
  const auto hyps = t.translate(two, o);
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(trace.str());
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_NE(line.find("\tnmt\t"), std::string::npos);
    EXPECT_NE(line.find("\tknn\t"), std::string::npos);
    EXPECT_NE(line.find("\tfinal\t"), std::string::npos);
  }
  std::size_t steps = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const bool hit_limit = static_cast<int>(hyps[i].size()) == max_output_length(two[i].size(), model_.config().max_len);
    steps += hyps[i].size() + (hit_limit ? 0 : 1);
  }
  EXPECT_EQ(lines, steps);
}

TEST_F(TranslatorTest, ConfigErrors) {
  KnnConfig k;
  k.lambda = 0.5;
  EXPECT_THROW(Translator(model_, {}, k), ConfigError);
  k.lambda = 1.5;
  EXPECT_THROW(Translator(model_, {&store_, &index_}, k), ConfigError);
  const Translator t(model_, {}, KnnConfig{.lambda = 0.0});
  EXPECT_THROW(t.translate(TokenSeq{}), DataError);
  DecodeOptions o;
  o.beam = 0;
  EXPECT_THROW(t.translate(sources_, o), ConfigError);
}

TEST_F(TranslatorTest, EmptyStoreFallsBackToNmt) {
  const Datastore empty;
  KnnConfig k;
  k.lambda = 0.7;
  const Translator t(model_, {&empty, nullptr}, k);
  const Translator basic(model_, {}, KnnConfig{.lambda = 0.0});
  EXPECT_EQ(t.translate(sources_), basic.translate(sources_));
}

}  // namespace
}  // namespace knnmt
