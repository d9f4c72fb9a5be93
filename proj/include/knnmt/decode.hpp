// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "knnmt/datastore.hpp"
#include "knnmt/ivf.hpp"
#include "knnmt/model/transformer.hpp"

namespace knnmt {

using VocabDistribution = std::vector<double>;

struct KnnConfig {
  int k = 16;
  double temperature = 4.0;
  double lambda = 0.5;
  int nprobe = 8;

  /// Throws ConfigError unless k >= 1, temperature > 0, 0 <= lambda <= 1 and nprobe >= 1.
  void validate() const;
  bool operator==(const KnnConfig&) const = default;
};

/// p(v) proportional to the sum of exp(-d_i / T) over neighbors with value v.
/// Returns nullopt for an empty neighbor list (no retrieval evidence).
std::optional<VocabDistribution> knn_distribution(std::span<const Neighbor> neighbors,
                                                  double temperature, int vocab_size);

/// lambda * p_knn + (1 - lambda) * p_nmt.
VocabDistribution interpolate(const VocabDistribution& p_knn, const VocabDistribution& p_nmt,
                              double lambda);

/// Softmax in double precision.
VocabDistribution softmax(std::span<const float> logits);

struct StepOutput {
  std::vector<float> hidden;
  VocabDistribution p_nmt;
};

/// Reference single step: full decoder pass over `prefix` (which starts with
/// BOS), returning the last position's state and distribution.
StepOutput decode_step(const Transformer<float>& model, const Matrix<float>& enc_out,
                       const TokenSeq& prefix);

/// Datastore and index used for retrieval during decoding.
struct Retrieval {
  const Datastore* store = nullptr;
  const IvfIndex* index = nullptr;
};

struct DecodeOptions {
  int beam = 1;  // 1 = greedy
  /// Runs the beam search code path even at width 1.
  bool force_beam = false;
  std::size_t batch_sentences = 64;
  /// Per-step trace lines (sentence, position, top-5 p_NMT, neighbors, top-5 p).
  std::ostream* trace = nullptr;
};

/// 2|x| + 8, bounded by the model's position table.
int max_output_length(std::size_t source_length, int model_max_len);

/// Greedy or beam translation with optional kNN interpolation. The model runs
/// without adapters.
class Translator {
 public:
  Translator(const Transformer<float>& model, Retrieval retrieval, KnnConfig knn);

  /// Source sentences (without EOS) to hypotheses (without EOS).
  std::vector<TokenSeq> translate(const std::vector<TokenSeq>& sources,
                                  const DecodeOptions& opts = {}) const;
  TokenSeq translate(const TokenSeq& source, const DecodeOptions& opts = {}) const;

  /// Final next-token distribution given the decoder state and p_NMT.
  VocabDistribution mix(std::span<const float> hidden, const VocabDistribution& p_nmt,
                        std::vector<Neighbor>* neighbors = nullptr) const;

  const KnnConfig& knn() const { return knn_; }

 private:
  std::vector<TokenSeq> greedy(const std::vector<TokenSeq>& sources, std::size_t offset,
                               std::ostream* trace) const;
  std::vector<TokenSeq> beam(const std::vector<TokenSeq>& sources, int width) const;

  const Transformer<float>& model_;
  Retrieval retrieval_;
  KnnConfig knn_;
};

}  // namespace knnmt
