// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "knnmt/corpus.hpp"
#include "knnmt/model/transformer.hpp"

namespace knnmt {

struct TrainConfig {
  int batch_tokens = 2000;
  int max_steps = 2000;
  double lr_peak = 5e-4;
  int warmup_steps = 400;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;
  double dropout = 0.1;
  double label_smoothing = 0.1;

  /// max_steps = 0 and lr_peak = 0 are accepted as no-op runs.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Inverse square-root schedule with linear warm-up; `step` counts from 1.
double inverse_sqrt_lr(const TrainConfig& cfg, int step);

/// Optional per-run instrumentation. `metrics` receives "step<TAB>loss<TAB>lr<TAB>tokens_per_sec".
struct TrainLog {
  std::ostream* metrics = nullptr;
  int log_every = 50;
  std::vector<double> losses;  // one entry per step
};

/// Adam (beta1 0.9, beta2 0.98, eps 1e-9) with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);
  void step(const ParamList<T>& grads, double lr);

 private:
  ParamList<T> params_;
  std::vector<Matrix<T>> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& grads, double max_norm);

/// Mean label-smoothed cross-entropy over rows; writes d loss / d logits when `dlogits` is set.
template <typename T>
double label_smoothed_xent(const Matrix<T>& logits, std::span<const TokenId> gold, double epsilon,
                           Matrix<T>* dlogits);

/// Cross-entropy on one teacher-forced batch with gradients into `grad` (may be null).
template <typename T>
double xent_loss_and_grad(const Transformer<T>& model, std::span<const SentencePair> pairs,
                          double epsilon, Dropout drop, TransformerWeights<T>* grad);

/// Representation-matching objective on one batch: the adapter-equipped
/// forced pass over the copied pairs (y, y) against `base_reps`, the frozen
/// model's forced pass over (x, y). Mean squared L2 per target position.
/// Gradients flow into `grad` only; the base weights never receive one.
template <typename T>
double rep_match_loss_and_grad(const Transformer<T>& model, const AdapterSet<T>& adapters,
                               std::span<const SentencePair> pairs, const Matrix<T>& base_reps,
                               AdapterSet<T>* grad);

/// Per-pair representation lists h (base pass) and h' (adapter pass).
struct RepMatchBatch {
  std::vector<Matrix<double>> base_reps;
  std::vector<Matrix<double>> adapter_reps;
};

/// Sum over pairs and positions of ||h' - h||^2, divided by the number of positions.
double rep_match_loss(const RepMatchBatch& batch);

/// Streaming form of rep_match_loss.
class RepMatchAccumulator {
 public:
  void add(const Matrix<double>& base, const Matrix<double>& adapted);
  double loss() const;
  std::size_t positions() const { return positions_; }

 private:
  double sum_ = 0.0;
  std::size_t positions_ = 0;
};

/// Base training: label-smoothed cross-entropy from random initialization.
TransformerWeights<float> train_base(const std::vector<SentencePair>& parallel,
                                     const ModelConfig& model_cfg, const TrainConfig& cfg,
                                     TrainLog* log = nullptr);

/// Reverse-direction model (target -> source), for back-translation.
TransformerWeights<float> train_reverse(const std::vector<SentencePair>& parallel,
                                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                                        TrainLog* log = nullptr);

/// Adapter training with the base frozen. Adapters start from the identity.
AdapterSet<float> train_adapters(const std::vector<SentencePair>& parallel,
                                 const TransformerWeights<float>& base, AdapterSites sites,
                                 const TrainConfig& cfg, TrainLog* log = nullptr);

/// Full-model fine-tuning starting from `base`.
TransformerWeights<float> fine_tune_full(const std::vector<SentencePair>& synthetic_parallel,
                                         const TransformerWeights<float>& base,
                                         const TrainConfig& cfg, TrainLog* log = nullptr);

/// Teacher-forced argmax accuracy over all target positions (EOS included).
double token_accuracy(const Transformer<float>& model, const std::vector<SentencePair>& pairs);
/// Mean (unsmoothed) cross-entropy per target position.
double mean_xent(const Transformer<float>& model, const std::vector<SentencePair>& pairs);
/// rep_match objective over a whole corpus, evaluated without training.
double corpus_rep_match_loss(const Transformer<float>& model, const AdapterSet<float>* adapters,
                             const std::vector<SentencePair>& pairs);

/// Groups consecutive pairs until the target-token count reaches `batch_tokens`.
std::vector<std::vector<std::size_t>> make_token_batches(const std::vector<SentencePair>& pairs,
                                                         std::span<const std::size_t> order,
                                                         int batch_tokens);

}  // namespace knnmt
