// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

namespace knnmt {

void TrainConfig::validate() const {
  if (batch_tokens < 1) throw ConfigError("batch_tokens must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(lr_peak >= 0.0)) throw ConfigError("lr_peak must be >= 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (max_steps > 0 && warmup_steps > max_steps) throw ConfigError("warmup_steps must not exceed max_steps");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("label_smoothing must be in [0, 1)");
}

double inverse_sqrt_lr(const TrainConfig& cfg, int step) {
  const double s = std::max(1, step);
  const double w = cfg.warmup_steps;
  return cfg.lr_peak * std::min(s / w, std::sqrt(w / s));
}

// ---------------------------------------------------------------- optimizer

template <typename T>
Adam<T>::Adam(ParamList<T> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
    v_.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
  }
}

template <typename T>
void Adam<T>::step(const ParamList<T>& grads, double lr) {
  if (grads.size() != params_.size()) throw ContractViolation("adam: gradient list mismatch");
  ++t_;
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = grads[i].value->array();
    auto m = m_[i].array();
    auto v = v_[i].array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    params_[i].value->array() -= step * m / ((v * inv_c2).sqrt() + eps);
  }
}

template <typename T>
double clip_grad_norm(const ParamList<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += static_cast<double>(g.value->squaredNorm());
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (const auto& g : grads) *g.value *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------- losses

template <typename T>
double label_smoothed_xent(const Matrix<T>& logits, std::span<const TokenId> gold, double epsilon,
                           Matrix<T>* dlogits) {
  const Index n = logits.rows();
  const Index vocab = logits.cols();
  if (static_cast<std::size_t>(n) != gold.size()) throw DimensionError("xent: label count mismatch");
  if (n == 0) return 0.0;
  if (dlogits) dlogits->resize(n, vocab);
  const double uniform = epsilon / static_cast<double>(vocab);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const double mx = static_cast<double>(row.maxCoeff());
    double z = 0.0, sum_logit = 0.0;
    for (Index j = 0; j < vocab; ++j) {
      z += std::exp(static_cast<double>(row(j)) - mx);
      sum_logit += static_cast<double>(row(j));
    }
    const double lse = mx + std::log(z);
    const auto g = static_cast<Index>(gold[static_cast<std::size_t>(i)]);
    const double nll = lse - static_cast<double>(row(g));
    const double smooth = lse - sum_logit / static_cast<double>(vocab);
    total += (1.0 - epsilon) * nll + epsilon * smooth;
    if (dlogits) {
      auto d = dlogits->row(i);
      for (Index j = 0; j < vocab; ++j)
        d(j) = static_cast<T>((std::exp(static_cast<double>(row(j)) - lse) - uniform) /
                              static_cast<double>(n));
      d(g) -= static_cast<T>((1.0 - epsilon) / static_cast<double>(n));
    }
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("non-finite cross-entropy");
  return loss;
}

template <typename T>
double xent_loss_and_grad(const Transformer<T>& model, std::span<const SentencePair> pairs,
                          double epsilon, Dropout drop, TransformerWeights<T>* grad) {
  const ForcedBatch b = make_forced_batch(pairs);
  EncoderCache<T> ec;
  DecoderCache<T> dc;
  const bool need_cache = grad != nullptr;
  const Matrix<T> memory = model.encode(b.source, nullptr, drop, need_cache ? &ec : nullptr);
  const Matrix<T> hidden =
      model.decode(memory, b.source.segments, b.target_in, nullptr, drop, need_cache ? &dc : nullptr);
  const Matrix<T> logits = model.logits(hidden);
  Matrix<T> dlogits;
  const double loss = label_smoothed_xent<T>(logits, b.target_out, epsilon, grad ? &dlogits : nullptr);
  if (grad) {
    const Matrix<T> dh = model.weights().output.backward(hidden, dlogits, &grad->output);
    const Matrix<T> dmem = model.backward_decoder(dh, dc, nullptr, grad, nullptr);
    model.backward_encoder(dmem, ec, nullptr, grad, nullptr);
  }
  return loss;
}

template <typename T>
double rep_match_loss_and_grad(const Transformer<T>& model, const AdapterSet<T>& adapters,
                               std::span<const SentencePair> pairs, const Matrix<T>& base_reps,
                               AdapterSet<T>* grad) {
  const ForcedBatch b = make_copy_batch(pairs);
  EncoderCache<T> ec;
  DecoderCache<T> dc;
  const Matrix<T> memory = model.encode(b.source, &adapters, {}, grad ? &ec : nullptr);
  const Matrix<T> hidden =
      model.decode(memory, b.source.segments, b.target_in, &adapters, {}, grad ? &dc : nullptr);
  if (hidden.rows() != base_reps.rows() || hidden.cols() != base_reps.cols())
    throw DimensionError("rep-match: base representations do not match the batch");
  const Index n = hidden.rows();
  if (n == 0) return 0.0;
  const Matrix<T> diff = hidden - base_reps;
  const double loss = static_cast<double>(diff.squaredNorm()) / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("non-finite representation loss");
  if (grad) {
    const Matrix<T> dh = diff * static_cast<T>(2.0 / static_cast<double>(n));
    const Matrix<T> dmem = model.backward_decoder(dh, dc, &adapters, nullptr, grad);
    model.backward_encoder(dmem, ec, &adapters, nullptr, grad);
  }
  return loss;
}

double rep_match_loss(const RepMatchBatch& batch) {
  if (batch.base_reps.size() != batch.adapter_reps.size())
    throw DimensionError("rep-match: pair count mismatch");
  RepMatchAccumulator acc;
  for (std::size_t i = 0; i < batch.base_reps.size(); ++i) acc.add(batch.base_reps[i], batch.adapter_reps[i]);
  return acc.loss();
}

void RepMatchAccumulator::add(const Matrix<double>& base, const Matrix<double>& adapted) {
  if (base.rows() != adapted.rows() || base.cols() != adapted.cols())
    throw DimensionError("rep-match: shape mismatch");
  sum_ += (adapted - base).squaredNorm();
  positions_ += static_cast<std::size_t>(base.rows());
}

double RepMatchAccumulator::loss() const {
  return positions_ == 0 ? 0.0 : sum_ / static_cast<double>(positions_);
}

// ---------------------------------------------------------------- loops

std::vector<std::vector<std::size_t>> make_token_batches(const std::vector<SentencePair>& pairs,
                                                         std::span<const std::size_t> order,
                                                         int batch_tokens) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t tokens = 0;
  for (std::size_t i : order) {
    cur.push_back(i);
    tokens += pairs[i].target.size() + 1;
    if (tokens >= static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

namespace {

std::vector<SentencePair> gather(const std::vector<SentencePair>& pairs,
                                 const std::vector<std::size_t>& idx) {
  std::vector<SentencePair> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pairs[i]);
  return out;
}

std::size_t target_tokens(std::span<const SentencePair> pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.target.size() + 1;
  return n;
}

// Draws shuffled epochs of token-bounded batches until `steps` batches are produced.
class BatchStream {
 public:
  BatchStream(const std::vector<SentencePair>& pairs, int batch_tokens, std::uint64_t seed)
      : pairs_(pairs), batch_tokens_(batch_tokens), rng_(seed) {}

  const std::vector<std::size_t>& next() {
    if (pos_ >= batches_.size()) refill();
    return batches_[pos_++];
  }

 private:
  void refill() {
    std::vector<std::size_t> order(pairs_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    batches_ = make_token_batches(pairs_, order, batch_tokens_);
    pos_ = 0;
  }

  const std::vector<SentencePair>& pairs_;
  int batch_tokens_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t pos_ = 0;
};

void log_step(TrainLog* log, int step, double loss, double lr, std::size_t tokens, double seconds) {
  if (!log) return;
  log->losses.push_back(loss);
  if (log->metrics && (step % std::max(1, log->log_every) == 0 || step == 1)) {
    *log->metrics << step << '\t' << loss << '\t' << lr << '\t'
                  << (seconds > 0 ? static_cast<double>(tokens) / seconds : 0.0) << '\n';
  }
}

void zero(ParamList<float>& grads) {
  for (auto& g : grads) g.value->setZero();
}

TransformerWeights<float> run_xent(const std::vector<SentencePair>& data, TransformerWeights<float> init,
                                   const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (data.empty()) throw DataError("training corpus is empty");
  Transformer<float> model(std::move(init));
  auto grad = TransformerWeights<float>::zeros(model.config());
  auto grads = grad.parameters();
  Adam<float> adam(model.weights().parameters());
  BatchStream stream(data, cfg.batch_tokens, derive_seed(cfg.seed, "batches"));
  Rng drop_rng(derive_seed(cfg.seed, "dropout"));
  using clock = std::chrono::steady_clock;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto t0 = clock::now();
    const auto batch = gather(data, stream.next());
    zero(grads);
    const double loss = xent_loss_and_grad<float>(model, batch, cfg.label_smoothing,
                                                  Dropout(cfg.dropout, &drop_rng), &grad);
    clip_grad_norm(grads, cfg.grad_clip);
    const double lr = inverse_sqrt_lr(cfg, step);
    adam.step(grads, lr);
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    log_step(log, step, loss, lr, target_tokens(batch), secs);
  }
  return std::move(model.weights());
}

}  // namespace

TransformerWeights<float> train_base(const std::vector<SentencePair>& parallel,
                                     const ModelConfig& model_cfg, const TrainConfig& cfg,
                                     TrainLog* log) {
  model_cfg.validate();
  auto init = TransformerWeights<float>::init(model_cfg, derive_seed(cfg.seed, "init"));
  return run_xent(parallel, std::move(init), cfg, log);
}

TransformerWeights<float> train_reverse(const std::vector<SentencePair>& parallel,
                                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                                        TrainLog* log) {
  return train_base(swap_pairs(parallel), model_cfg, cfg, log);
}

TransformerWeights<float> fine_tune_full(const std::vector<SentencePair>& synthetic_parallel,
                                         const TransformerWeights<float>& base,
                                         const TrainConfig& cfg, TrainLog* log) {
  return run_xent(synthetic_parallel, base, cfg, log);
}

AdapterSet<float> train_adapters(const std::vector<SentencePair>& parallel,
                                 const TransformerWeights<float>& base, AdapterSites sites,
                                 const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (parallel.empty()) throw DataError("adapter training corpus is empty");
  if (sites == AdapterSites::kNone) throw ConfigError("adapter training needs adapter sites");
  ModelConfig mc = base.config;
  mc.adapter_sites = sites;
  const Transformer<float> model(base);
  auto adapters = AdapterSet<float>::init(mc, derive_seed(cfg.seed, "adapters"));
  auto grad = AdapterSet<float>::zeros(mc);
  auto grads = grad.parameters();
  Adam<float> adam(adapters.parameters());

  const Matrix<float> base_reps = forced_representations<float>(model, parallel, ForcedSource::kGold, nullptr);
  std::vector<Index> offsets(parallel.size() + 1, 0);
  for (std::size_t i = 0; i < parallel.size(); ++i)
    offsets[i + 1] = offsets[i] + static_cast<Index>(parallel[i].target.size() + 1);

  BatchStream stream(parallel, cfg.batch_tokens, derive_seed(cfg.seed, "batches"));
  using clock = std::chrono::steady_clock;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto t0 = clock::now();
    const auto& idx = stream.next();
    const auto batch = gather(parallel, idx);
    Matrix<float> target(static_cast<Index>(target_tokens(batch)), mc.d_model);
    Index row = 0;
    for (auto i : idx) {
      const Index len = offsets[i + 1] - offsets[i];
      target.middleRows(row, len) = base_reps.middleRows(offsets[i], len);
      row += len;
    }
    for (auto& g : grads) g.value->setZero();
    const double loss = rep_match_loss_and_grad<float>(model, adapters, batch, target, &grad);
    clip_grad_norm(grads, cfg.grad_clip);
    const double lr = inverse_sqrt_lr(cfg, step);
    adam.step(grads, lr);
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    log_step(log, step, loss, lr, target_tokens(batch), secs);
  }
  return adapters;
}

// ---------------------------------------------------------------- evaluation

namespace {

template <typename Fn>
void for_chunks(const std::vector<SentencePair>& pairs, std::size_t chunk, Fn fn) {
  for (std::size_t s = 0; s < pairs.size(); s += chunk) {
    const std::size_t e = std::min(pairs.size(), s + chunk);
    fn(std::span<const SentencePair>(pairs.data() + s, e - s));
  }
}

}  // namespace

double token_accuracy(const Transformer<float>& model, const std::vector<SentencePair>& pairs) {
  std::size_t correct = 0, total = 0;
  for_chunks(pairs, 256, [&](std::span<const SentencePair> chunk) {
    const ForcedBatch b = make_forced_batch(chunk);
    const Matrix<float> mem = model.encode(b.source, nullptr);
    const Matrix<float> logits = model.logits(model.decode(mem, b.source.segments, b.target_in, nullptr));
    for (Index i = 0; i < logits.rows(); ++i) {
      Index arg;
      logits.row(i).maxCoeff(&arg);
      correct += static_cast<TokenId>(arg) == b.target_out[static_cast<std::size_t>(i)];
    }
    total += static_cast<std::size_t>(logits.rows());
  });
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double mean_xent(const Transformer<float>& model, const std::vector<SentencePair>& pairs) {
  double sum = 0.0;
  std::size_t total = 0;
  for_chunks(pairs, 256, [&](std::span<const SentencePair> chunk) {
    const double loss = xent_loss_and_grad<float>(model, chunk, 0.0, {}, nullptr);
    const std::size_t n = target_tokens(chunk);
    sum += loss * static_cast<double>(n);
    total += n;
  });
  return total == 0 ? 0.0 : sum / static_cast<double>(total);
}

double corpus_rep_match_loss(const Transformer<float>& model, const AdapterSet<float>* adapters,
                             const std::vector<SentencePair>& pairs) {
  const Matrix<float> h = forced_representations<float>(model, pairs, ForcedSource::kGold, nullptr);
  const Matrix<float> hp = forced_representations<float>(model, pairs, ForcedSource::kCopy, adapters);
  if (h.rows() == 0) return 0.0;
  return (hp.cast<double>() - h.cast<double>()).squaredNorm() / static_cast<double>(h.rows());
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(const ParamList<float>&, double);
template double clip_grad_norm(const ParamList<double>&, double);
template double label_smoothed_xent(const Matrix<float>&, std::span<const TokenId>, double, Matrix<float>*);
template double label_smoothed_xent(const Matrix<double>&, std::span<const TokenId>, double, Matrix<double>*);
template double xent_loss_and_grad(const Transformer<float>&, std::span<const SentencePair>, double,
                                   Dropout, TransformerWeights<float>*);
template double xent_loss_and_grad(const Transformer<double>&, std::span<const SentencePair>, double,
                                   Dropout, TransformerWeights<double>*);
template double rep_match_loss_and_grad(const Transformer<float>&, const AdapterSet<float>&,
                                        std::span<const SentencePair>, const Matrix<float>&,
                                        AdapterSet<float>*);
template double rep_match_loss_and_grad(const Transformer<double>&, const AdapterSet<double>&,
                                        std::span<const SentencePair>, const Matrix<double>&,
                                        AdapterSet<double>*);

}  // namespace knnmt
