// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnmt/corpus.hpp"
#include "knnmt/model/layers.hpp"

namespace knnmt {

enum class AdapterSites { kNone, kEncoder, kEncoderDecoder };

std::string to_string(AdapterSites sites);
AdapterSites adapter_sites_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 3;
  int n_dec_layers = 3;
  int d_ff = 128;
  int adapter_hidden = 64;
  AdapterSites adapter_sites = AdapterSites::kEncoder;
  int vocab_size = 0;
  int max_len = 256;

  /// Throws ConfigError unless d_model % n_heads == 0 and every size is >= 1.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Base network parameters (everything except adapters).
template <typename T>
struct TransformerWeights {
  ModelConfig config;
  Matrix<T> enc_embed;  // vocab x d
  Matrix<T> dec_embed;  // vocab x d
  std::vector<EncoderLayer<T>> encoder;
  LayerNorm<T> enc_norm;
  std::vector<DecoderLayer<T>> decoder;
  LayerNorm<T> dec_norm;
  Linear<T> output;  // d x vocab

  static TransformerWeights init(const ModelConfig& cfg, std::uint64_t seed);
  /// Same shapes, every entry zero (gradient buffer).
  static TransformerWeights zeros(const ModelConfig& cfg);

  ParamList<T> parameters();
};

/// Adapter layers: one after the embedding and one after each encoder layer;
/// with AdapterSites::kEncoderDecoder also one after each decoder layer.
template <typename T>
struct AdapterSet {
  ModelConfig config;
  std::vector<Adapter<T>> encoder;
  std::vector<Adapter<T>> decoder;

  static AdapterSet init(const ModelConfig& cfg, std::uint64_t seed);
  static AdapterSet zeros(const ModelConfig& cfg);

  ParamList<T> parameters();
};

template <typename T>
struct EncoderCache {
  Matrix<T> drop_embed;
  std::vector<typename Adapter<T>::Cache> adapters;
  std::vector<typename EncoderLayer<T>::Cache> layers;
  typename LayerNorm<T>::Cache norm;
  std::vector<TokenId> ids;
};

template <typename T>
struct DecoderCache {
  Matrix<T> drop_embed;
  std::vector<typename Adapter<T>::Cache> adapters;
  std::vector<typename DecoderLayer<T>::Cache> layers;
  typename LayerNorm<T>::Cache norm;
  std::vector<TokenId> ids;
};

/// Teacher-forced batch: source = x + EOS, decoder input = BOS + y, labels = y + EOS.
struct ForcedBatch {
  TokenBatch source;
  TokenBatch target_in;
  std::vector<TokenId> target_out;
};

/// Where the encoder input comes from: the gold source, the copied target, or nothing (source = [EOS]).
enum class ForcedSource { kGold, kCopy, kEmpty };

ForcedBatch make_forced_batch(std::span<const SentencePair> pairs,
                              ForcedSource kind = ForcedSource::kGold);
/// The autoencoder view: every target is copied to the source side.
ForcedBatch make_copy_batch(std::span<const SentencePair> pairs);

/// Encoder-decoder transformer (pre-norm, sinusoidal positions). The object is
/// immutable during forward passes; training code mutates `weights()` between steps.
template <typename T>
class Transformer {
 public:
  explicit Transformer(TransformerWeights<T> weights);

  const ModelConfig& config() const { return weights_.config; }
  TransformerWeights<T>& weights() { return weights_; }
  const TransformerWeights<T>& weights() const { return weights_; }

  /// Encoder states, one row per source position. Adapters run after the
  /// embedding and after each encoder layer when `adapters` is non-null.
  Matrix<T> encode(const TokenBatch& source, const AdapterSet<T>* adapters,
                   Dropout drop = {}, EncoderCache<T>* cache = nullptr) const;

  /// Final decoder states after the last layer norm (pre output projection).
  Matrix<T> decode(const Matrix<T>& memory, const Segments& mem_seg, const TokenBatch& target_in,
                   const AdapterSet<T>* adapters, Dropout drop = {},
                   DecoderCache<T>* cache = nullptr) const;

  Matrix<T> logits(const Matrix<T>& hidden) const { return weights_.output.forward(hidden); }

  /// Back-propagates through the decoder; returns the gradient w.r.t. the memory.
  Matrix<T> backward_decoder(const Matrix<T>& d_hidden, const DecoderCache<T>& cache,
                             const AdapterSet<T>* adapters, TransformerWeights<T>* grad,
                             AdapterSet<T>* adapter_grad) const;
  void backward_encoder(const Matrix<T>& d_memory, const EncoderCache<T>& cache,
                        const AdapterSet<T>* adapters, TransformerWeights<T>* grad,
                        AdapterSet<T>* adapter_grad) const;

  /// Embedding lookup scaled by sqrt(d) plus the sinusoid for `position`.
  void embed_row(const Matrix<T>& table, TokenId id, Index position, T* out) const;

  const Matrix<T>& positions() const { return positions_; }

 private:
  void check_tokens(const TokenBatch& batch) const;

  TransformerWeights<T> weights_;
  Matrix<T> positions_;  // max_len x d
};

/// Incremental greedy/beam decoding state with cached self-attention keys and
/// values. Each slot is one hypothesis bound to a source sentence.
template <typename T>
class IncrementalDecoder {
 public:
  /// One slot per source sentence; `capacity` bounds the number of steps.
  IncrementalDecoder(const Transformer<T>& model, const Matrix<T>& memory, const Segments& mem_seg,
                     Index capacity);

  std::size_t num_slots() const { return slots_.size(); }
  std::size_t source_of(std::size_t slot) const { return slots_[slot].source; }
  Index length(std::size_t slot) const { return slots_[slot].length; }

  /// Feeds tokens[i] to slots[i]; returns final decoder states, one row per slot.
  Matrix<T> step(std::span<const std::size_t> slots, std::span<const TokenId> tokens);

  /// New slot set: slot i becomes a copy of old slot parents[i].
  void reorder(std::span<const std::size_t> parents);

 private:
  struct Slot {
    std::size_t source = 0;
    Index length = 0;
    std::vector<Matrix<T>> keys, values;  // per layer, capacity x d
  };

  const Transformer<T>& model_;
  Segments mem_seg_;
  std::vector<Matrix<T>> cross_keys_, cross_values_;  // per layer
  std::vector<Slot> slots_;
  Index capacity_;
};

/// Forced-decode representations for every target position (|y|+1 rows per
/// pair, EOS position included), concatenated in corpus order.
template <typename T>
Matrix<T> forced_representations(const Transformer<T>& model, std::span<const SentencePair> pairs,
                                 ForcedSource kind, const AdapterSet<T>* adapters,
                                 std::size_t chunk = 256);

extern template struct TransformerWeights<float>;
extern template struct AdapterSet<float>;
extern template class Transformer<float>;
extern template class IncrementalDecoder<float>;
extern template Matrix<float> forced_representations(const Transformer<float>&,
                                                     std::span<const SentencePair>, ForcedSource,
                                                     const AdapterSet<float>*, std::size_t);
extern template struct TransformerWeights<double>;
extern template struct AdapterSet<double>;
extern template class Transformer<double>;
extern template class IncrementalDecoder<double>;
extern template Matrix<double> forced_representations(const Transformer<double>&,
                                                      std::span<const SentencePair>, ForcedSource,
                                                      const AdapterSet<double>*, std::size_t);

}  // namespace knnmt
