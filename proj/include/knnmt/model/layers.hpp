// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "knnmt/model/tensor.hpp"

namespace knnmt {

// Every layer exposes forward(..., Cache*) and backward(..., const Cache&, Layer* grad).
// A null `grad` skips parameter gradients; input gradients are always returned.

template <typename T>
struct Linear {
  Matrix<T> weight;  // in x out
  Matrix<T> bias;    // 1 x out

  void init(Index in, Index out, Rng& rng);
  Matrix<T> forward(const Matrix<T>& x) const;
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy, Linear* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Matrix<T> gain;  // 1 x d
  Matrix<T> bias;  // 1 x d

  struct Cache {
    Matrix<T> xhat;
    ColVector<T> inv_std;
  };

  void init(Index d);
  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, LayerNorm* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Multi-head scaled dot-product attention over packed sentences.
template <typename T>
struct Attention {
  Linear<T> q, k, v, o;
  int heads = 1;

  struct Cache {
    Matrix<T> xq, xkv, Q, K, V, O;
    std::vector<Matrix<T>> probs;  // index: sentence * heads + head
    Segments qseg, kseg;
  };

  void init(Index d, int n_heads, Rng& rng);
  /// Query sentence b attends to key sentence b. `causal` requires equal segment lengths.
  Matrix<T> forward(const Matrix<T>& xq, const Segments& qseg, const Matrix<T>& xkv,
                    const Segments& kseg, bool causal, Cache* cache) const;
  /// Returns (d xq, d xkv).
  std::pair<Matrix<T>, Matrix<T>> backward(const Matrix<T>& dy, const Cache& cache,
                                           Attention* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct FeedForward {
  Linear<T> fc1, fc2;

  struct Cache {
    Matrix<T> x, z, a;
  };

  void init(Index d, Index d_ff, Rng& rng);
  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, FeedForward* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Residual bottleneck: out = H + ReLU(LN(H) W1) W2. No bias terms.
template <typename T>
struct Adapter {
  LayerNorm<T> ln;
  Matrix<T> w1;  // d_model x hidden
  Matrix<T> w2;  // hidden x d_model

  struct Cache {
    typename LayerNorm<T>::Cache ln;
    Matrix<T> normed, z, r;
  };

  /// W1 ~ U(+-1/sqrt(d)), W2 = 0, unit gain, zero bias: the identity map.
  void init(Index d, Index hidden, Rng& rng);
  Matrix<T> forward(const Matrix<T>& h, Cache* cache) const;
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, Adapter* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Pre-norm encoder block.
template <typename T>
struct EncoderLayer {
  LayerNorm<T> ln1, ln2;
  Attention<T> self_attn;
  FeedForward<T> ffn;

  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2;
    typename Attention<T>::Cache attn;
    typename FeedForward<T>::Cache ffn;
    Matrix<T> drop_attn, drop_ffn;
  };

  void init(Index d, int heads, Index d_ff, Rng& rng);
  Matrix<T> forward(const Matrix<T>& x, const Segments& seg, Dropout& drop, Cache* cache) const;
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, EncoderLayer* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
template <typename T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  Attention<T> self_attn, cross_attn;
  FeedForward<T> ffn;

  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2, ln3;
    typename Attention<T>::Cache self_attn, cross_attn;
    typename FeedForward<T>::Cache ffn;
    Matrix<T> drop_self, drop_cross, drop_ffn;
  };

  void init(Index d, int heads, Index d_ff, Rng& rng);
  Matrix<T> forward(const Matrix<T>& x, const Segments& seg, const Matrix<T>& memory,
                    const Segments& mem_seg, Dropout& drop, Cache* cache) const;
  /// Returns (d x, d memory).
  std::pair<Matrix<T>, Matrix<T>> backward(const Matrix<T>& dy, const Cache& cache,
                                           DecoderLayer* grad) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace knnmt
