// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "knnmt/common.hpp"
#include "knnmt/random.hpp"

namespace knnmt {

/// Row-major dense matrix; one row per token position.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

/// Row ranges of variable-length sentences packed into one matrix.
class Segments {
 public:
  Segments() : offsets_{0} {}

  void push(Index length) { offsets_.push_back(offsets_.back() + length); }

  Index count() const { return static_cast<Index>(offsets_.size()) - 1; }
  Index begin(Index b) const { return offsets_[static_cast<std::size_t>(b)]; }
  Index length(Index b) const {
    return offsets_[static_cast<std::size_t>(b) + 1] - offsets_[static_cast<std::size_t>(b)];
  }
  Index total() const { return offsets_.back(); }

 private:
  std::vector<Index> offsets_;
};

/// Packed token ids with their sentence boundaries.
struct TokenBatch {
  std::vector<TokenId> ids;
  Segments segments;

  void push(const std::vector<TokenId>& seq) {
    ids.insert(ids.end(), seq.begin(), seq.end());
    segments.push(static_cast<Index>(seq.size()));
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Matrix<T>* value;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Inverted dropout. Inactive (identity) when no generator is attached or the rate is 0.
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, Rng* rng) : rate_(rate), rng_(rng) {}

  bool active() const { return rng_ != nullptr && rate_ > 0.0; }

  /// Keep-mask scaled by 1/(1-rate); empty when inactive.
  template <typename T>
  Matrix<T> mask(Index rows, Index cols) {
    if (!active()) return {};
    Matrix<T> m(rows, cols);
    const auto threshold = static_cast<std::uint32_t>(rate_ * 65536.0);
    const T keep = T(1) / T(1.0 - rate_);
    T* p = m.data();
    const Index n = m.size();
    Index i = 0;
    while (i < n) {
      std::uint64_t bits = (*rng_)();
      for (int s = 0; s < 4 && i < n; ++s, ++i) {
        p[i] = (static_cast<std::uint32_t>(bits & 0xffffu) < threshold) ? T(0) : keep;
        bits >>= 16;
      }
    }
    return m;
  }

 private:
  double rate_ = 0.0;
  Rng* rng_ = nullptr;
};

template <typename T>
void apply_mask(Matrix<T>& x, const Matrix<T>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  return m.template cast<To>();
}

}  // namespace knnmt
