// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "knnmt/corpus.hpp"
#include "knnmt/model/transformer.hpp"

namespace knnmt::testing {

inline ModelConfig tiny_config(int vocab_size, int d_model = 16) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 2 * d_model;
  c.adapter_hidden = 8;
  c.vocab_size = vocab_size;
  c.max_len = 64;
  return c;
}

/// Random non-special token ids in [4, vocab_size).
inline TokenSeq random_seq(Rng& rng, int vocab_size, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> tok(static_cast<TokenId>(Vocabulary::kNumSpecials),
                                             static_cast<TokenId>(vocab_size - 1));
  TokenSeq s(static_cast<std::size_t>(len(rng)));
  for (auto& t : s) t = tok(rng);
  return s;
}

inline std::vector<SentencePair> random_pairs(Rng& rng, std::size_t n, int vocab_size, int min_len = 1,
                                              int max_len = 8) {
  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({random_seq(rng, vocab_size, min_len, max_len), random_seq(rng, vocab_size, min_len, max_len)});
  return out;
}

/// Adapters whose second projection is random, so they are not the identity.
template <typename T>
AdapterSet<T> perturbed_adapters(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  auto a = AdapterSet<T>::init(cfg, seed);
  Rng rng(seed + 1);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& ad : a.encoder)
    for (Index i = 0; i < ad.w2.size(); ++i) ad.w2.data()[i] = static_cast<T>(n(rng));
  for (auto& ad : a.decoder)
    for (Index i = 0; i < ad.w2.size(); ++i) ad.w2.data()[i] = static_cast<T>(n(rng));
  return a;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("knnmt_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace knnmt::testing
