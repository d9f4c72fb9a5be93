// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "knnmt/common.hpp"

namespace knnmt {

/// Bidirectional token <-> id mapping shared by both languages.
///
/// The four specials always occupy ids 0..3 in the order PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  /// A vocabulary holding only the specials.
  Vocabulary();

  /// Builds from an explicit token list (specials are prepended, duplicates rejected).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  /// Counts whitespace tokens over every line of every corpus and keeps the
  /// ones seen at least `min_count` times, ordered by descending frequency and
  /// then lexicographically.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpora,
                          std::size_t min_count);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Id of `token`, or UNK.
  TokenId lookup(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenSeq tokenize(std::string_view line) const;
  TokenSeq encode(const std::vector<std::string>& words) const;
  std::string detokenize(const TokenSeq& ids) const;

  /// One token per line, id order. The specials are written too.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Whitespace split; runs of spaces/tabs collapse.
std::vector<std::string> split_whitespace(std::string_view line);

}  // namespace knnmt
