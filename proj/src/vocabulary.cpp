// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace knnmt {

namespace {
constexpr const char* kSpecialNames[] = {"<pad>", "<s>", "</s>", "<unk>"};
}

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialNames) add(s);
}

void Vocabulary::add(std::string token) {
  auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  if (!inserted) throw DataError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpora,
                             std::size_t min_count) {
  require(min_count >= 1, "build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& corpus : corpora)
    for (const auto& line : corpus)
      for (auto& w : split_whitespace(line)) ++counts[std::move(w)];

  Vocabulary probe;
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count && !probe.contains(w)) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  for (auto& [w, c] : kept) v.add(std::move(w));
  return v;
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractViolation("token id out of range");
  return tokens_[id];
}

TokenSeq Vocabulary::tokenize(std::string_view line) const {
  return encode(split_whitespace(line));
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& words) const {
  TokenSeq ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(lookup(w));
  return ids;
}

std::string Vocabulary::detokenize(const TokenSeq& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) f << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(f, line);) lines.push_back(line);
  if (lines.size() < kNumSpecials)
    throw DataError("vocabulary " + path.string() + " is missing the special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i)
    if (lines[i] != kSpecialNames[i])
      throw DataError("vocabulary " + path.string() + ": special token " + std::to_string(i) +
                      " must be " + kSpecialNames[i]);
  return from_tokens({lines.begin() + kNumSpecials, lines.end()});
}

}  // namespace knnmt
