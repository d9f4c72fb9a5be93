// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "knnmt/common.hpp"
#include "knnmt/random.hpp"
#include "knnmt/vocabulary.hpp"

namespace knnmt {

/// Sentence pair as token ids. Neither side is empty or contains PAD.
struct SentencePair {
  TokenSeq source;
  TokenSeq target;

  bool operator==(const SentencePair&) const = default;
};

/// Sentence pair before vocabulary lookup.
struct TextPair {
  std::vector<std::string> source;
  std::vector<std::string> target;

  bool operator==(const TextPair&) const = default;
};

/// One synthetic domain.
///
/// Translation is lexicon substitution followed by block reversal inside
/// windows of `reorder_window` tokens (window 2 swaps adjacent tokens, window 1
/// keeps the order). Ambiguous source tokens are shared across domains; each
/// domain maps them to its own sense.
struct DomainSpec {
  std::string name;
  std::map<std::string, std::string> lexicon;
  std::map<std::string, std::string> ambiguous;
  int reorder_window = 1;
  /// Probability that a sampled source position holds an ambiguous token.
  double ambiguous_rate = 0.0;

  /// Throws DataError when the lexicon is empty or the fields are out of range.
  void validate() const;

  bool operator==(const DomainSpec&) const = default;
};

/// Maps a source sentence through `spec`. Unknown source words are a DataError.
std::vector<std::string> translate_with_spec(const DomainSpec& spec,
                                             const std::vector<std::string>& source);

/// Draws one sentence of uniform length in [min_len, max_len].
TextPair sample_sentence(const DomainSpec& spec, int min_len, int max_len, Rng& rng);

/// `n_sentences` pairs drawn from `spec`. Identical arguments give identical corpora.
std::vector<TextPair> generate_domain_corpus(const DomainSpec& spec, std::size_t n_sentences,
                                             int min_len, int max_len, std::uint64_t seed);

/// Each sentence comes from one component, picked with probability proportional to its weight.
std::vector<TextPair> generate_mixture_corpus(
    const std::vector<std::pair<const DomainSpec*, double>>& components,
    std::size_t n_sentences, int min_len, int max_len, std::uint64_t seed);

/// Knobs for `make_synthetic_domains`.
struct SyntheticDomainOptions {
  int n_content_words = 120;
  int n_ambiguous = 6;
  int in_domain_content_words = 40;
  int reorder_window = 2;
  double general_ambiguous_rate = 0.1;
  double in_domain_ambiguous_rate = 0.2;
  /// Fraction of content words spelled identically in both languages.
  double cognate_rate = 0.3;
  std::vector<std::string> in_domains = {"medical"};

  bool operator==(const SyntheticDomainOptions&) const = default;
};

/// Builds the default synthetic world: a "general" domain covering every
/// content word, one in-domain spec per name in `in_domains` (disjoint content
/// sub-vocabularies, each with its own exclusive senses for the shared
/// ambiguous tokens), and a "<name>-alt" general-vocabulary spec carrying each
/// in-domain's senses, used as the minority component of the general mixture.
std::vector<DomainSpec> make_synthetic_domains(const SyntheticDomainOptions& opts,
                                               std::uint64_t seed);

/// Plain-text domain file: one top-level table per domain with
/// `reorder_window`, `ambiguous_rate` and the `lexicon` / `ambiguous` sub-tables.
std::vector<DomainSpec> load_domain_specs(const std::filesystem::path& path);
void save_domain_specs(const std::filesystem::path& path, const std::vector<DomainSpec>& specs);
const DomainSpec& find_domain(const std::vector<DomainSpec>& specs, const std::string& name);

SentencePair encode_pair(const Vocabulary& vocab, const TextPair& pair);
std::vector<SentencePair> encode_pairs(const Vocabulary& vocab, const std::vector<TextPair>& pairs);

/// Source and target swapped.
std::vector<SentencePair> swap_pairs(const std::vector<SentencePair>& pairs);
std::vector<TokenSeq> targets_of(const std::vector<SentencePair>& pairs);

/// Parallel file: "source words<TAB>target words" per line, LF endings.
std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path,
                                               const Vocabulary& vocab);
/// Monolingual file: one sentence per line.
std::vector<TokenSeq> load_monolingual_corpus(const std::filesystem::path& path,
                                              const Vocabulary& vocab);

void save_parallel_text(const std::filesystem::path& path, const std::vector<TextPair>& pairs);
void save_parallel_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& pairs,
                          const Vocabulary& vocab);
void save_lines(const std::filesystem::path& path, const std::vector<TokenSeq>& sentences,
                const Vocabulary& vocab);
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::string join_words(const std::vector<std::string>& words);

}  // namespace knnmt
