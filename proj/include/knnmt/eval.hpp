// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "knnmt/datastore.hpp"
#include "knnmt/vocabulary.hpp"

namespace knnmt {

/// Clipped n-gram matches and totals for n = 1..4 plus corpus lengths.
struct BleuStats {
  std::array<std::uint64_t, 4> matches{};
  std::array<std::uint64_t, 4> totals{};
  std::uint64_t hyp_length = 0;
  std::uint64_t ref_length = 0;
};

BleuStats bleu_stats(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);

/// Corpus BLEU-4 in [0, 100]. Zero match counts are replaced by 0.1 (and a
/// zero total by 1) before taking the geometric mean; times the brevity penalty.
double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);
double bleu_from_stats(const BleuStats& stats);

/// The default grid {0, 0.1, ..., 0.9}.
std::vector<double> default_lambda_grid();

struct LambdaSearch {
  double best_lambda = 0.0;
  double best_bleu = 0.0;
  std::vector<std::pair<double, double>> curve;  // (lambda, dev BLEU)
};

/// Maximizes dev BLEU over `grid`; ties go to the smaller lambda.
/// `system` maps a lambda to hypotheses for the dev sources.
LambdaSearch tune_lambda(const std::vector<SentencePair>& dev,
                         const std::function<std::vector<TokenSeq>(double)>& system,
                         std::vector<double> grid);

/// How the candidate representations are produced from the target side.
enum class SimilarityMode { kParallel, kCopy, kCopyAdapters, kEmpty, kBacktranslate };

std::string to_string(SimilarityMode mode);
SimilarityMode similarity_mode_from_string(const std::string& s);

struct SimilarityReport {
  double mean_cosine = 0.0;
  double mean_sq_euclidean = 0.0;
  std::size_t n_positions = 0;
};

/// Per-position cosine and squared distance (micro means).
SimilarityReport compare_representations(const Matrix<float>& ideal, const Matrix<float>& candidate);

/// Candidate representations (built per `mode`, from targets only except in
/// parallel mode) against the gold forced pass h(x, y<t).
SimilarityReport measure_similarity(const std::vector<SentencePair>& parallel_dev,
                                    const DatastoreModels& models, SimilarityMode mode);

struct DumpSummary {
  std::size_t rows = 0;
  std::size_t missing_tokens = 0;
};

/// One line per entry whose value is in `tokens`: token, entry id, then the
/// key components, tab-separated. Float text round-trips exactly.
DumpSummary dump_representations(const Datastore& store, const std::vector<TokenId>& tokens,
                                 const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace knnmt
