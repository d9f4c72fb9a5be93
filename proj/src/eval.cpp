// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace knnmt {

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::uint64_t>;

NgramCounts count_ngrams(const TokenSeq& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++counts[std::vector<TokenId>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                  s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

BleuStats bleu_stats(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references) {
  if (hypotheses.size() != references.size())
    throw ContractViolation("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                            std::to_string(references.size()) + " references");
  BleuStats st;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    const auto& r = references[i];
    st.hyp_length += h.size();
    st.ref_length += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = count_ngrams(h, n);
      const auto rc = count_ngrams(r, n);
      for (const auto& [gram, c] : hc) {
        auto it = rc.find(gram);
        if (it != rc.end()) st.matches[n - 1] += std::min(c, it->second);
      }
      if (h.size() >= n) st.totals[n - 1] += h.size() - n + 1;
    }
  }
  return st;
}

double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double m = st.matches[n] == 0 ? 0.1 : static_cast<double>(st.matches[n]);
    const double t = st.totals[n] == 0 ? 1.0 : static_cast<double>(st.totals[n]);
    log_sum += std::log(m / t);
  }
  const double hyp = static_cast<double>(st.hyp_length);
  const double ref = static_cast<double>(st.ref_length);
  const double bp = hyp >= ref ? 1.0 : std::exp(1.0 - ref / hyp);
  return std::clamp(100.0 * bp * std::exp(log_sum / 4.0), 0.0, 100.0);
}

double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references) {
  return bleu_from_stats(bleu_stats(hypotheses, references));
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(i / 10.0);
  return g;
}

LambdaSearch tune_lambda(const std::vector<SentencePair>& dev,
                         const std::function<std::vector<TokenSeq>(double)>& system,
                         std::vector<double> grid) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda grid values must lie in [0, 1]");
  std::sort(grid.begin(), grid.end());
  const auto refs = targets_of(dev);
  LambdaSearch out;
  bool first = true;
  for (double l : grid) {
    const double b = corpus_bleu(system(l), refs);
    out.curve.emplace_back(l, b);
    if (first || b > out.best_bleu) {
      out.best_bleu = b;
      out.best_lambda = l;
      first = false;
    }
  }
  return out;
}

std::string to_string(SimilarityMode mode) {
  switch (mode) {
    case SimilarityMode::kParallel: return "parallel";
    case SimilarityMode::kCopy: return "copy";
    case SimilarityMode::kCopyAdapters: return "copy+adapters";
    case SimilarityMode::kEmpty: return "empty";
    case SimilarityMode::kBacktranslate: return "backtranslate";
  }
  return "?";
}

SimilarityMode similarity_mode_from_string(const std::string& s) {
  if (s == "parallel") return SimilarityMode::kParallel;
  if (s == "copy") return SimilarityMode::kCopy;
  if (s == "copy+adapters" || s == "uda") return SimilarityMode::kCopyAdapters;
  if (s == "empty") return SimilarityMode::kEmpty;
  if (s == "backtranslate" || s == "bt") return SimilarityMode::kBacktranslate;
  throw ConfigError("unknown similarity mode '" + s + "'");
}

SimilarityReport compare_representations(const Matrix<float>& ideal, const Matrix<float>& candidate) {
  if (ideal.rows() != candidate.rows() || ideal.cols() != candidate.cols())
    throw DimensionError("similarity: representation shapes differ");
  SimilarityReport rep;
  rep.n_positions = static_cast<std::size_t>(ideal.rows());
  if (rep.n_positions == 0) return rep;
  double cos_sum = 0.0, dist_sum = 0.0;
  for (Index i = 0; i < ideal.rows(); ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0, dist = 0.0;
    for (Index j = 0; j < ideal.cols(); ++j) {
      const double a = ideal(i, j), b = candidate(i, j);
      dot += a * b;
      na += a * a;
      nb += b * b;
      dist += (a - b) * (a - b);
    }
    double cos = 0.0;
    if (na > 0.0 && nb > 0.0) cos = dot / (std::sqrt(na) * std::sqrt(nb));
    else if (na == 0.0 && nb == 0.0) cos = 1.0;
    cos_sum += std::clamp(cos, -1.0, 1.0);
    dist_sum += dist;
  }
  rep.mean_cosine = cos_sum / static_cast<double>(rep.n_positions);
  rep.mean_sq_euclidean = dist_sum / static_cast<double>(rep.n_positions);
  return rep;
}

namespace {

Matrix<float> store_keys(const Datastore& ds) {
  Matrix<float> m(static_cast<Index>(ds.size()), ds.dim);
  std::copy(ds.keys.begin(), ds.keys.end(), m.data());
  return m;
}

}  // namespace

SimilarityReport measure_similarity(const std::vector<SentencePair>& parallel_dev,
                                    const DatastoreModels& models, SimilarityMode mode) {
  if (parallel_dev.empty()) throw DataError("similarity needs a non-empty parallel dev set");
  DatastoreModels plain = models;
  plain.adapters = nullptr;
  plain.adapters_in_all_modes = false;
  const Datastore ideal = build_datastore(parallel_dev, SourceMode::kParallel, plain);
  Datastore cand;
  switch (mode) {
    case SimilarityMode::kParallel: cand = ideal; break;
    case SimilarityMode::kCopy: cand = build_datastore(parallel_dev, SourceMode::kCopy, plain); break;
    case SimilarityMode::kCopyAdapters:
      if (!models.adapters) throw ConfigError("copy+adapters similarity needs adapters");
      cand = build_datastore(parallel_dev, SourceMode::kCopy, models);
      break;
    case SimilarityMode::kEmpty: cand = build_datastore(parallel_dev, SourceMode::kEmpty, plain); break;
    case SimilarityMode::kBacktranslate:
      cand = build_datastore(parallel_dev, SourceMode::kBacktranslate, plain);
      break;
  }
  return compare_representations(store_keys(ideal), store_keys(cand));
}

DumpSummary dump_representations(const Datastore& store, const std::vector<TokenId>& tokens,
                                 const Vocabulary& vocab, const std::filesystem::path& path) {
  if (tokens.empty()) throw ContractViolation("dump_representations: token list is empty");
  store.check();
  const std::set<TokenId> wanted(tokens.begin(), tokens.end());
  std::set<TokenId> seen;
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  DumpSummary sum;
  char buf[64];
  for (std::size_t i = 0; i < store.size(); ++i) {
    const TokenId v = store.values[i];
    if (!wanted.count(v)) continue;
    seen.insert(v);
    f << vocab.token(v) << '\t' << i;
    const float* k = store.key(i);
    for (int j = 0; j < store.dim; ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, k[j]);
      f << '\t' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    f << '\n';
    ++sum.rows;
  }
  sum.missing_tokens = wanted.size() - seen.size();
  return sum;
}

}  // namespace knnmt
