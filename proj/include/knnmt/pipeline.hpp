// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "knnmt/corpus.hpp"
#include "knnmt/decode.hpp"
#include "knnmt/eval.hpp"
#include "knnmt/model/transformer.hpp"
#include "knnmt/training.hpp"

namespace knnmt {

struct DataConfig {
  std::size_t general_pairs = 20000;
  std::size_t general_dev = 500;
  std::size_t in_domain_mono = 5000;
  std::size_t dev = 500;
  std::size_t test = 500;
  int min_len = 4;
  int max_len = 12;
  /// Weight of each "<domain>-alt" component in the general training mixture.
  double alt_weight = 0.25;
  SyntheticDomainOptions synthetic;
  /// Optional domain file; when empty the synthetic world is generated from `synthetic`.
  std::string domains_file;

  bool operator==(const DataConfig&) const = default;
};

struct IndexConfig {
  int nlist = 64;
  int kmeans_iters = 10;

  bool operator==(const IndexConfig&) const = default;
};

inline const std::vector<std::string>& all_baselines() {
  static const std::vector<std::string> names{"basic", "empty", "copy", "bt", "uda", "parallel", "bt-ft"};
  return names;
}

struct ExperimentConfig {
  std::uint64_t seed = 13;
  DataConfig data;
  ModelConfig model;
  TrainConfig base_train;
  TrainConfig adapter_train;
  TrainConfig finetune;
  KnnConfig knn;
  IndexConfig index;
  std::vector<double> lambda_grid = default_lambda_grid();
  int beam = 1;
  std::vector<std::string> baselines = all_baselines();
  std::string out_dir = "runs/default";

  ExperimentConfig();
  /// Throws ConfigError on out-of-range values or unknown baselines.
  void validate() const;
  bool has(const std::string& baseline) const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Sectioned key-value text; every key is optional and unknown keys are a ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Every key written out, with the reference value noted beside each retrieval hyper-parameter.
std::string to_toml(const ExperimentConfig& cfg);

/// Per-stage seed: derive_seed(root, stage name).
std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage);

/// All corpora of one experiment.
struct ExperimentData {
  std::vector<DomainSpec> domains;
  Vocabulary vocab;
  std::vector<SentencePair> general_train;
  std::vector<SentencePair> general_dev;
  /// Per in-domain: gold pairs whose targets form the monolingual corpus.
  std::map<std::string, std::vector<SentencePair>> in_domain_train;
  std::map<std::string, std::vector<SentencePair>> in_domain_dev;
  std::map<std::string, std::vector<SentencePair>> in_domain_test;
  std::vector<std::string> in_domains;
};

/// Generates every corpus. In-domain dev/test targets never occur in the monolingual corpus.
ExperimentData generate_data(const ExperimentConfig& cfg);
void write_data(const std::filesystem::path& dir, const ExperimentData& data);
ExperimentData read_data(const std::filesystem::path& dir);

/// Datastore of one kNN method (empty, copy, uda, parallel, bt) over an
/// in-domain corpus. Only parallel reads the gold sources; bt uses `bt_pairs`.
Datastore method_datastore(const std::string& method, const std::vector<SentencePair>& in_domain,
                           const std::vector<SentencePair>& bt_pairs, const DatastoreModels& models);

struct SimilarityRow {
  std::string domain;
  std::string mode;
  SimilarityReport report;
};

struct FinetuneRow {
  std::string domain;
  double base_in_domain = 0, tuned_in_domain = 0;
  double base_general = 0, tuned_general = 0;
};

struct ExperimentResults {
  std::vector<std::string> methods;
  std::vector<std::string> domains;
  std::map<std::string, std::map<std::string, double>> bleu;    // method -> domain -> test BLEU
  std::map<std::string, std::map<std::string, double>> lambda;  // method -> domain -> tuned lambda
  std::vector<SimilarityRow> similarity;
  std::vector<FinetuneRow> finetune;
};

struct RunOptions {
  /// Reuse artifacts already present under the output directory.
  bool resume = false;
  std::ostream* log = nullptr;
  /// Wall-clock seconds per stage name, accumulated when non-null.
  std::map<std::string, double>* stage_seconds = nullptr;
};

/// generate -> train base (+reverse) -> train adapters -> per domain: datastores,
/// lambda tuning, test translation, BLEU; plus similarity and fine-tuning tables.
/// Writes results.tsv, lambdas.tsv, similarity.tsv, finetune.tsv and results.kv under cfg.out_dir.
ExperimentResults run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

std::string format_results(const ExperimentResults& r);
std::string format_lambdas(const ExperimentResults& r);
std::string format_similarity(const ExperimentResults& r);
std::string format_finetune(const ExperimentResults& r);
/// Every table value as one "key = value" line, e.g. "bleu.uda.medical = 88.52".
std::string format_key_values(const ExperimentResults& r);

}  // namespace knnmt
