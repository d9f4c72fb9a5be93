// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "knnmt/corpus.hpp"
#include "knnmt/model/transformer.hpp"

namespace knnmt {

/// (key, value) pairs from forced decoding: key = decoder state, value = the token it predicts.
struct Datastore {
  int dim = 0;
  std::vector<float> keys;  // size() x dim, row-major
  std::vector<TokenId> values;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  const float* key(std::size_t i) const { return keys.data() + i * static_cast<std::size_t>(dim); }
  std::span<const float> key_span(std::size_t i) const {
    return {key(i), static_cast<std::size_t>(dim)};
  }

  /// Appends every row of `reps` with the matching entry of `vals`.
  void append(const Matrix<float>& reps, std::span<const TokenId> vals);
  /// Throws DimensionError when the key buffer and values disagree.
  void check() const;

  bool operator==(const Datastore&) const = default;
};

/// How the source side of each datastore sentence is obtained.
enum class SourceMode { kParallel, kCopy, kEmpty, kBacktranslate };

std::string to_string(SourceMode mode);
SourceMode source_mode_from_string(const std::string& s);

/// Models taking part in datastore construction.
struct DatastoreModels {
  const Transformer<float>* base = nullptr;
  /// Used in copy mode (the UDA system). Other modes ignore it unless
  /// `adapters_in_all_modes` is set.
  const AdapterSet<float>* adapters = nullptr;
  bool adapters_in_all_modes = false;
  /// Target-to-source model for back-translation.
  const Transformer<float>* reverse = nullptr;
  int backtranslate_beam = 1;
};

/// Forced-decode datastore over `corpus`. Only parallel mode reads the gold
/// sources; the other modes look at targets alone. |ds| = sum(|y| + 1).
Datastore build_datastore(std::span<const SentencePair> corpus, SourceMode mode,
                          const DatastoreModels& models);
/// Target-only corpus; parallel mode is a ConfigError here.
Datastore build_datastore(const std::vector<TokenSeq>& targets, SourceMode mode,
                          const DatastoreModels& models);

/// The synthetic (source, target) pairs a mode feeds to the forced pass.
/// Copy mode returns (y, y); empty mode returns (empty, y); back-translation
/// returns (reverse(y), y).
std::vector<SentencePair> datastore_sources(const std::vector<TokenSeq>& targets, SourceMode mode,
                                            const DatastoreModels& models);

inline constexpr std::uint32_t kDatastoreVersion = 1;

std::vector<std::uint8_t> encode_datastore(const Datastore& ds);
Datastore decode_datastore(std::vector<std::uint8_t> bytes);
void save_datastore(const std::filesystem::path& path, const Datastore& ds);
Datastore load_datastore(const std::filesystem::path& path);

}  // namespace knnmt
