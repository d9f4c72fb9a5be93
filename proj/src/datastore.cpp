// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/datastore.hpp"

#include "knnmt/binary_io.hpp"
#include "knnmt/decode.hpp"

namespace knnmt {

void Datastore::append(const Matrix<float>& reps, std::span<const TokenId> vals) {
  if (static_cast<std::size_t>(reps.rows()) != vals.size())
    throw DimensionError("datastore: key and value counts differ");
  if (dim == 0 && empty()) dim = static_cast<int>(reps.cols());
  if (reps.cols() != dim) throw DimensionError("datastore: key width differs from store dim");
  keys.insert(keys.end(), reps.data(), reps.data() + reps.size());
  values.insert(values.end(), vals.begin(), vals.end());
}

void Datastore::check() const {
  if (dim < 0 || keys.size() != values.size() * static_cast<std::size_t>(dim))
    throw DimensionError("datastore: key buffer does not match value count");
}

std::string to_string(SourceMode mode) {
  switch (mode) {
    case SourceMode::kParallel: return "parallel";
    case SourceMode::kCopy: return "copy";
    case SourceMode::kEmpty: return "empty";
    case SourceMode::kBacktranslate: return "backtranslate";
  }
  return "?";
}

SourceMode source_mode_from_string(const std::string& s) {
  if (s == "parallel") return SourceMode::kParallel;
  if (s == "copy") return SourceMode::kCopy;
  if (s == "empty") return SourceMode::kEmpty;
  if (s == "backtranslate" || s == "bt") return SourceMode::kBacktranslate;
  throw ConfigError("unknown datastore mode '" + s + "'");
}

std::vector<SentencePair> datastore_sources(const std::vector<TokenSeq>& targets, SourceMode mode,
                                            const DatastoreModels& models) {
  std::vector<SentencePair> pairs;
  pairs.reserve(targets.size());
  switch (mode) {
    case SourceMode::kParallel:
      throw ConfigError("parallel datastore needs gold sources");
    case SourceMode::kCopy:
      for (const auto& y : targets) pairs.push_back({y, y});
      break;
    case SourceMode::kEmpty:
      for (const auto& y : targets) pairs.push_back({{}, y});
      break;
    case SourceMode::kBacktranslate: {
      if (!models.reverse) throw ConfigError("backtranslate mode needs a reverse model");
      const Translator bt(*models.reverse, {}, KnnConfig{.lambda = 0.0});
      DecodeOptions opts;
      opts.beam = models.backtranslate_beam;
      auto sources = bt.translate(targets, opts);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        // A reverse model that emits EOS first still needs a non-empty source.
        if (sources[i].empty()) sources[i].push_back(Vocabulary::kUnk);
        pairs.push_back({std::move(sources[i]), targets[i]});
      }
      break;
    }
  }
  return pairs;
}

namespace {

Datastore forced_store(std::span<const SentencePair> pairs, ForcedSource kind,
                       const Transformer<float>& model, const AdapterSet<float>* adapters) {
  Datastore ds;
  ds.dim = model.config().d_model;
  const Matrix<float> reps = forced_representations<float>(model, pairs, kind, adapters);
  std::vector<TokenId> values;
  values.reserve(static_cast<std::size_t>(reps.rows()));
  for (const auto& p : pairs) {
    values.insert(values.end(), p.target.begin(), p.target.end());
    values.push_back(Vocabulary::kEos);
  }
  ds.append(reps, values);
  return ds;
}

const Transformer<float>& base_of(const DatastoreModels& models) {
  if (!models.base) throw ConfigError("datastore construction needs a base model");
  return *models.base;
}

}  // namespace

Datastore build_datastore(std::span<const SentencePair> corpus, SourceMode mode,
                          const DatastoreModels& models) {
  const auto& base = base_of(models);
  const AdapterSet<float>* all_modes = models.adapters_in_all_modes ? models.adapters : nullptr;
  if (mode == SourceMode::kParallel) return forced_store(corpus, ForcedSource::kGold, base, all_modes);
  std::vector<TokenSeq> targets;
  targets.reserve(corpus.size());
  for (const auto& p : corpus) targets.push_back(p.target);
  return build_datastore(targets, mode, models);
}

Datastore build_datastore(const std::vector<TokenSeq>& targets, SourceMode mode,
                          const DatastoreModels& models) {
  const auto& base = base_of(models);
  const AdapterSet<float>* all_modes = models.adapters_in_all_modes ? models.adapters : nullptr;
  const auto pairs = datastore_sources(targets, mode, models);
  switch (mode) {
    case SourceMode::kCopy: return forced_store(pairs, ForcedSource::kCopy, base, models.adapters);
    case SourceMode::kEmpty: return forced_store(pairs, ForcedSource::kEmpty, base, all_modes);
    default: return forced_store(pairs, ForcedSource::kGold, base, all_modes);
  }
}

std::vector<std::uint8_t> encode_datastore(const Datastore& ds) {
  ds.check();
  ByteWriter w;
  w.bytes("UDKD");
  w.u32(kDatastoreVersion);
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u64(ds.size());
  for (float k : ds.keys) w.f32(k);
  for (TokenId v : ds.values) w.u32(v);
  return w.buffer();
}

Datastore decode_datastore(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("UDKD", "datastore");
  const auto version_at = r.offset();
  if (r.u32() != kDatastoreVersion) throw FormatError("unsupported datastore version", version_at);
  Datastore ds;
  ds.dim = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  const std::uint64_t nkeys = count * static_cast<std::uint64_t>(ds.dim);
  r.need(nkeys * 4 + count * 4);
  ds.keys.resize(nkeys);
  for (auto& k : ds.keys) k = r.f32();
  ds.values.resize(count);
  for (auto& v : ds.values) v = r.u32();
  if (r.remaining() != 0) throw FormatError("trailing bytes after datastore", r.offset());
  return ds;
}

void save_datastore(const std::filesystem::path& path, const Datastore& ds) {
  write_file(path, encode_datastore(ds));
}

Datastore load_datastore(const std::filesystem::path& path) {
  return decode_datastore(read_file(path));
}

}  // namespace knnmt
