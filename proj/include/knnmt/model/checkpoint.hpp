// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "knnmt/model/transformer.hpp"

namespace knnmt {

/// One entry of a checkpoint container.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major

  bool operator==(const NamedTensor&) const = default;
};

// Container layout (little-endian): "UDAK", version u32, tensor count u32;
// per tensor: name length u16, UTF-8 name, rank u8, dims u32 each, f32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(std::vector<std::uint8_t> bytes);
void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// The model config travels as a rank-1 tensor named "config".
NamedTensor config_tensor(const ModelConfig& cfg);
ModelConfig config_from_tensor(const NamedTensor& t);

std::vector<NamedTensor> to_tensors(const TransformerWeights<float>& w);
TransformerWeights<float> weights_from_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> to_tensors(const AdapterSet<float>& a);
AdapterSet<float> adapters_from_tensors(const std::vector<NamedTensor>& tensors);

void save_model(const std::filesystem::path& path, const TransformerWeights<float>& w);
TransformerWeights<float> load_model(const std::filesystem::path& path);
void save_adapters(const std::filesystem::path& path, const AdapterSet<float>& a);
AdapterSet<float> load_adapters(const std::filesystem::path& path);

/// FNV-1a over the serialized bytes; used to check that the base stays frozen.
std::uint64_t fingerprint(const TransformerWeights<float>& w);

template <typename To, typename From>
TransformerWeights<To> cast_weights(const TransformerWeights<From>& w);
template <typename To, typename From>
AdapterSet<To> cast_adapters(const AdapterSet<From>& a);

extern template TransformerWeights<double> cast_weights(const TransformerWeights<float>&);
extern template TransformerWeights<float> cast_weights(const TransformerWeights<double>&);
extern template AdapterSet<double> cast_adapters(const AdapterSet<float>&);
extern template AdapterSet<float> cast_adapters(const AdapterSet<double>&);

}  // namespace knnmt
