// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/model/checkpoint.hpp"

#include <map>

#include "knnmt/binary_io.hpp"

namespace knnmt {

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.bytes("UDAK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw ContractViolation("tensor name too long");
    std::uint64_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) throw DimensionError("tensor '" + t.name + "': dims do not match payload");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  return w.buffer();
}

std::vector<NamedTensor> decode_tensors(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("UDAK", "checkpoint");
  const auto version_at = r.offset();
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    const std::uint8_t rank = r.u8();
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    r.need(n * 4);
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  return out;
}

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, encode_tensors(tensors));
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  return decode_tensors(read_file(path));
}

NamedTensor config_tensor(const ModelConfig& c) {
  NamedTensor t{"config", {9}, {}};
  for (int v : {c.d_model, c.n_heads, c.n_enc_layers, c.n_dec_layers, c.d_ff, c.adapter_hidden,
                static_cast<int>(c.adapter_sites), c.vocab_size, c.max_len})
    t.data.push_back(static_cast<float>(v));
  return t;
}

ModelConfig config_from_tensor(const NamedTensor& t) {
  if (t.name != "config" || t.data.size() != 9) throw FormatError("malformed config tensor", 0);
  ModelConfig c;
  auto at = [&](int i) { return static_cast<int>(t.data[static_cast<std::size_t>(i)]); };
  c.d_model = at(0);
  c.n_heads = at(1);
  c.n_enc_layers = at(2);
  c.n_dec_layers = at(3);
  c.d_ff = at(4);
  c.adapter_hidden = at(5);
  const int sites = at(6);
  if (sites < 0 || sites > 2) throw FormatError("bad adapter_sites in config tensor", 0);
  c.adapter_sites = static_cast<AdapterSites>(sites);
  c.vocab_size = at(7);
  c.max_len = at(8);
  c.validate();
  return c;
}

namespace {

NamedTensor pack(const std::string& name, const Matrix<float>& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

void unpack(const NamedTensor& t, Matrix<float>& m) {
  if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint32_t>(m.rows()) ||
      t.dims[1] != static_cast<std::uint32_t>(m.cols()))
    throw DimensionError("checkpoint tensor '" + t.name + "' has the wrong shape");
  std::copy(t.data.begin(), t.data.end(), m.data());
}

template <typename Params>
void fill(Params& p, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& np : p.parameters()) {
    auto it = by_name.find(np.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + np.name + "'", 0);
    unpack(*it->second, *np.value);
  }
}

const NamedTensor& find_config(const std::vector<NamedTensor>& tensors) {
  for (const auto& t : tensors)
    if (t.name == "config") return t;
  throw FormatError("checkpoint has no config tensor", 0);
}

}  // namespace

std::vector<NamedTensor> to_tensors(const TransformerWeights<float>& w) {
  std::vector<NamedTensor> out{config_tensor(w.config)};
  for (auto& np : const_cast<TransformerWeights<float>&>(w).parameters())
    out.push_back(pack(np.name, *np.value));
  return out;
}

TransformerWeights<float> weights_from_tensors(const std::vector<NamedTensor>& tensors) {
  const ModelConfig cfg = config_from_tensor(find_config(tensors));
  auto w = TransformerWeights<float>::zeros(cfg);
  fill(w, tensors);
  return w;
}

std::vector<NamedTensor> to_tensors(const AdapterSet<float>& a) {
  std::vector<NamedTensor> out{config_tensor(a.config)};
  for (auto& np : const_cast<AdapterSet<float>&>(a).parameters()) out.push_back(pack(np.name, *np.value));
  return out;
}

AdapterSet<float> adapters_from_tensors(const std::vector<NamedTensor>& tensors) {
  const ModelConfig cfg = config_from_tensor(find_config(tensors));
  auto a = AdapterSet<float>::zeros(cfg);
  fill(a, tensors);
  return a;
}

void save_model(const std::filesystem::path& path, const TransformerWeights<float>& w) {
  write_tensors(path, to_tensors(w));
}

TransformerWeights<float> load_model(const std::filesystem::path& path) {
  return weights_from_tensors(read_tensors(path));
}

void save_adapters(const std::filesystem::path& path, const AdapterSet<float>& a) {
  write_tensors(path, to_tensors(a));
}

AdapterSet<float> load_adapters(const std::filesystem::path& path) {
  return adapters_from_tensors(read_tensors(path));
}

std::uint64_t fingerprint(const TransformerWeights<float>& w) {
  const auto bytes = encode_tensors(to_tensors(w));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename To, typename From>
TransformerWeights<To> cast_weights(const TransformerWeights<From>& w) {
  auto out = TransformerWeights<To>::zeros(w.config);
  auto src = const_cast<TransformerWeights<From>&>(w).parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<To>();
  return out;
}

template <typename To, typename From>
AdapterSet<To> cast_adapters(const AdapterSet<From>& a) {
  auto out = AdapterSet<To>::zeros(a.config);
  auto src = const_cast<AdapterSet<From>&>(a).parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<To>();
  return out;
}

template TransformerWeights<double> cast_weights(const TransformerWeights<float>&);
template TransformerWeights<float> cast_weights(const TransformerWeights<double>&);
template AdapterSet<double> cast_adapters(const AdapterSet<float>&);
template AdapterSet<float> cast_adapters(const AdapterSet<double>&);

}  // namespace knnmt
