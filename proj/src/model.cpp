// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "knnmt/model/layers_impl.hpp"
#include "knnmt/model/transformer.hpp"

namespace knnmt {

std::string to_string(AdapterSites sites) {
  switch (sites) {
    case AdapterSites::kNone: return "none";
    case AdapterSites::kEncoder: return "encoder";
    case AdapterSites::kEncoderDecoder: return "encoder+decoder";
  }
  return "none";
}

AdapterSites adapter_sites_from_string(const std::string& s) {
  if (s == "none") return AdapterSites::kNone;
  if (s == "encoder") return AdapterSites::kEncoder;
  if (s == "encoder+decoder") return AdapterSites::kEncoderDecoder;
  throw ConfigError("adapter_sites must be none, encoder or encoder+decoder (got '" + s + "')");
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 || d_ff < 1 ||
      adapter_hidden < 1 || vocab_size < 1 || max_len < 1)
    throw ConfigError("model dimensions must all be >= 1");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

// ---------------------------------------------------------------- weights

template <typename T>
TransformerWeights<T> TransformerWeights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TransformerWeights w;
  w.config = cfg;
  const Index d = cfg.d_model;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  auto embed = [&](Matrix<T>& m) {
    m.resize(cfg.vocab_size, d);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
  };
  embed(w.enc_embed);
  embed(w.dec_embed);
  w.encoder.resize(static_cast<std::size_t>(cfg.n_enc_layers));
  for (auto& l : w.encoder) l.init(d, cfg.n_heads, cfg.d_ff, rng);
  w.enc_norm.init(d);
  w.decoder.resize(static_cast<std::size_t>(cfg.n_dec_layers));
  for (auto& l : w.decoder) l.init(d, cfg.n_heads, cfg.d_ff, rng);
  w.dec_norm.init(d);
  w.output.init(d, cfg.vocab_size, rng);
  return w;
}

template <typename T>
TransformerWeights<T> TransformerWeights<T>::zeros(const ModelConfig& cfg) {
  TransformerWeights w = init(cfg, 0);
  for (auto& p : w.parameters()) p.value->setZero();
  return w;
}

template <typename T>
ParamList<T> TransformerWeights<T>::parameters() {
  ParamList<T> out;
  out.push_back({"enc.embed", &enc_embed});
  for (std::size_t i = 0; i < encoder.size(); ++i)
    encoder[i].collect("enc.layer" + std::to_string(i), out);
  enc_norm.collect("enc.norm", out);
  out.push_back({"dec.embed", &dec_embed});
  for (std::size_t i = 0; i < decoder.size(); ++i)
    decoder[i].collect("dec.layer" + std::to_string(i), out);
  dec_norm.collect("dec.norm", out);
  output.collect("dec.output", out);
  return out;
}

template <typename T>
AdapterSet<T> AdapterSet<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  AdapterSet a;
  a.config = cfg;
  if (cfg.adapter_sites == AdapterSites::kNone) return a;
  a.encoder.resize(static_cast<std::size_t>(cfg.n_enc_layers) + 1);
  for (auto& ad : a.encoder) ad.init(cfg.d_model, cfg.adapter_hidden, rng);
  if (cfg.adapter_sites == AdapterSites::kEncoderDecoder) {
    a.decoder.resize(static_cast<std::size_t>(cfg.n_dec_layers));
    for (auto& ad : a.decoder) ad.init(cfg.d_model, cfg.adapter_hidden, rng);
  }
  return a;
}

template <typename T>
AdapterSet<T> AdapterSet<T>::zeros(const ModelConfig& cfg) {
  AdapterSet a = init(cfg, 0);
  for (auto& p : a.parameters()) p.value->setZero();
  return a;
}

template <typename T>
ParamList<T> AdapterSet<T>::parameters() {
  ParamList<T> out;
  for (std::size_t i = 0; i < encoder.size(); ++i)
    encoder[i].collect("adapter.enc" + std::to_string(i), out);
  for (std::size_t i = 0; i < decoder.size(); ++i)
    decoder[i].collect("adapter.dec" + std::to_string(i), out);
  return out;
}

// ---------------------------------------------------------------- batches

namespace {

ForcedBatch forced_batch(std::span<const SentencePair> pairs, ForcedSource kind) {
  ForcedBatch b;
  for (const auto& p : pairs) {
    if (p.target.empty() || (kind == ForcedSource::kGold && p.source.empty()))
      throw ContractViolation("sentence pairs must have non-empty sides");
    TokenSeq src;
    if (kind == ForcedSource::kGold) src = p.source;
    if (kind == ForcedSource::kCopy) src = p.target;
    src.push_back(Vocabulary::kEos);
    b.source.push(src);
    TokenSeq in{Vocabulary::kBos};
    in.insert(in.end(), p.target.begin(), p.target.end());
    b.target_in.push(in);
    b.target_out.insert(b.target_out.end(), p.target.begin(), p.target.end());
    b.target_out.push_back(Vocabulary::kEos);
  }
  return b;
}

}  // namespace

ForcedBatch make_forced_batch(std::span<const SentencePair> pairs, ForcedSource kind) {
  return forced_batch(pairs, kind);
}

ForcedBatch make_copy_batch(std::span<const SentencePair> pairs) {
  return forced_batch(pairs, ForcedSource::kCopy);
}

// ---------------------------------------------------------------- Transformer

template <typename T>
Transformer<T>::Transformer(TransformerWeights<T> weights) : weights_(std::move(weights)) {
  const auto& cfg = weights_.config;
  cfg.validate();
  const Index d = cfg.d_model;
  positions_.resize(cfg.max_len, d);
  for (Index p = 0; p < cfg.max_len; ++p) {
    for (Index i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      positions_(p, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) positions_(p, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
}

template <typename T>
void Transformer<T>::check_tokens(const TokenBatch& batch) const {
  const auto& cfg = weights_.config;
  for (TokenId id : batch.ids)
    if (id >= static_cast<TokenId>(cfg.vocab_size)) throw DimensionError("token id outside vocabulary");
  for (Index b = 0; b < batch.segments.count(); ++b)
    if (batch.segments.length(b) > cfg.max_len)
      throw DimensionError("sequence of length " + std::to_string(batch.segments.length(b)) +
                           " exceeds max_len " + std::to_string(cfg.max_len));
}

template <typename T>
void Transformer<T>::embed_row(const Matrix<T>& table, TokenId id, Index position, T* out) const {
  const Index d = weights_.config.d_model;
  const T scale = std::sqrt(static_cast<T>(d));
  const T* e = table.row(static_cast<Index>(id)).data();
  const T* pe = positions_.row(position).data();
  for (Index j = 0; j < d; ++j) out[j] = e[j] * scale + pe[j];
}

template <typename T>
Matrix<T> Transformer<T>::encode(const TokenBatch& source, const AdapterSet<T>* adapters,
                                 Dropout drop, EncoderCache<T>* cache) const {
  check_tokens(source);
  const auto& w = weights_;
  const Index n = static_cast<Index>(source.ids.size());
  const auto& seg = source.segments;
  const bool use_adapters = adapters != nullptr && !adapters->encoder.empty();
  if (use_adapters && adapters->encoder.size() != w.encoder.size() + 1)
    throw DimensionError("adapter set does not match the encoder depth");

  Matrix<T> x(n, w.config.d_model);
  for (Index b = 0; b < seg.count(); ++b)
    for (Index i = 0; i < seg.length(b); ++i) {
      const Index r = seg.begin(b) + i;
      embed_row(w.enc_embed, source.ids[static_cast<std::size_t>(r)], i, x.row(r).data());
    }
  Matrix<T> mask = drop.mask<T>(x.rows(), x.cols());
  apply_mask(x, mask);
  if (cache) {
    cache->drop_embed = std::move(mask);
    cache->ids = source.ids;
    cache->layers.resize(w.encoder.size());
    cache->adapters.resize(use_adapters ? adapters->encoder.size() : 0);
  }
  if (use_adapters) x = adapters->encoder[0].forward(x, cache ? &cache->adapters[0] : nullptr);
  for (std::size_t l = 0; l < w.encoder.size(); ++l) {
    x = w.encoder[l].forward(x, seg, drop, cache ? &cache->layers[l] : nullptr);
    if (use_adapters)
      x = adapters->encoder[l + 1].forward(x, cache ? &cache->adapters[l + 1] : nullptr);
  }
  return w.enc_norm.forward(x, cache ? &cache->norm : nullptr);
}

template <typename T>
Matrix<T> Transformer<T>::decode(const Matrix<T>& memory, const Segments& mem_seg,
                                 const TokenBatch& target_in, const AdapterSet<T>* adapters,
                                 Dropout drop, DecoderCache<T>* cache) const {
  check_tokens(target_in);
  const auto& w = weights_;
  const auto& seg = target_in.segments;
  for (Index b = 0; b < seg.count(); ++b)
    if (seg.length(b) == 0) throw ContractViolation("decoder prefix must start with BOS");
  if (memory.cols() != w.config.d_model) throw DimensionError("memory width != d_model");
  const bool use_adapters = adapters != nullptr && !adapters->decoder.empty();
  if (use_adapters && adapters->decoder.size() != w.decoder.size())
    throw DimensionError("adapter set does not match the decoder depth");

  const Index n = static_cast<Index>(target_in.ids.size());
  Matrix<T> x(n, w.config.d_model);
  for (Index b = 0; b < seg.count(); ++b)
    for (Index i = 0; i < seg.length(b); ++i) {
      const Index r = seg.begin(b) + i;
      embed_row(w.dec_embed, target_in.ids[static_cast<std::size_t>(r)], i, x.row(r).data());
    }
  Matrix<T> mask = drop.mask<T>(x.rows(), x.cols());
  apply_mask(x, mask);
  if (cache) {
    cache->drop_embed = std::move(mask);
    cache->ids = target_in.ids;
    cache->layers.resize(w.decoder.size());
    cache->adapters.resize(use_adapters ? adapters->decoder.size() : 0);
  }
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    x = w.decoder[l].forward(x, seg, memory, mem_seg, drop, cache ? &cache->layers[l] : nullptr);
    if (use_adapters) x = adapters->decoder[l].forward(x, cache ? &cache->adapters[l] : nullptr);
  }
  return w.dec_norm.forward(x, cache ? &cache->norm : nullptr);
}

template <typename T>
Matrix<T> Transformer<T>::backward_decoder(const Matrix<T>& d_hidden, const DecoderCache<T>& cache,
                                           const AdapterSet<T>* adapters,
                                           TransformerWeights<T>* grad,
                                           AdapterSet<T>* adapter_grad) const {
  const auto& w = weights_;
  const bool use_adapters = !cache.adapters.empty();
  Matrix<T> dx = w.dec_norm.backward(d_hidden, cache.norm, grad ? &grad->dec_norm : nullptr);
  Matrix<T> d_memory;
  for (std::size_t l = w.decoder.size(); l-- > 0;) {
    if (use_adapters)
      dx = adapters->decoder[l].backward(dx, cache.adapters[l],
                                         adapter_grad ? &adapter_grad->decoder[l] : nullptr);
    auto [dxl, dm] = w.decoder[l].backward(dx, cache.layers[l], grad ? &grad->decoder[l] : nullptr);
    dx = std::move(dxl);
    if (d_memory.size() == 0) {
      d_memory = std::move(dm);
    } else {
      d_memory += dm;
    }
  }
  if (grad) {
    apply_mask(dx, cache.drop_embed);
    const T scale = std::sqrt(static_cast<T>(w.config.d_model));
    for (Index r = 0; r < dx.rows(); ++r)
      grad->dec_embed.row(static_cast<Index>(cache.ids[static_cast<std::size_t>(r)])) +=
          dx.row(r) * scale;
  }
  return d_memory;
}

template <typename T>
void Transformer<T>::backward_encoder(const Matrix<T>& d_memory, const EncoderCache<T>& cache,
                                      const AdapterSet<T>* adapters, TransformerWeights<T>* grad,
                                      AdapterSet<T>* adapter_grad) const {
  const auto& w = weights_;
  const bool use_adapters = !cache.adapters.empty();
  Matrix<T> dx = w.enc_norm.backward(d_memory, cache.norm, grad ? &grad->enc_norm : nullptr);
  for (std::size_t l = w.encoder.size(); l-- > 0;) {
    if (use_adapters)
      dx = adapters->encoder[l + 1].backward(dx, cache.adapters[l + 1],
                                             adapter_grad ? &adapter_grad->encoder[l + 1] : nullptr);
    dx = w.encoder[l].backward(dx, cache.layers[l], grad ? &grad->encoder[l] : nullptr);
  }
  if (use_adapters)
    dx = adapters->encoder[0].backward(dx, cache.adapters[0],
                                       adapter_grad ? &adapter_grad->encoder[0] : nullptr);
  if (grad) {
    apply_mask(dx, cache.drop_embed);
    const T scale = std::sqrt(static_cast<T>(w.config.d_model));
    for (Index r = 0; r < dx.rows(); ++r)
      grad->enc_embed.row(static_cast<Index>(cache.ids[static_cast<std::size_t>(r)])) +=
          dx.row(r) * scale;
  }
}

// ---------------------------------------------------------------- IncrementalDecoder

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const Transformer<T>& model, const Matrix<T>& memory,
                                          const Segments& mem_seg, Index capacity)
    : model_(model), mem_seg_(mem_seg), capacity_(capacity) {
  const auto& w = model.weights();
  if (capacity > w.config.max_len) throw DimensionError("decode capacity exceeds max_len");
  for (const auto& layer : w.decoder) {
    cross_keys_.push_back(layer.cross_attn.k.forward(memory));
    cross_values_.push_back(layer.cross_attn.v.forward(memory));
  }
  slots_.resize(static_cast<std::size_t>(mem_seg.count()));
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    slots_[s].source = s;
    slots_[s].keys.assign(w.decoder.size(), Matrix<T>(capacity, w.config.d_model));
    slots_[s].values.assign(w.decoder.size(), Matrix<T>(capacity, w.config.d_model));
  }
}

template <typename T>
Matrix<T> IncrementalDecoder<T>::step(std::span<const std::size_t> slots,
                                      std::span<const TokenId> tokens) {
  const auto& w = model_.weights();
  const Index d = w.config.d_model;
  const auto n = static_cast<Index>(slots.size());
  if (tokens.size() != slots.size()) throw ContractViolation("one token per slot");
  Matrix<T> x(n, d);
  for (Index i = 0; i < n; ++i) {
    const Slot& s = slots_[slots[static_cast<std::size_t>(i)]];
    if (s.length >= capacity_) throw DimensionError("decode capacity exhausted");
    if (tokens[static_cast<std::size_t>(i)] >= static_cast<TokenId>(w.config.vocab_size))
      throw DimensionError("token id outside vocabulary");
    model_.embed_row(w.dec_embed, tokens[static_cast<std::size_t>(i)], s.length, x.row(i).data());
  }
  Matrix<T> S;
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    const auto& layer = w.decoder[l];
    const int heads = layer.self_attn.heads;
    const Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> a = layer.ln1.forward(x, nullptr);
    Matrix<T> Q = layer.self_attn.q.forward(a);
    Matrix<T> K = layer.self_attn.k.forward(a);
    Matrix<T> V = layer.self_attn.v.forward(a);
    Matrix<T> O(n, d);
    for (Index i = 0; i < n; ++i) {
      Slot& s = slots_[slots[static_cast<std::size_t>(i)]];
      s.keys[l].row(s.length) = K.row(i);
      s.values[l].row(s.length) = V.row(i);
      const Index len = s.length + 1;
      for (int h = 0; h < heads; ++h) {
        const Index c0 = h * dh;
        S.noalias() = Q.block(i, c0, 1, dh) * s.keys[l].block(0, c0, len, dh).transpose();
        S *= scale;
        detail::softmax_rows(S);
        O.block(i, c0, 1, dh).noalias() = S * s.values[l].block(0, c0, len, dh);
      }
    }
    x += layer.self_attn.o.forward(O);

    Matrix<T> b = layer.ln2.forward(x, nullptr);
    Matrix<T> Qc = layer.cross_attn.q.forward(b);
    for (Index i = 0; i < n; ++i) {
      const Slot& s = slots_[slots[static_cast<std::size_t>(i)]];
      const auto src = static_cast<Index>(s.source);
      const Index m0 = mem_seg_.begin(src), mn = mem_seg_.length(src);
      for (int h = 0; h < heads; ++h) {
        const Index c0 = h * dh;
        S.noalias() = Qc.block(i, c0, 1, dh) * cross_keys_[l].block(m0, c0, mn, dh).transpose();
        S *= scale;
        detail::softmax_rows(S);
        O.block(i, c0, 1, dh).noalias() = S * cross_values_[l].block(m0, c0, mn, dh);
      }
    }
    x += layer.cross_attn.o.forward(O);

    Matrix<T> e = layer.ln3.forward(x, nullptr);
    x += layer.ffn.forward(e, nullptr);
  }
  for (Index i = 0; i < n; ++i) ++slots_[slots[static_cast<std::size_t>(i)]].length;
  return w.dec_norm.forward(x, nullptr);
}

template <typename T>
void IncrementalDecoder<T>::reorder(std::span<const std::size_t> parents) {
  std::vector<Slot> next;
  next.reserve(parents.size());
  for (std::size_t p : parents) next.push_back(slots_.at(p));
  slots_ = std::move(next);
}

// ---------------------------------------------------------------- helpers

template <typename T>
Matrix<T> forced_representations(const Transformer<T>& model, std::span<const SentencePair> pairs,
                                 ForcedSource kind, const AdapterSet<T>* adapters,
                                 std::size_t chunk) {
  Index rows = 0;
  for (const auto& p : pairs) rows += static_cast<Index>(p.target.size()) + 1;
  Matrix<T> out(rows, model.config().d_model);
  Index at = 0;
  for (std::size_t begin = 0; begin < pairs.size(); begin += chunk) {
    const auto part = pairs.subspan(begin, std::min(chunk, pairs.size() - begin));
    const ForcedBatch batch = make_forced_batch(part, kind);
    const Matrix<T> memory = model.encode(batch.source, adapters);
    const Matrix<T> h = model.decode(memory, batch.source.segments, batch.target_in, adapters);
    out.middleRows(at, h.rows()) = h;
    at += h.rows();
  }
  return out;
}

#define KNNMT_INSTANTIATE(T)                                                                   \
  template struct Linear<T>;                                                                   \
  template struct LayerNorm<T>;                                                                \
  template struct Attention<T>;                                                                \
  template struct FeedForward<T>;                                                              \
  template struct Adapter<T>;                                                                  \
  template struct EncoderLayer<T>;                                                             \
  template struct DecoderLayer<T>;                                                             \
  template struct TransformerWeights<T>;                                                       \
  template struct AdapterSet<T>;                                                               \
  template class Transformer<T>;                                                               \
  template class IncrementalDecoder<T>;                                                        \
  template Matrix<T> forced_representations(const Transformer<T>&, std::span<const SentencePair>, \
                                            ForcedSource, const AdapterSet<T>*, std::size_t);

KNNMT_INSTANTIATE(float)
KNNMT_INSTANTIATE(double)

#undef KNNMT_INSTANTIATE

}  // namespace knnmt
