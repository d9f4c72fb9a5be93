// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace knnmt {

void KnnConfig::validate() const {
  if (k < 1) throw ConfigError("knn.k must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("knn.temperature must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("knn.lambda must lie in [0, 1]");
  if (nprobe < 1) throw ConfigError("knn.nprobe must be >= 1");
}

std::optional<VocabDistribution> knn_distribution(std::span<const Neighbor> neighbors,
                                                  double temperature, int vocab_size) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (neighbors.empty()) return std::nullopt;
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& n : neighbors) dmin = std::min(dmin, n.distance);
  VocabDistribution p(static_cast<std::size_t>(vocab_size), 0.0);
  double z = 0.0;
  for (const auto& n : neighbors) {
    if (n.value >= static_cast<TokenId>(vocab_size))
      throw DimensionError("neighbor value " + std::to_string(n.value) + " outside the vocabulary");
    // Shifting by the nearest distance cancels in the normalization.
    const double w = std::exp(-(n.distance - dmin) / temperature);
    p[n.value] += w;
    z += w;
  }
  for (auto& v : p) v /= z;
  return p;
}

VocabDistribution interpolate(const VocabDistribution& p_knn, const VocabDistribution& p_nmt,
                              double lambda) {
  if (p_knn.size() != p_nmt.size()) throw DimensionError("interpolate: distribution sizes differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  VocabDistribution p(p_nmt.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = lambda * p_knn[i] + (1.0 - lambda) * p_nmt[i];
  return p;
}

VocabDistribution softmax(std::span<const float> logits) {
  VocabDistribution p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

StepOutput decode_step(const Transformer<float>& model, const Matrix<float>& enc_out,
                       const TokenSeq& prefix) {
  if (prefix.empty()) throw ContractViolation("decode_step: empty prefix");
  if (prefix.front() != Vocabulary::kBos) throw ContractViolation("decode_step: prefix must start with BOS");
  Segments seg;
  seg.push(enc_out.rows());
  TokenBatch in;
  in.push(prefix);
  const Matrix<float> h = model.decode(enc_out, seg, in, nullptr);
  StepOutput out;
  const Matrix<float> last = h.bottomRows(1);
  out.hidden.assign(last.data(), last.data() + last.size());
  const Matrix<float> logits = model.logits(last);
  out.p_nmt = softmax({logits.data(), static_cast<std::size_t>(logits.size())});
  return out;
}

int max_output_length(std::size_t source_length, int model_max_len) {
  // Decoder positions hold BOS plus the emitted tokens.
  return std::min(2 * static_cast<int>(source_length) + 8, model_max_len - 1);
}

Translator::Translator(const Transformer<float>& model, Retrieval retrieval, KnnConfig knn)
    : model_(model), retrieval_(retrieval), knn_(knn) {
  knn_.validate();
  if (retrieval_.store) {
    if (retrieval_.store->dim != model.config().d_model && !retrieval_.store->empty())
      throw ConfigError("datastore dim " + std::to_string(retrieval_.store->dim) +
                        " != model d_model " + std::to_string(model.config().d_model));
    if (retrieval_.index && retrieval_.index->dim != retrieval_.store->dim && !retrieval_.store->empty())
      throw ConfigError("index dim does not match the datastore");
  } else if (knn_.lambda > 0.0) {
    throw ConfigError("lambda > 0 needs a datastore");
  }
}

VocabDistribution Translator::mix(std::span<const float> hidden, const VocabDistribution& p_nmt,
                                  std::vector<Neighbor>* neighbors) const {
  if (knn_.lambda == 0.0 || !retrieval_.store || retrieval_.store->empty()) return p_nmt;
  const Datastore& ds = *retrieval_.store;
  std::vector<Neighbor> found;
  if (retrieval_.index) {
    const int nprobe = std::min(knn_.nprobe, retrieval_.index->nlist);
    found = knn_search(*retrieval_.index, ds, hidden, knn_.k, nprobe);
  } else {
    found = brute_force_search(ds, hidden, knn_.k);
  }
  const auto p_knn = knn_distribution(found, knn_.temperature, static_cast<int>(p_nmt.size()));
  if (neighbors) *neighbors = found;
  if (!p_knn) return p_nmt;
  return interpolate(*p_knn, p_nmt, knn_.lambda);
}

std::vector<TokenSeq> Translator::translate(const std::vector<TokenSeq>& sources,
                                            const DecodeOptions& opts) const {
  if (opts.beam < 1) throw ConfigError("beam width must be >= 1");
  std::vector<TokenSeq> out;
  out.reserve(sources.size());
  const std::size_t chunk = std::max<std::size_t>(1, opts.batch_sentences);
  for (std::size_t s = 0; s < sources.size(); s += chunk) {
    const std::vector<TokenSeq> part(sources.begin() + static_cast<std::ptrdiff_t>(s),
                                     sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), s + chunk)));
    auto hyps = opts.beam == 1 && !opts.force_beam ? greedy(part, s, opts.trace) : beam(part, opts.beam);
    for (auto& h : hyps) out.push_back(std::move(h));
  }
  return out;
}

TokenSeq Translator::translate(const TokenSeq& source, const DecodeOptions& opts) const {
  return translate(std::vector<TokenSeq>{source}, opts).front();
}

namespace {

struct Encoded {
  Matrix<float> memory;
  Segments segments;
  std::vector<int> limits;
  int capacity = 1;
};

Encoded encode_sources(const Transformer<float>& model, const std::vector<TokenSeq>& sources) {
  Encoded e;
  TokenBatch batch;
  for (const auto& x : sources) {
    if (x.empty()) throw DataError("cannot translate an empty source sentence");
    TokenSeq src = x;
    src.push_back(Vocabulary::kEos);
    batch.push(src);
    e.limits.push_back(max_output_length(x.size(), model.config().max_len));
    e.capacity = std::max(e.capacity, e.limits.back() + 1);
  }
  e.memory = model.encode(batch, nullptr);
  e.segments = batch.segments;
  return e;
}

TokenId argmax(const VocabDistribution& p) {
  // First maximum: ties go to the lowest token id.
  return static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
}

void trace_top(std::ostream& os, const VocabDistribution& p) {
  std::vector<TokenId> ids(p.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  const std::size_t n = std::min<std::size_t>(5, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  for (std::size_t i = 0; i < n; ++i) os << (i ? " " : "") << ids[i] << ':' << p[ids[i]];
}

}  // namespace

std::vector<TokenSeq> Translator::greedy(const std::vector<TokenSeq>& sources, std::size_t offset,
                                         std::ostream* trace) const {
  const Encoded enc = encode_sources(model_, sources);
  IncrementalDecoder<float> dec(model_, enc.memory, enc.segments, enc.capacity);
  std::vector<TokenSeq> hyps(sources.size());
  std::vector<std::size_t> active(sources.size());
  std::iota(active.begin(), active.end(), std::size_t{0});
  std::vector<TokenId> tokens(sources.size(), Vocabulary::kBos);
  std::vector<Neighbor> neighbors;
  while (!active.empty()) {
    const Matrix<float> h = dec.step(active, tokens);
    const Matrix<float> logits = model_.logits(h);
    std::vector<std::size_t> next_active;
    std::vector<TokenId> next_tokens;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const auto row = static_cast<Index>(r);
      const VocabDistribution p_nmt =
          softmax({logits.data() + row * logits.cols(), static_cast<std::size_t>(logits.cols())});
      neighbors.clear();
      const std::span<const float> hidden(h.data() + row * h.cols(), static_cast<std::size_t>(h.cols()));
      const VocabDistribution p = mix(hidden, p_nmt, trace ? &neighbors : nullptr);
      const TokenId tok = argmax(p);
      const std::size_t s = active[r];
      if (trace) {
        *trace << (offset + s) << '\t' << hyps[s].size() << "\tnmt\t";
        trace_top(*trace, p_nmt);
        *trace << "\tknn\t";
        for (std::size_t i = 0; i < neighbors.size(); ++i)
          *trace << (i ? " " : "") << neighbors[i].distance << ':' << neighbors[i].value;
        *trace << "\tfinal\t";
        trace_top(*trace, p);
        *trace << '\n';
      }
      if (tok == Vocabulary::kEos) continue;
      hyps[s].push_back(tok);
      if (static_cast<int>(hyps[s].size()) >= enc.limits[s]) continue;
      next_active.push_back(s);
      next_tokens.push_back(tok);
    }
    active = std::move(next_active);
    tokens = std::move(next_tokens);
  }
  return hyps;
}

std::vector<TokenSeq> Translator::beam(const std::vector<TokenSeq>& sources, int width) const {
  struct Hyp {
    std::size_t sentence;
    TokenSeq tokens;
    double score;
  };
  struct Finished {
    TokenSeq tokens;
    double normalized;
  };
  const Encoded enc = encode_sources(model_, sources);
  IncrementalDecoder<float> dec(model_, enc.memory, enc.segments, enc.capacity);
  std::vector<Hyp> live;
  for (std::size_t s = 0; s < sources.size(); ++s) live.push_back({s, {}, 0.0});
  std::vector<std::vector<Finished>> finished(sources.size());
  std::vector<TokenId> feed(sources.size(), Vocabulary::kBos);

  while (!live.empty()) {
    std::vector<std::size_t> slots(live.size());
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    const Matrix<float> h = dec.step(slots, feed);
    const Matrix<float> logits = model_.logits(h);

    struct Cand {
      double score;
      std::size_t parent;
      TokenId token;
    };
    // Candidates grouped by sentence; live hyps of one sentence are contiguous.
    std::vector<Hyp> next;
    std::vector<std::size_t> parents;
    std::vector<TokenId> next_feed;
    std::size_t begin = 0;
    while (begin < live.size()) {
      std::size_t end = begin;
      while (end < live.size() && live[end].sentence == live[begin].sentence) ++end;
      std::vector<Cand> cands;
      for (std::size_t i = begin; i < end; ++i) {
        const auto row = static_cast<Index>(i);
        const VocabDistribution p_nmt =
            softmax({logits.data() + row * logits.cols(), static_cast<std::size_t>(logits.cols())});
        const VocabDistribution p =
            mix({h.data() + row * h.cols(), static_cast<std::size_t>(h.cols())}, p_nmt);
        std::vector<TokenId> ids(p.size());
        std::iota(ids.begin(), ids.end(), TokenId{0});
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(width), ids.size());
        std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                          [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
        for (std::size_t j = 0; j < n; ++j)
          if (p[ids[j]] > 0.0) cands.push_back({live[i].score + std::log(p[ids[j]]), i, ids[j]});
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      if (cands.size() > static_cast<std::size_t>(width)) cands.resize(static_cast<std::size_t>(width));
      const std::size_t s = live[begin].sentence;
      for (const auto& c : cands) {
        const Hyp& parent = live[c.parent];
        if (c.token == Vocabulary::kEos) {
          finished[s].push_back({parent.tokens, c.score / static_cast<double>(parent.tokens.size() + 1)});
          continue;
        }
        Hyp child{s, parent.tokens, c.score};
        child.tokens.push_back(c.token);
        if (static_cast<int>(child.tokens.size()) >= enc.limits[s]) {
          finished[s].push_back({child.tokens, c.score / static_cast<double>(child.tokens.size())});
          continue;
        }
        parents.push_back(c.parent);
        next_feed.push_back(c.token);
        next.push_back(std::move(child));
      }
      begin = end;
    }
    live = std::move(next);
    feed = std::move(next_feed);
    if (!live.empty()) dec.reorder(parents);
  }

  std::vector<TokenSeq> out(sources.size());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Finished* best = nullptr;
    for (const auto& f : finished[s])
      if (!best || f.normalized > best->normalized) best = &f;
    if (best) out[s] = best->tokens;
  }
  return out;
}

}  // namespace knnmt
