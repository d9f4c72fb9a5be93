// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

// Out-of-line layer definitions. Included by the translation units that
// instantiate the model templates (src/model.cpp), not by clients.

#pragma once

#include <cmath>
#include <limits>

#include "knnmt/model/layers.hpp"

namespace knnmt {

namespace detail {

template <typename T>
Matrix<T> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

// In-place row softmax; -inf entries become 0.
template <typename T>
void softmax_rows(Matrix<T>& s) {
  for (Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace detail

// ---------------------------------------------------------------- Linear

template <typename T>
void Linear<T>::init(Index in, Index out, Rng& rng) {
  weight = detail::uniform_matrix<T>(in, out, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  bias = Matrix<T>::Zero(1, out);
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) const {
  if (x.cols() != weight.rows())
    throw DimensionError("linear: input width " + std::to_string(x.cols()) + " != " +
                         std::to_string(weight.rows()));
  Matrix<T> y(x.rows(), weight.cols());
  y.noalias() = x * weight;
  y.rowwise() += bias.row(0);
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Matrix<T>& x, const Matrix<T>& dy, Linear* grad) const {
  if (grad) {
    grad->weight.noalias() += x.transpose() * dy;
    grad->bias += dy.colwise().sum();
  }
  Matrix<T> dx(dy.rows(), weight.rows());
  dx.noalias() = dy * weight.transpose();
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
void LayerNorm<T>::init(Index d) {
  gain = Matrix<T>::Ones(1, d);
  bias = Matrix<T>::Zero(1, d);
}

template <typename T>
Matrix<T> LayerNorm<T>::forward(const Matrix<T>& x, Cache* cache) const {
  if (x.cols() != gain.cols()) throw DimensionError("layer norm: width mismatch");
  const ColVector<T> mean = x.rowwise().mean();
  Matrix<T> xc = x.colwise() - mean;
  const ColVector<T> var = xc.array().square().rowwise().mean();
  const ColVector<T> inv = (var.array() + T(kEps)).rsqrt();
  xc.array().colwise() *= inv.array();
  Matrix<T> y = (xc.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xc);
    cache->inv_std = inv;
  }
  return y;
}

template <typename T>
Matrix<T> LayerNorm<T>::backward(const Matrix<T>& dy, const Cache& cache, LayerNorm* grad) const {
  const auto& xhat = cache.xhat;
  if (grad) {
    grad->gain += (dy.array() * xhat.array()).colwise().sum().matrix();
    grad->bias += dy.colwise().sum();
  }
  Matrix<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  const ColVector<T> m1 = dxhat.rowwise().mean();
  const ColVector<T> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Matrix<T> dx = dxhat.colwise() - m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------- Attention

template <typename T>
void Attention<T>::init(Index d, int n_heads, Rng& rng) {
  heads = n_heads;
  q.init(d, d, rng);
  k.init(d, d, rng);
  v.init(d, d, rng);
  o.init(d, d, rng);
}

template <typename T>
Matrix<T> Attention<T>::forward(const Matrix<T>& xq, const Segments& qseg, const Matrix<T>& xkv,
                                const Segments& kseg, bool causal, Cache* cache) const {
  if (qseg.count() != kseg.count()) throw DimensionError("attention: segment count mismatch");
  const Index d = q.weight.cols();
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> Q = q.forward(xq);
  Matrix<T> K = k.forward(xkv);
  Matrix<T> V = v.forward(xkv);
  Matrix<T> O(xq.rows(), d);
  if (cache) cache->probs.clear();
  Matrix<T> S;
  for (Index b = 0; b < qseg.count(); ++b) {
    const Index q0 = qseg.begin(b), qn = qseg.length(b);
    const Index k0 = kseg.begin(b), kn = kseg.length(b);
    if (causal && qn != kn) throw DimensionError("causal attention needs equal lengths");
    for (int h = 0; h < heads; ++h) {
      const Index c0 = h * dh;
      S.noalias() = Q.block(q0, c0, qn, dh) * K.block(k0, c0, kn, dh).transpose();
      S *= scale;
      if (causal)
        for (Index i = 0; i < qn; ++i)
          for (Index j = i + 1; j < kn; ++j) S(i, j) = -std::numeric_limits<T>::infinity();
      detail::softmax_rows(S);
      O.block(q0, c0, qn, dh).noalias() = S * V.block(k0, c0, kn, dh);
      if (cache) cache->probs.push_back(S);
    }
  }
  Matrix<T> y = o.forward(O);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->Q = std::move(Q);
    cache->K = std::move(K);
    cache->V = std::move(V);
    cache->O = std::move(O);
    cache->qseg = qseg;
    cache->kseg = kseg;
  }
  return y;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> Attention<T>::backward(const Matrix<T>& dy, const Cache& c,
                                                       Attention* grad) const {
  const Index d = q.weight.cols();
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Matrix<T> dO = o.backward(c.O, dy, grad ? &grad->o : nullptr);
  Matrix<T> dQ(c.Q.rows(), d), dK(c.K.rows(), d), dV(c.V.rows(), d);
  Matrix<T> dP, dS;
  std::size_t idx = 0;
  for (Index b = 0; b < c.qseg.count(); ++b) {
    const Index q0 = c.qseg.begin(b), qn = c.qseg.length(b);
    const Index k0 = c.kseg.begin(b), kn = c.kseg.length(b);
    for (int h = 0; h < heads; ++h, ++idx) {
      const Index c0 = h * dh;
      const Matrix<T>& P = c.probs[idx];
      const auto dOh = dO.block(q0, c0, qn, dh);
      dV.block(k0, c0, kn, dh).noalias() = P.transpose() * dOh;
      dP.noalias() = dOh * c.V.block(k0, c0, kn, dh).transpose();
      const ColVector<T> rowdot = (dP.array() * P.array()).rowwise().sum();
      dS = P.array() * (dP.array().colwise() - rowdot.array());
      dQ.block(q0, c0, qn, dh).noalias() = (dS * c.K.block(k0, c0, kn, dh)) * scale;
      dK.block(k0, c0, kn, dh).noalias() = (dS.transpose() * c.Q.block(q0, c0, qn, dh)) * scale;
    }
  }
  Matrix<T> dxq = q.backward(c.xq, dQ, grad ? &grad->q : nullptr);
  Matrix<T> dxkv = k.backward(c.xkv, dK, grad ? &grad->k : nullptr);
  dxkv += v.backward(c.xkv, dV, grad ? &grad->v : nullptr);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
void Attention<T>::collect(const std::string& prefix, ParamList<T>& out) {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

// ---------------------------------------------------------------- FeedForward

template <typename T>
void FeedForward<T>::init(Index d, Index d_ff, Rng& rng) {
  fc1.init(d, d_ff, rng);
  fc2.init(d_ff, d, rng);
}

template <typename T>
Matrix<T> FeedForward<T>::forward(const Matrix<T>& x, Cache* cache) const {
  Matrix<T> z = fc1.forward(x);
  Matrix<T> a = z.cwiseMax(T(0));
  Matrix<T> y = fc2.forward(a);
  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->a = std::move(a);
  }
  return y;
}

template <typename T>
Matrix<T> FeedForward<T>::backward(const Matrix<T>& dy, const Cache& c, FeedForward* grad) const {
  Matrix<T> da = fc2.backward(c.a, dy, grad ? &grad->fc2 : nullptr);
  da.array() *= (c.z.array() > T(0)).template cast<T>();
  return fc1.backward(c.x, da, grad ? &grad->fc1 : nullptr);
}

template <typename T>
void FeedForward<T>::collect(const std::string& prefix, ParamList<T>& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------- Adapter

template <typename T>
void Adapter<T>::init(Index d, Index hidden, Rng& rng) {
  ln.init(d);
  w1 = detail::uniform_matrix<T>(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  w2 = Matrix<T>::Zero(hidden, d);
}

template <typename T>
Matrix<T> Adapter<T>::forward(const Matrix<T>& h, Cache* cache) const {
  if (h.cols() != w1.rows() || w1.cols() != w2.rows() || w2.cols() != h.cols())
    throw DimensionError("adapter: parameter shapes do not match the input width");
  typename LayerNorm<T>::Cache lc;
  Matrix<T> normed = ln.forward(h, cache ? &lc : nullptr);
  Matrix<T> z(h.rows(), w1.cols());
  z.noalias() = normed * w1;
  Matrix<T> r = z.cwiseMax(T(0));
  Matrix<T> out = h;
  out.noalias() += r * w2;
  if (cache) {
    cache->ln = std::move(lc);
    cache->normed = std::move(normed);
    cache->z = std::move(z);
    cache->r = std::move(r);
  }
  return out;
}

template <typename T>
Matrix<T> Adapter<T>::backward(const Matrix<T>& dy, const Cache& c, Adapter* grad) const {
  if (grad) grad->w2.noalias() += c.r.transpose() * dy;
  Matrix<T> dz(dy.rows(), w2.rows());
  dz.noalias() = dy * w2.transpose();
  dz.array() *= (c.z.array() > T(0)).template cast<T>();
  if (grad) grad->w1.noalias() += c.normed.transpose() * dz;
  Matrix<T> dn(dy.rows(), w1.rows());
  dn.noalias() = dz * w1.transpose();
  Matrix<T> dx = dy;
  dx += ln.backward(dn, c.ln, grad ? &grad->ln : nullptr);
  return dx;
}

template <typename T>
void Adapter<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln.collect(prefix + ".ln", out);
  out.push_back({prefix + ".w1", &w1});
  out.push_back({prefix + ".w2", &w2});
}

// ---------------------------------------------------------------- EncoderLayer

template <typename T>
void EncoderLayer<T>::init(Index d, int heads, Index d_ff, Rng& rng) {
  ln1.init(d);
  ln2.init(d);
  self_attn.init(d, heads, rng);
  ffn.init(d, d_ff, rng);
}

template <typename T>
Matrix<T> EncoderLayer<T>::forward(const Matrix<T>& x, const Segments& seg, Dropout& drop,
                                   Cache* c) const {
  Matrix<T> a = ln1.forward(x, c ? &c->ln1 : nullptr);
  Matrix<T> s = self_attn.forward(a, seg, a, seg, false, c ? &c->attn : nullptr);
  Matrix<T> m1 = drop.mask<T>(s.rows(), s.cols());
  apply_mask(s, m1);
  Matrix<T> x1 = x + s;
  Matrix<T> b = ln2.forward(x1, c ? &c->ln2 : nullptr);
  Matrix<T> f = ffn.forward(b, c ? &c->ffn : nullptr);
  Matrix<T> m2 = drop.mask<T>(f.rows(), f.cols());
  apply_mask(f, m2);
  x1 += f;
  if (c) {
    c->drop_attn = std::move(m1);
    c->drop_ffn = std::move(m2);
  }
  return x1;
}

template <typename T>
Matrix<T> EncoderLayer<T>::backward(const Matrix<T>& dy, const Cache& c, EncoderLayer* grad) const {
  Matrix<T> df = dy;
  apply_mask(df, c.drop_ffn);
  Matrix<T> dx1 = dy + ln2.backward(ffn.backward(df, c.ffn, grad ? &grad->ffn : nullptr), c.ln2,
                                    grad ? &grad->ln2 : nullptr);
  Matrix<T> ds = dx1;
  apply_mask(ds, c.drop_attn);
  auto [dq, dkv] = self_attn.backward(ds, c.attn, grad ? &grad->self_attn : nullptr);
  dq += dkv;
  dx1 += ln1.backward(dq, c.ln1, grad ? &grad->ln1 : nullptr);
  return dx1;
}

template <typename T>
void EncoderLayer<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln1.collect(prefix + ".ln1", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln2.collect(prefix + ".ln2", out);
  ffn.collect(prefix + ".ffn", out);
}

// ---------------------------------------------------------------- DecoderLayer

template <typename T>
void DecoderLayer<T>::init(Index d, int heads, Index d_ff, Rng& rng) {
  ln1.init(d);
  ln2.init(d);
  ln3.init(d);
  self_attn.init(d, heads, rng);
  cross_attn.init(d, heads, rng);
  ffn.init(d, d_ff, rng);
}

template <typename T>
Matrix<T> DecoderLayer<T>::forward(const Matrix<T>& x, const Segments& seg, const Matrix<T>& memory,
                                   const Segments& mem_seg, Dropout& drop, Cache* c) const {
  Matrix<T> a = ln1.forward(x, c ? &c->ln1 : nullptr);
  Matrix<T> s = self_attn.forward(a, seg, a, seg, true, c ? &c->self_attn : nullptr);
  Matrix<T> m1 = drop.mask<T>(s.rows(), s.cols());
  apply_mask(s, m1);
  Matrix<T> x1 = x + s;
  Matrix<T> b = ln2.forward(x1, c ? &c->ln2 : nullptr);
  Matrix<T> cr = cross_attn.forward(b, seg, memory, mem_seg, false, c ? &c->cross_attn : nullptr);
  Matrix<T> m2 = drop.mask<T>(cr.rows(), cr.cols());
  apply_mask(cr, m2);
  x1 += cr;
  Matrix<T> e = ln3.forward(x1, c ? &c->ln3 : nullptr);
  Matrix<T> f = ffn.forward(e, c ? &c->ffn : nullptr);
  Matrix<T> m3 = drop.mask<T>(f.rows(), f.cols());
  apply_mask(f, m3);
  x1 += f;
  if (c) {
    c->drop_self = std::move(m1);
    c->drop_cross = std::move(m2);
    c->drop_ffn = std::move(m3);
  }
  return x1;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> DecoderLayer<T>::backward(const Matrix<T>& dy, const Cache& c,
                                                          DecoderLayer* grad) const {
  Matrix<T> df = dy;
  apply_mask(df, c.drop_ffn);
  Matrix<T> dx = dy + ln3.backward(ffn.backward(df, c.ffn, grad ? &grad->ffn : nullptr), c.ln3,
                                   grad ? &grad->ln3 : nullptr);
  Matrix<T> dc = dx;
  apply_mask(dc, c.drop_cross);
  auto [dq_cross, dmem] = cross_attn.backward(dc, c.cross_attn, grad ? &grad->cross_attn : nullptr);
  dx += ln2.backward(dq_cross, c.ln2, grad ? &grad->ln2 : nullptr);
  Matrix<T> ds = dx;
  apply_mask(ds, c.drop_self);
  auto [dq, dkv] = self_attn.backward(ds, c.self_attn, grad ? &grad->self_attn : nullptr);
  dq += dkv;
  dx += ln1.backward(dq, c.ln1, grad ? &grad->ln1 : nullptr);
  return {std::move(dx), std::move(dmem)};
}

template <typename T>
void DecoderLayer<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln1.collect(prefix + ".ln1", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln2.collect(prefix + ".ln2", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln3.collect(prefix + ".ln3", out);
  ffn.collect(prefix + ".ffn", out);
}

}  // namespace knnmt
