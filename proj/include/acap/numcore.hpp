// SPDX-License-Identifier: Apache-2.0
//
// Dense layers used by the captioner, each with an explicit cache and an exact
// backward pass. Backward functions accumulate parameter gradients into a
// caller-owned struct of the same shape as the parameters and return the
// gradient with respect to their inputs.
//
// GRU convention (gate order r, z, n; separate input and hidden biases):
//   r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "acap/error.hpp"
#include "acap/random.hpp"

namespace acap::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline void check_shape(bool ok, const char* what) {
  if (!ok) fail(ErrorKind::ShapeMismatch, what);
}

template <class T>
void fill_uniform(Eigen::DenseBase<T>& x, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.derived().data()[i] = static_cast<typename T::Scalar>(rng.uniform(-bound, bound));
  }
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// GRU cell

template <class T>
struct GruCellParams {
  Mat<T> w_ih;  // 3H x I
  Mat<T> w_hh;  // 3H x H
  Vec<T> b_ih;  // 3H
  Vec<T> b_hh;  // 3H

  static GruCellParams zeros(Eigen::Index input, Eigen::Index hidden) {
    return {Mat<T>::Zero(3 * hidden, input), Mat<T>::Zero(3 * hidden, hidden),
            Vec<T>::Zero(3 * hidden), Vec<T>::Zero(3 * hidden)};
  }

  Eigen::Index input_size() const { return w_ih.cols(); }
  Eigen::Index hidden_size() const { return w_hh.cols(); }

  void check() const {
    const auto h = hidden_size();
    check_shape(w_ih.rows() == 3 * h && w_hh.rows() == 3 * h && b_ih.size() == 3 * h &&
                    b_hh.size() == 3 * h,
                "GRU parameter shapes inconsistent");
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w_ih", w_ih);
    f(prefix + ".w_hh", w_hh);
    f(prefix + ".b_ih", b_ih);
    f(prefix + ".b_hh", b_hh);
  }
};

template <class T>
struct GruCache {
  Vec<T> x, h, r, z, n, hn;  // hn = W_hn h + b_hn
};

template <class T>
Vec<T> gru_cell_forward(const GruCellParams<T>& p, const Vec<T>& x, const Vec<T>& h,
                        GruCache<T>* cache = nullptr) {
  const Eigen::Index H = p.hidden_size();
  check_shape(x.size() == p.input_size(), "GRU input size");
  check_shape(h.size() == H, "GRU hidden size");

  const Vec<T> gi = p.w_ih * x + p.b_ih;
  const Vec<T> gh = p.w_hh * h + p.b_hh;
  Vec<T> r = (gi.segment(0, H) + gh.segment(0, H)).unaryExpr([](T v) { return sigmoid(v); });
  Vec<T> z = (gi.segment(H, H) + gh.segment(H, H)).unaryExpr([](T v) { return sigmoid(v); });
  Vec<T> hn = gh.segment(2 * H, H);
  Vec<T> n = (gi.segment(2 * H, H).array() + r.array() * hn.array()).tanh().matrix();
  Vec<T> h_new = ((T(1) - z.array()) * n.array() + z.array() * h.array()).matrix();
  if (cache) {
    cache->x = x;
    cache->h = h;
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->hn = std::move(hn);
  }
  return h_new;
}

template <class T>
struct GruInputGrads {
  Vec<T> dx;
  Vec<T> dh;
};

template <class T>
GruInputGrads<T> gru_cell_backward(const GruCellParams<T>& p, const GruCache<T>& c,
                                   const Vec<T>& dh_new, GruCellParams<T>& grads) {
  const Eigen::Index H = p.hidden_size();
  check_shape(dh_new.size() == H && c.h.size() == H, "GRU backward hidden size");

  const auto dn = (dh_new.array() * (T(1) - c.z.array())).eval();
  const auto dz = (dh_new.array() * (c.h.array() - c.n.array())).eval();
  const auto da_n = (dn * (T(1) - c.n.array().square())).eval();
  const auto da_r = (da_n * c.hn.array() * c.r.array() * (T(1) - c.r.array())).eval();
  const auto da_z = (dz * c.z.array() * (T(1) - c.z.array())).eval();

  Vec<T> dgi(3 * H);
  dgi << da_r.matrix(), da_z.matrix(), da_n.matrix();
  Vec<T> dgh(3 * H);
  dgh << da_r.matrix(), da_z.matrix(), (da_n * c.r.array()).matrix();

  grads.w_ih.noalias() += dgi * c.x.transpose();
  grads.b_ih += dgi;
  grads.w_hh.noalias() += dgh * c.h.transpose();
  grads.b_hh += dgh;

  GruInputGrads<T> out;
  out.dx.noalias() = p.w_ih.transpose() * dgi;
  out.dh = (dh_new.array() * c.z.array()).matrix();
  out.dh.noalias() += p.w_hh.transpose() * dgh;
  return out;
}

// ---------------------------------------------------------------------------
// Affine y = W x + b

template <class T>
struct AffineParams {
  Mat<T> w;  // out x in
  Vec<T> b;  // out

  static AffineParams zeros(Eigen::Index in, Eigen::Index out) {
    return {Mat<T>::Zero(out, in), Vec<T>::Zero(out)};
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

template <class T>
Vec<T> affine_forward(const AffineParams<T>& p, const Vec<T>& x) {
  check_shape(x.size() == p.w.cols() && p.b.size() == p.w.rows(), "affine shapes");
  Vec<T> y = p.b;
  y.noalias() += p.w * x;
  return y;
}

template <class T>
Vec<T> affine_backward(const AffineParams<T>& p, const Vec<T>& x, const Vec<T>& dy,
                       AffineParams<T>& grads) {
  check_shape(dy.size() == p.w.rows() && x.size() == p.w.cols(), "affine backward shapes");
  grads.w.noalias() += dy * x.transpose();
  grads.b += dy;
  return p.w.transpose() * dy;
}

// ---------------------------------------------------------------------------
// Embedding lookup; table is V x E, one row per token.

template <class T>
Vec<T> embedding_forward(const Mat<T>& table, int id) {
  if (id < 0 || id >= table.rows()) fail(ErrorKind::TargetOutOfRange, "embedding id out of range");
  return table.row(id).transpose();
}

template <class T>
void embedding_backward(Mat<T>& grad_table, int id, const Vec<T>& dy) {
  check_shape(dy.size() == grad_table.cols(), "embedding backward width");
  grad_table.row(id) += dy.transpose();
}

// ---------------------------------------------------------------------------
// Mean pooling over time steps.

template <class T>
Vec<T> mean_pool_forward(std::span<const Vec<T>> steps) {
  if (steps.empty()) fail(ErrorKind::EmptySequence, "mean pooling over zero steps");
  Vec<T> acc = steps.front();
  for (std::size_t t = 1; t < steps.size(); ++t) {
    check_shape(steps[t].size() == acc.size(), "mean pool step width");
    acc += steps[t];
  }
  return acc / static_cast<T>(steps.size());
}

/// Gradient reaching each of the `count` pooled steps.
template <class T>
Vec<T> mean_pool_backward(const Vec<T>& dy, std::size_t count) {
  if (count == 0) fail(ErrorKind::EmptySequence, "mean pooling over zero steps");
  return dy / static_cast<T>(count);
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, -log softmax(logits)[target].

template <class T>
struct SoftmaxCe {
  T loss;
  Vec<T> probs;
};

template <class T>
SoftmaxCe<T> softmax_ce_forward(const Vec<T>& logits, int target) {
  if (target < 0 || target >= logits.size()) {
    fail(ErrorKind::TargetOutOfRange, "target " + std::to_string(target) + " with " +
                                          std::to_string(logits.size()) + " classes");
  }
  const T m = logits.maxCoeff();
  const Vec<T> shifted = logits.array() - m;
  const T log_z = std::log(shifted.array().exp().sum());
  SoftmaxCe<T> out;
  out.loss = log_z - shifted[target];
  out.probs = (shifted.array() - log_z).exp().matrix();
  return out;
}

/// d loss / d logits = softmax(logits) - onehot(target), scaled by dloss.
template <class T>
Vec<T> softmax_ce_backward(const SoftmaxCe<T>& cache, int target, T dloss = T(1)) {
  Vec<T> d = cache.probs;
  d[target] -= T(1);
  return d * dloss;
}

// ---------------------------------------------------------------------------
// Cosine dissimilarity 1 - a.b / max(|a||b|, eps). `b` is a fixed reference.

template <class T>
struct CosineCache {
  T loss;
  T dot;
  T norm_a;
  T norm_b;
  T denom;
  bool clamped;  // denominator hit eps
};

template <class T>
CosineCache<T> cosine_dissim_forward(const Vec<T>& a, const Vec<T>& b, T eps = T(1e-8)) {
  if (a.size() != b.size()) fail(ErrorKind::DimensionMismatch, "cosine operands differ in size");
  CosineCache<T> c;
  c.dot = a.dot(b);
  c.norm_a = a.norm();
  c.norm_b = b.norm();
  const T prod = c.norm_a * c.norm_b;
  c.clamped = !(prod > eps);
  c.denom = c.clamped ? eps : prod;
  c.loss = T(1) - c.dot / c.denom;
  return c;
}

template <class T>
Vec<T> cosine_dissim_backward(const CosineCache<T>& c, const Vec<T>& a, const Vec<T>& b,
                              T dloss = T(1)) {
  if (c.clamped) return b * (-dloss / c.denom);
  // d/da [a.b / (|a||b|)] = b/(|a||b|) - (a.b) a / (|a|^3 |b|)
  const T inv = T(1) / c.denom;
  return (b * inv - a * (c.dot * inv / (c.norm_a * c.norm_a))) * (-dloss);
}

}  // namespace acap::nn
