#pragma once

// Dense kernels with explicit forward/backward passes. Every op is templated
// on the scalar type so the gradient-check harness can run in double while
// training runs in float.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probekit/error.hpp"

namespace probekit::tensor {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major f32 matrix used for all stored parameters and activations.
using Tensor2D = Matrix<float>;

template <class T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

template <class T>
void require_finite(const Matrix<T>& m, std::string_view where) {
  if (!m.allFinite()) throw NumericError("non-finite value in " + std::string(where));
}

inline void require_shape(bool ok, std::string_view what) {
  if (!ok) throw DataError("shape mismatch: " + std::string(what));
}

// ---------------------------------------------------------------------------
// Linear: y = xW + b, with b stored as a 1×k row.

template <class T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  require_shape(x.cols() == w.rows(), "linear input cols != weight rows");
  require_shape(b.rows() == 1 && b.cols() == w.cols(), "linear bias must be 1 x out");
  Matrix<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <class T>
struct LinearGrads {
  Matrix<T> dx;
  Matrix<T> dw;
  Matrix<T> db;
};

template <class T>
LinearGrads<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy) {
  require_shape(dy.rows() == x.rows() && dy.cols() == w.cols(), "linear upstream gradient");
  LinearGrads<T> g;
  g.dx = dy * w.transpose();
  g.dw = x.transpose() * dy;
  g.db = dy.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// ReLU. The subgradient at exactly zero is 0.

template <class T>
Matrix<T> relu(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

template <class T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  require_shape(x.rows() == dy.rows() && x.cols() == dy.cols(), "relu upstream gradient");
  return (x.array() > T(0)).select(dy, Matrix<T>::Zero(x.rows(), x.cols()));
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over rows, mean-reduced.

template <class T>
struct LossResult {
  double loss = 0.0;
  Matrix<T> grad;
};

/// Row-wise log-softmax with max subtraction.
template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(double(logits(r, c) - mx));
    const T lse = mx + T(std::log(sum));
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <class T>
LossResult<T> softmax_xent(const Matrix<T>& logits, std::span<const int> gold) {
  const auto n = logits.rows();
  const auto k = logits.cols();
  if (k < 2) throw DataError("softmax_xent needs at least 2 classes");
  if (static_cast<Eigen::Index>(gold.size()) != n) throw DataError("softmax_xent: gold count != rows");
  LossResult<T> res;
  res.grad.resize(n, k);
  if (n == 0) return res;
  const Matrix<T> logp = log_softmax_rows(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int g = gold[static_cast<std::size_t>(r)];
    if (g < 0 || g >= k) throw DataError("softmax_xent: gold label " + std::to_string(g) + " out of range");
    total -= double(logp(r, g));
    res.grad.row(r) = logp.row(r).array().exp();
    res.grad(r, g) -= T(1);
  }
  res.grad /= T(n);
  res.loss = total / double(n);
  return res;
}

// ---------------------------------------------------------------------------
// Mean squared error over an n×1 prediction column.

template <class T>
LossResult<T> mse(const Matrix<T>& pred, std::span<const double> gold) {
  if (static_cast<Eigen::Index>(gold.size()) != pred.rows() || pred.cols() != 1)
    throw DataError("mse: prediction must be n x 1 matching gold");
  LossResult<T> res;
  res.grad.resize(pred.rows(), 1);
  const auto n = pred.rows();
  if (n == 0) return res;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diff = double(pred(i, 0)) - gold[static_cast<std::size_t>(i)];
    total += diff * diff;
    res.grad(i, 0) = T(2.0 * diff / double(n));
  }
  res.loss = total / double(n);
  return res;
}

// ---------------------------------------------------------------------------
// LSTM cell. Gate columns are laid out [i | f | g | o], each `hidden` wide.
//   i,f,o = sigmoid, g = tanh, c = f*c_prev + i*g, h = o*tanh(c)

// The step functions accept any parameter/gradient type exposing matrices
// named wx, wh and b, so callers can pass owning structs or reference views.
template <class T>
struct LstmParams {
  Matrix<T> wx;  // in × 4H
  Matrix<T> wh;  // H × 4H
  Matrix<T> b;   // 1 × 4H
};

template <class T>
struct LstmView {
  const Matrix<T>& wx;
  const Matrix<T>& wh;
  const Matrix<T>& b;
};

template <class T>
struct LstmGradView {
  Matrix<T>& wx;
  Matrix<T>& wh;
  Matrix<T>& b;
};

template <class T>
struct LstmGrads {
  Matrix<T> wx, wh, b;
  void zero_like(const LstmParams<T>& p) {
    wx = Matrix<T>::Zero(p.wx.rows(), p.wx.cols());
    wh = Matrix<T>::Zero(p.wh.rows(), p.wh.cols());
    b = Matrix<T>::Zero(1, p.b.cols());
  }
};

template <class T>
struct LstmStepCache {
  Matrix<T> x, h_prev, c_prev;
  Matrix<T> i, f, g, o;
  Matrix<T> c, tanh_c, h;
};

template <class T, class P>
LstmStepCache<T> lstm_step(const Matrix<T>& x, const Matrix<T>& h_prev, const Matrix<T>& c_prev, const P& p) {
  const Eigen::Index hid = p.wh.rows();
  require_shape(p.wx.cols() == 4 * hid && p.wh.cols() == 4 * hid && p.b.cols() == 4 * hid,
                "lstm gate width");
  require_shape(x.cols() == p.wx.rows(), "lstm input width");
  require_shape(h_prev.cols() == hid && c_prev.cols() == hid && h_prev.rows() == x.rows() &&
                    c_prev.rows() == x.rows(),
                "lstm state shape");
  LstmStepCache<T> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  Matrix<T> z = x * p.wx + h_prev * p.wh;
  z.rowwise() += p.b.row(0);
  auto sigmoid = [](const auto& a) -> Matrix<T> { return (T(1) / (T(1) + (-a.array()).exp())).matrix(); };
  s.i = sigmoid(z.middleCols(0, hid));
  s.f = sigmoid(z.middleCols(hid, hid));
  s.g = z.middleCols(2 * hid, hid).array().tanh().matrix();
  s.o = sigmoid(z.middleCols(3 * hid, hid));
  s.c = (s.f.array() * c_prev.array() + s.i.array() * s.g.array()).matrix();
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = (s.o.array() * s.tanh_c.array()).matrix();
  return s;
}

template <class T>
struct LstmStepGrads {
  Matrix<T> dx, dh_prev, dc_prev;
};

/// Backward through one step; parameter gradients are accumulated into `grads`.
template <class T, class P, class G>
LstmStepGrads<T> lstm_step_backward(const LstmStepCache<T>& s, const Matrix<T>& dh, const Matrix<T>& dc_in,
                                    const P& p, G&& grads) {
  const Eigen::Index hid = p.wh.rows();
  const Eigen::Index n = s.x.rows();
  Matrix<T> dc = (dc_in.array() + dh.array() * s.o.array() * (T(1) - s.tanh_c.array().square())).matrix();
  Matrix<T> dz(n, 4 * hid);
  dz.middleCols(0, hid) = (dc.array() * s.g.array() * s.i.array() * (T(1) - s.i.array())).matrix();
  dz.middleCols(hid, hid) = (dc.array() * s.c_prev.array() * s.f.array() * (T(1) - s.f.array())).matrix();
  dz.middleCols(2 * hid, hid) = (dc.array() * s.i.array() * (T(1) - s.g.array().square())).matrix();
  dz.middleCols(3 * hid, hid) =
      (dh.array() * s.tanh_c.array() * s.o.array() * (T(1) - s.o.array())).matrix();
  grads.wx.noalias() += s.x.transpose() * dz;
  grads.wh.noalias() += s.h_prev.transpose() * dz;
  grads.b += dz.colwise().sum();
  LstmStepGrads<T> out;
  out.dx = dz * p.wx.transpose();
  out.dh_prev = dz * p.wh.transpose();
  out.dc_prev = (dc.array() * s.f.array()).matrix();
  return out;
}

/// Runs a full sequence from zero state. `xs[t]` is the batch at step t.
template <class T, class P>
std::vector<LstmStepCache<T>> lstm_sequence_forward(std::span<const Matrix<T>> xs, const P& p) {
  std::vector<LstmStepCache<T>> caches;
  caches.reserve(xs.size());
  if (xs.empty()) return caches;
  const Eigen::Index n = xs.front().rows();
  Matrix<T> h = Matrix<T>::Zero(n, p.wh.rows());
  Matrix<T> c = Matrix<T>::Zero(n, p.wh.rows());
  for (const auto& x : xs) {
    caches.push_back(lstm_step(x, h, c, p));
    h = caches.back().h;
    c = caches.back().c;
  }
  return caches;
}

/// Backpropagation through time. `dhs[t]` is dL/dh_t from outside the
/// recurrence; returns dL/dx_t for every step.
template <class T, class P, class G>
std::vector<Matrix<T>> lstm_sequence_backward(std::span<const LstmStepCache<T>> caches,
                                              std::span<const Matrix<T>> dhs, const P& p, G&& grads) {
  std::vector<Matrix<T>> dxs(caches.size());
  if (caches.empty()) return dxs;
  require_shape(dhs.size() == caches.size(), "lstm upstream gradient length");
  const Eigen::Index n = caches.front().x.rows();
  Matrix<T> dh_next = Matrix<T>::Zero(n, p.wh.rows());
  Matrix<T> dc_next = Matrix<T>::Zero(n, p.wh.rows());
  for (std::size_t t = caches.size(); t-- > 0;) {
    Matrix<T> dh = dhs[t] + dh_next;
    auto g = lstm_step_backward(caches[t], dh, dc_next, p, grads);
    dxs[t] = std::move(g.dx);
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
  }
  return dxs;
}

// ---------------------------------------------------------------------------
// Scalar mix: out = gamma * sum_l softmax(s)_l * h_l

template <class T>
Matrix<T> softmax_row(const Matrix<T>& s) {
  const T mx = s.maxCoeff();
  Matrix<T> e = (s.array() - mx).exp().matrix();
  return e / e.sum();
}

template <class T>
Matrix<T> scalar_mix_forward(std::span<const Matrix<T>> layers, const Matrix<T>& s, T gamma) {
  if (layers.empty() || s.rows() != 1 || static_cast<std::size_t>(s.cols()) != layers.size())
    throw DataError("scalar_mix: " + std::to_string(layers.size()) + " layers but " +
                    std::to_string(s.cols()) + " mixing weights");
  const Matrix<T> w = softmax_row(s);
  Matrix<T> out = Matrix<T>::Zero(layers[0].rows(), layers[0].cols());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require_shape(layers[l].rows() == out.rows() && layers[l].cols() == out.cols(), "scalar_mix layer shape");
    out += w(0, static_cast<Eigen::Index>(l)) * layers[l];
  }
  return gamma * out;
}

template <class T>
struct ScalarMixGrads {
  Matrix<T> ds;
  T dgamma = T(0);
  std::vector<Matrix<T>> dlayers;
};

template <class T>
ScalarMixGrads<T> scalar_mix_backward(std::span<const Matrix<T>> layers, const Matrix<T>& s, T gamma,
                                      const Matrix<T>& dout) {
  const auto count = static_cast<Eigen::Index>(layers.size());
  if (s.cols() != count) throw DataError("scalar_mix: layer count mismatch");
  const Matrix<T> w = softmax_row(s);
  ScalarMixGrads<T> g;
  Matrix<T> dw(1, count);
  T mixed_dot = T(0);
  g.dlayers.reserve(layers.size());
  for (Eigen::Index l = 0; l < count; ++l) {
    const T dot = (dout.array() * layers[static_cast<std::size_t>(l)].array()).sum();
    dw(0, l) = gamma * dot;
    mixed_dot += w(0, l) * dot;
    g.dlayers.push_back(gamma * w(0, l) * dout);
  }
  g.dgamma = mixed_dot;
  const T weighted = (w.array() * dw.array()).sum();
  g.ds = (w.array() * (dw.array() - weighted)).matrix();
  return g;
}

}  // namespace probekit::tensor
