#pragma once

// Small dense NN kernels used by the detector: CHW tensors, im2col
// convolution, fully connected layers, bilinear region pooling, softmax
// cross-entropy and smooth L1. Templated on the scalar so the same code runs
// in float for training and in double for finite-difference checks.

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cst/rng.hpp"

namespace cst {

template <typename S>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<S> data;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, S(0)) {}

  S& at(int ch, int y, int x) {
    return data[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  S at(int ch, int y, int x) const {
    return data[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), S(0)); }
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct ConvLayer {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  std::vector<S> w;   // [out_c][in_c*k*k]
  std::vector<S> b;   // [out_c]
  std::vector<S> gw, gb;

  void configure(int in_c_, int out_c_, int k_, int stride_, int pad_) {
    in_c = in_c_;
    out_c = out_c_;
    k = k_;
    stride = stride_;
    pad = pad_;
    w.assign(static_cast<size_t>(out_c) * in_c * k * k, S(0));
    b.assign(out_c, S(0));
    gw.assign(w.size(), S(0));
    gb.assign(b.size(), S(0));
  }

  void init_he(Rng& rng) {
    const double scale = std::sqrt(2.0 / (in_c * k * k));
    for (auto& v : w) v = static_cast<S>(rng.normal() * scale);
    std::fill(b.begin(), b.end(), S(0));
  }

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int wd) const { return (wd + 2 * pad - k) / stride + 1; }

  void im2col(const Tensor3<S>& in, std::vector<S>& cols) const {
    const int oh = out_h(in.h), ow = out_w(in.w);
    const int K = in_c * k * k;
    const size_t L = static_cast<size_t>(oh) * ow;
    cols.assign(static_cast<size_t>(K) * L, S(0));
    for (int ci = 0; ci < in_c; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int row = (ci * k + ky) * k + kx;
          S* dst = cols.data() + static_cast<size_t>(row) * L;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            const S* src = in.data.data() +
                           (static_cast<size_t>(ci) * in.h + iy) * in.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= in.w) continue;
              dst[static_cast<size_t>(oy) * ow + ox] = src[ix];
            }
          }
        }
      }
    }
  }

  Tensor3<S> forward(const Tensor3<S>& in) const {
    assert(in.c == in_c);
    const int oh = out_h(in.h), ow = out_w(in.w);
    const int K = in_c * k * k;
    const size_t L = static_cast<size_t>(oh) * ow;
    std::vector<S> cols;
    im2col(in, cols);
    Tensor3<S> out(out_c, oh, ow);
    Eigen::Map<const RowMat<S>> Wm(w.data(), out_c, K);
    Eigen::Map<const RowMat<S>> Mm(cols.data(), K, static_cast<Eigen::Index>(L));
    Eigen::Map<RowMat<S>> Om(out.data.data(), out_c, static_cast<Eigen::Index>(L));
    Om.noalias() = Wm * Mm;
    for (int oc = 0; oc < out_c; ++oc)
      Om.row(oc).array() += b[oc];
    return out;
  }

  // Accumulates gw/gb, returns grad wrt the layer input.
  Tensor3<S> backward(const Tensor3<S>& in, const Tensor3<S>& gout) {
    const int oh = gout.h, ow = gout.w;
    const int K = in_c * k * k;
    const size_t L = static_cast<size_t>(oh) * ow;
    std::vector<S> cols;
    im2col(in, cols);
    Eigen::Map<const RowMat<S>> Gm(gout.data.data(), out_c,
                                   static_cast<Eigen::Index>(L));
    Eigen::Map<const RowMat<S>> Mm(cols.data(), K, static_cast<Eigen::Index>(L));
    Eigen::Map<RowMat<S>> GW(gw.data(), out_c, K);
    GW.noalias() += Gm * Mm.transpose();
    for (int oc = 0; oc < out_c; ++oc) gb[oc] += Gm.row(oc).sum();

    std::vector<S> gcols(static_cast<size_t>(K) * L);
    Eigen::Map<const RowMat<S>> Wm(w.data(), out_c, K);
    Eigen::Map<RowMat<S>> GC(gcols.data(), K, static_cast<Eigen::Index>(L));
    GC.noalias() = Wm.transpose() * Gm;

    Tensor3<S> gin(in.c, in.h, in.w);
    for (int ci = 0; ci < in_c; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int row = (ci * k + ky) * k + kx;
          const S* src = gcols.data() + static_cast<size_t>(row) * L;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            S* dst = gin.data.data() +
                     (static_cast<size_t>(ci) * in.h + iy) * in.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= in.w) continue;
              dst[ix] += src[static_cast<size_t>(oy) * ow + ox];
            }
          }
        }
      }
    }
    return gin;
  }
};

template <typename S>
struct FcLayer {
  int in_n = 0, out_n = 0;
  std::vector<S> w;  // [out_n][in_n]
  std::vector<S> b;
  std::vector<S> gw, gb;

  void configure(int in_n_, int out_n_) {
    in_n = in_n_;
    out_n = out_n_;
    w.assign(static_cast<size_t>(out_n) * in_n, S(0));
    b.assign(out_n, S(0));
    gw.assign(w.size(), S(0));
    gb.assign(b.size(), S(0));
  }

  void init_he(Rng& rng) {
    const double scale = std::sqrt(2.0 / in_n);
    for (auto& v : w) v = static_cast<S>(rng.normal() * scale);
    std::fill(b.begin(), b.end(), S(0));
  }

  void forward(const S* in, S* out) const {
    Eigen::Map<const RowMat<S>> Wm(w.data(), out_n, in_n);
    Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> x(in, in_n);
    Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>> y(out, out_n);
    y.noalias() = Wm * x;
    for (int i = 0; i < out_n; ++i) y[i] += b[i];
  }

  // Accumulates gw/gb, adds grad into gin.
  void backward(const S* in, const S* gout, S* gin) {
    Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> x(in, in_n);
    Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> gy(gout, out_n);
    Eigen::Map<RowMat<S>> GW(gw.data(), out_n, in_n);
    GW.noalias() += gy * x.transpose();
    for (int i = 0; i < out_n; ++i) gb[i] += gout[i];
    if (gin) {
      Eigen::Map<const RowMat<S>> Wm(w.data(), out_n, in_n);
      Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>> gx(gin, in_n);
      gx.noalias() += Wm.transpose() * gy;
    }
  }
};

template <typename S>
void relu_inplace(Tensor3<S>& t) {
  for (auto& v : t.data)
    if (v < S(0)) v = S(0);
}

template <typename S>
void relu_backward_inplace(const Tensor3<S>& out, Tensor3<S>& gout) {
  for (size_t i = 0; i < out.data.size(); ++i)
    if (out.data[i] <= S(0)) gout.data[i] = S(0);
}

template <typename S>
void relu_vec_inplace(std::vector<S>& v) {
  for (auto& x : v)
    if (x < S(0)) x = S(0);
}

template <typename S>
void relu_vec_backward_inplace(const std::vector<S>& out, std::vector<S>& gout) {
  for (size_t i = 0; i < out.size(); ++i)
    if (out[i] <= S(0)) gout[i] = S(0);
}

// Numerically stable softmax.
template <typename S>
void softmax(const S* logits, int n, S* probs) {
  S m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  S sum = S(0);
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= sum;
}

// Weighted softmax cross-entropy: loss = -weight*log p_target. Accumulates
// weight*(p - onehot) into dlogits when non-null. With focal=true the term is
// -weight*(1-p_t)^gamma*log p_t and the gradient follows the chain rule.
template <typename S>
S softmax_ce(const S* logits, int n, int target, S weight, S* dlogits,
             bool focal = false, S gamma = S(2)) {
  assert(target >= 0 && target < n);
  std::vector<S> p(n);
  softmax(logits, n, p.data());
  const S pt = std::max(p[target], S(1e-12));
  const S logpt = std::log(pt);
  S loss;
  if (!focal) {
    loss = -weight * logpt;
    if (dlogits) {
      for (int k = 0; k < n; ++k)
        dlogits[k] += weight * (p[k] - (k == target ? S(1) : S(0)));
    }
  } else {
    const S one_m = S(1) - pt;
    const S mod = std::pow(one_m, gamma);
    loss = -weight * mod * logpt;
    if (dlogits) {
      // d/dz_k of -(1-pt)^g log pt  =
      //   [(g (1-pt)^(g-1) pt log pt) - (1-pt)^g] * (delta_tk - p_k) * (-1)
      const S common =
          gamma * std::pow(one_m, gamma - S(1)) * pt * logpt - mod;
      for (int k = 0; k < n; ++k)
        dlogits[k] += weight * common * ((k == target ? S(1) : S(0)) - p[k]);
    }
  }
  return loss;
}

// Huber / smooth L1 on one residual. Accumulates d loss / d pred into dpred.
template <typename S>
S smooth_l1(S pred, S target, S beta, S* dpred) {
  const S d = pred - target;
  const S ad = std::abs(d);
  S loss, g;
  if (ad < beta) {
    loss = S(0.5) * d * d / beta;
    g = d / beta;
  } else {
    loss = ad - S(0.5) * beta;
    g = d > S(0) ? S(1) : S(-1);
  }
  if (dpred) *dpred += g;
  return loss;
}

// Bilinear sample of feature map channel plane at continuous (fx, fy), border
// clamped. Used by region pooling; weights reported for the backward pass.
struct BilinearTaps {
  int x0, x1, y0, y1;
  double w00, w01, w10, w11;  // (y,x) order: w[yi][xi]
};

inline BilinearTaps bilinear_taps(double fx, double fy, int w, int h) {
  fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
  fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
  BilinearTaps t;
  t.x0 = static_cast<int>(std::floor(fx));
  t.y0 = static_cast<int>(std::floor(fy));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  const double ax = fx - t.x0;
  const double ay = fy - t.y0;
  t.w00 = (1 - ay) * (1 - ax);
  t.w01 = (1 - ay) * ax;
  t.w10 = ay * (1 - ax);
  t.w11 = ay * ax;
  return t;
}

}  // namespace cst
