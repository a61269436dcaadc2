#pragma once

#include <cassert>
#include <cmath>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"

namespace am::nn {

enum class Init { HeWeight, Bias, Gamma, Beta, Zero };

struct Param {
  std::string name;
  std::vector<int> shape;
  int fan_in = 1;
  Init init = Init::HeWeight;
  std::vector<double> v, g;

  Param() = default;
  Param(std::string name_, std::vector<int> shape_, Init init_, int fan_in_ = 1)
      : name(std::move(name_)), shape(std::move(shape_)), fan_in(fan_in_), init(init_) {
    std::size_t n = 1;
    for (int d : shape) n *= std::size_t(d);
    v.assign(n, 0.0);
    g.assign(n, 0.0);
  }

  std::size_t size() const { return v.size(); }
  void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

using ParamRefs = std::vector<Param*>;

// Default initialization; `randomize_all` perturbs every parameter (including
// the normally zero-initialized output layers) around a generic point, which
// keeps finite-difference checks away from ReLU kinks.
inline void init_params(const ParamRefs& params, std::uint64_t seed, bool randomize_all = false) {
  Rng rng(seed ^ 0xa5a5a5a55a5a5a5aULL);
  for (Param* p : params) {
    Rng r = rng.sub(std::hash<std::string>{}(p->name));
    switch (p->init) {
      case Init::HeWeight: {
        double s = std::sqrt(2.0 / std::max(1, p->fan_in));
        for (auto& x : p->v) x = r.gaussian() * s;
        break;
      }
      case Init::Zero:
        if (randomize_all) {
          double s = std::sqrt(2.0 / std::max(1, p->fan_in));
          for (auto& x : p->v) x = r.gaussian() * s;
        } else {
          for (auto& x : p->v) x = 0.0;
        }
        break;
      case Init::Bias:
      case Init::Beta:
        for (auto& x : p->v) x = randomize_all ? 0.05 * r.gaussian() : 0.0;
        break;
      case Init::Gamma:
        for (auto& x : p->v) x = randomize_all ? 1.0 + 0.1 * r.gaussian() : 1.0;
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2d {
  int in_c = 0, out_c = 0, kh = 0, kw = 0, stride = 1;
  int pt = 0, pl = 0, pb = 0, pr = 0;
  Param w, b;  // w layout: [out_c][kh][kw][in_c]

  Conv2d() = default;

  // Symmetric padding constructor; for a 4x4 kernel use make_even_aligned.
  Conv2d(const std::string& name, int in_c_, int out_c_, int k, int stride_, int pad,
         Init w_init = Init::HeWeight)
      : Conv2d(name, in_c_, out_c_, k, k, stride_, pad, pad, pad, pad, w_init) {}

  Conv2d(const std::string& name, int in_c_, int out_c_, int kh_, int kw_, int stride_, int pt_,
         int pl_, int pb_, int pr_, Init w_init = Init::HeWeight)
      : in_c(in_c_), out_c(out_c_), kh(kh_), kw(kw_), stride(stride_), pt(pt_), pl(pl_), pb(pb_),
        pr(pr_),
        w(name + ".w", {out_c_, kh_, kw_, in_c_}, w_init, kh_ * kw_ * in_c_),
        b(name + ".b", {out_c_}, Init::Bias) {}

  // Output grid aligned so that a 4x4 kernel at (r,c) is centered on the
  // corner between feature cells (r,c) and (r+1,c+1).
  static Conv2d make_even_aligned(const std::string& name, int in_c, int out_c, int k,
                                  Init w_init = Init::HeWeight) {
    return Conv2d(name, in_c, out_c, k, k, 1, k / 2 - 1, k / 2 - 1, k / 2, k / 2, w_init);
  }

  int out_h(int h) const { return (h + pt + pb - kh) / stride + 1; }
  int out_w(int wd) const { return (wd + pl + pr - kw) / stride + 1; }

  Tensor forward(const Tensor& x) const {
    assert(x.c == in_c);
    Tensor y(out_h(x.h), out_w(x.w), out_c);
    std::vector<double> acc(static_cast<std::size_t>(out_c), 0.0);
    for (int oy = 0; oy < y.h; ++oy) {
      for (int ox = 0; ox < y.w; ++ox) {
        for (int oc = 0; oc < out_c; ++oc) acc[oc] = b.v[oc];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pt + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pl + kx;
            if (ix < 0 || ix >= x.w) continue;
            const double* xr = &x.v[(std::size_t(iy) * x.w + ix) * in_c];
            const double* wr = &w.v[std::size_t((0 * kh + ky) * kw + kx) * in_c];
            std::size_t wstep = std::size_t(kh) * kw * in_c;
            for (int oc = 0; oc < out_c; ++oc) {
              const double* wp = wr + std::size_t(oc) * wstep;
              double s = 0.0;
              for (int ic = 0; ic < in_c; ++ic) s += xr[ic] * wp[ic];
              acc[oc] += s;
            }
          }
        }
        double* yr = &y.v[(std::size_t(oy) * y.w + ox) * out_c];
        for (int oc = 0; oc < out_c; ++oc) yr[oc] = acc[oc];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true) {
    Tensor dx = need_dx ? Tensor(x.h, x.w, x.c) : Tensor();
    std::size_t wstep = std::size_t(kh) * kw * in_c;
    for (int oy = 0; oy < dy.h; ++oy) {
      for (int ox = 0; ox < dy.w; ++ox) {
        const double* dyr = &dy.v[(std::size_t(oy) * dy.w + ox) * out_c];
        for (int oc = 0; oc < out_c; ++oc) b.g[oc] += dyr[oc];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pt + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pl + kx;
            if (ix < 0 || ix >= x.w) continue;
            const double* xr = &x.v[(std::size_t(iy) * x.w + ix) * in_c];
            double* dxr = need_dx ? &dx.v[(std::size_t(iy) * x.w + ix) * in_c] : nullptr;
            for (int oc = 0; oc < out_c; ++oc) {
              double d = dyr[oc];
              if (d == 0.0) continue;
              double* gw = &w.g[std::size_t(oc) * wstep + std::size_t(ky * kw + kx) * in_c];
              const double* wp = &w.v[std::size_t(oc) * wstep + std::size_t(ky * kw + kx) * in_c];
              for (int ic = 0; ic < in_c; ++ic) {
                gw[ic] += d * xr[ic];
                if (need_dx) dxr[ic] += d * wp[ic];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  void collect(ParamRefs& ps) {
    ps.push_back(&w);
    ps.push_back(&b);
  }
};

// Transposed convolution with kernel 2, stride 2: exact x2 upsampling where
// each output cell receives exactly one input cell.
struct Deconv2x {
  int in_c = 0, out_c = 0;
  Param w, b;  // w layout: [out_c][2][2][in_c]

  Deconv2x() = default;
  Deconv2x(const std::string& name, int in_c_, int out_c_)
      : in_c(in_c_), out_c(out_c_), w(name + ".w", {out_c_, 2, 2, in_c_}, Init::HeWeight, in_c_),
        b(name + ".b", {out_c_}, Init::Bias) {}

  Tensor forward(const Tensor& x) const {
    Tensor y(x.h * 2, x.w * 2, out_c);
    std::size_t wstep = std::size_t(4) * in_c;
    for (int iy = 0; iy < x.h; ++iy)
      for (int ix = 0; ix < x.w; ++ix) {
        const double* xr = &x.v[(std::size_t(iy) * x.w + ix) * in_c];
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            double* yr = &y.v[(std::size_t(iy * 2 + ky) * y.w + (ix * 2 + kx)) * out_c];
            for (int oc = 0; oc < out_c; ++oc) {
              const double* wp = &w.v[std::size_t(oc) * wstep + std::size_t(ky * 2 + kx) * in_c];
              double s = b.v[oc];
              for (int ic = 0; ic < in_c; ++ic) s += xr[ic] * wp[ic];
              yr[oc] = s;
            }
          }
      }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true) {
    Tensor dx = need_dx ? Tensor(x.h, x.w, x.c) : Tensor();
    std::size_t wstep = std::size_t(4) * in_c;
    for (int iy = 0; iy < x.h; ++iy)
      for (int ix = 0; ix < x.w; ++ix) {
        const double* xr = &x.v[(std::size_t(iy) * x.w + ix) * in_c];
        double* dxr = need_dx ? &dx.v[(std::size_t(iy) * x.w + ix) * in_c] : nullptr;
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            const double* dyr = &dy.v[(std::size_t(iy * 2 + ky) * dy.w + (ix * 2 + kx)) * out_c];
            for (int oc = 0; oc < out_c; ++oc) {
              double d = dyr[oc];
              b.g[oc] += d;
              double* gw = &w.g[std::size_t(oc) * wstep + std::size_t(ky * 2 + kx) * in_c];
              const double* wp = &w.v[std::size_t(oc) * wstep + std::size_t(ky * 2 + kx) * in_c];
              for (int ic = 0; ic < in_c; ++ic) {
                gw[ic] += d * xr[ic];
                if (need_dx) dxr[ic] += d * wp[ic];
              }
            }
          }
      }
    return dx;
  }

  void collect(ParamRefs& ps) {
    ps.push_back(&w);
    ps.push_back(&b);
  }
};

// Per-channel normalization with running statistics. The statistics are
// buffers, never part of the gradient: activations are always normalized with
// the current running values ("frozen" form), and the buffers are refreshed
// from batch moments outside the backward pass.
struct Norm {
  int c = 0;
  double eps = 1e-5;
  Param gamma, beta;
  std::vector<double> mean, var;  // buffers, checkpointed

  Norm() = default;
  explicit Norm(const std::string& name, int c_)
      : c(c_), gamma(name + ".gamma", {c_}, Init::Gamma), beta(name + ".beta", {c_}, Init::Beta),
        mean(c_, 0.0), var(c_, 1.0) {}

  Tensor forward(const Tensor& x) const {
    Tensor y(x.h, x.w, x.c);
    std::vector<double> scale(c), shift(c);
    for (int ch = 0; ch < c; ++ch) {
      scale[ch] = gamma.v[ch] / std::sqrt(var[ch] + eps);
      shift[ch] = beta.v[ch] - mean[ch] * scale[ch];
    }
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      int ch = int(i % c);
      y.v[i] = x.v[i] * scale[ch] + shift[ch];
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.h, x.w, x.c);
    std::vector<double> inv(c);
    for (int ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      int ch = int(i % c);
      double xn = (x.v[i] - mean[ch]) * inv[ch];
      gamma.g[ch] += dy.v[i] * xn;
      beta.g[ch] += dy.v[i];
      dx.v[i] = dy.v[i] * gamma.v[ch] * inv[ch];
    }
    return dx;
  }

  void update_stats(const Tensor& x, double momentum) {
    std::size_t n = x.v.size() / c;
    if (n == 0) return;
    for (int ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t i = ch; i < x.v.size(); i += c) m += x.v[i];
      m /= double(n);
      double s = 0.0;
      for (std::size_t i = ch; i < x.v.size(); i += c) s += (x.v[i] - m) * (x.v[i] - m);
      s /= double(n);
      mean[ch] += momentum * (m - mean[ch]);
      var[ch] += momentum * (s - var[ch]);
    }
  }

  void collect(ParamRefs& ps) {
    ps.push_back(&gamma);
    ps.push_back(&beta);
  }
};

struct Linear {
  int in = 0, out = 0;
  Param w, b;  // w layout: [out][in]

  Linear() = default;
  Linear(const std::string& name, int in_, int out_, Init w_init = Init::HeWeight)
      : in(in_), out(out_), w(name + ".w", {out_, in_}, w_init, in_),
        b(name + ".b", {out_}, Init::Bias) {}

  std::vector<double> forward(const std::vector<double>& x) const {
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double s = b.v[o];
      for (int i = 0; i < in; ++i) s += w.v[std::size_t(o) * in + i] * x[i];
      y[o] = s;
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& x, const std::vector<double>& dy) {
    std::vector<double> dx(in, 0.0);
    for (int o = 0; o < out; ++o) {
      b.g[o] += dy[o];
      for (int i = 0; i < in; ++i) {
        w.g[std::size_t(o) * in + i] += dy[o] * x[i];
        dx[i] += dy[o] * w.v[std::size_t(o) * in + i];
      }
    }
    return dx;
  }

  void collect(ParamRefs& ps) {
    ps.push_back(&w);
    ps.push_back(&b);
  }
};

// ---------------------------------------------------------------------------
// Stateless ops
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.h, x.w, x.c);
  for (std::size_t i = 0; i < x.v.size(); ++i) dx.v[i] = x.v[i] > 0.0 ? dy.v[i] : 0.0;
  return dx;
}

// 2x2 average pooling with ceil semantics; partial windows at the bottom/right
// edge average over the covered cells only, so constants stay constant.
inline Tensor avgpool2_ceil(const Tensor& x) {
  Tensor y(ceil_div(x.h, 2), ceil_div(x.w, 2), x.c);
  for (int oy = 0; oy < y.h; ++oy)
    for (int ox = 0; ox < y.w; ++ox) {
      int y0 = oy * 2, x0 = ox * 2;
      int y1 = std::min(y0 + 2, x.h), x1 = std::min(x0 + 2, x.w);
      double inv = 1.0 / double((y1 - y0) * (x1 - x0));
      for (int ch = 0; ch < x.c; ++ch) {
        double s = 0.0;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) s += x.at(iy, ix, ch);
        y.at(oy, ox, ch) = s * inv;
      }
    }
  return y;
}

inline Tensor avgpool2_ceil_backward(int in_h, int in_w, const Tensor& dy) {
  Tensor dx(in_h, in_w, dy.c);
  for (int oy = 0; oy < dy.h; ++oy)
    for (int ox = 0; ox < dy.w; ++ox) {
      int y0 = oy * 2, x0 = ox * 2;
      int y1 = std::min(y0 + 2, in_h), x1 = std::min(x0 + 2, in_w);
      double inv = 1.0 / double((y1 - y0) * (x1 - x0));
      for (int ch = 0; ch < dy.c; ++ch) {
        double d = dy.at(oy, ox, ch) * inv;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) dx.at(iy, ix, ch) += d;
      }
    }
  return dx;
}

inline std::vector<double> global_avgpool(const Tensor& x) {
  std::vector<double> y(x.c, 0.0);
  double inv = 1.0 / double(x.h * x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) y[i % x.c] += x.v[i];
  for (auto& v : y) v *= inv;
  return y;
}

inline Tensor global_avgpool_backward(int h, int w, const std::vector<double>& dy) {
  Tensor dx(h, w, int(dy.size()));
  double inv = 1.0 / double(h * w);
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = dy[i % dy.size()] * inv;
  return dx;
}

inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Numerically stable binary cross-entropy on a logit.
inline double bce_with_logits(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

inline double bce_with_logits_grad(double logit, double target) {
  return sigmoid(logit) - target;
}

// Two-class softmax cross-entropy; label 1 means class 1 (object).
inline double softmax2_ce(double l0, double l1, int label) {
  double m = std::max(l0, l1);
  double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
  return lse - (label == 1 ? l1 : l0);
}

inline void softmax2_ce_grad(double l0, double l1, int label, double& d0, double& d1) {
  double m = std::max(l0, l1);
  double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  d0 = p0 - (label == 0 ? 1.0 : 0.0);
  d1 = p1 - (label == 1 ? 1.0 : 0.0);
}

inline double softmax2_prob1(double l0, double l1) {
  double m = std::max(l0, l1);
  double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  return e1 / (e0 + e1);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Sgd {
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::vector<std::vector<double>> velocity;

  // Returns the global gradient norm before clipping.
  double step(const ParamRefs& params) {
    if (velocity.size() != params.size()) {
      velocity.clear();
      for (Param* p : params) velocity.emplace_back(p->size(), 0.0);
    }
    double sq = 0.0;
    for (Param* p : params)
      for (double g : p->g) sq += g * g;
    double norm = std::sqrt(sq);
    double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param* p = params[k];
      auto& vel = velocity[k];
      for (std::size_t i = 0; i < p->size(); ++i) {
        vel[i] = momentum * vel[i] - lr * scale * p->g[i];
        p->v[i] += vel[i];
      }
    }
    return norm;
  }
};

}  // namespace am::nn
