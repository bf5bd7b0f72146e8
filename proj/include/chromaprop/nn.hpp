#pragma once

// Minimal convolutional building blocks with hand-written backward passes.
// Everything runs in double precision; convolutions are "same" padded,
// stride 1, with odd square kernels, and lower onto one GEMM via im2col.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chromaprop/tensor.hpp"

namespace chromaprop::nn {

using Eigen::Dynamic;
using Eigen::RowMajor;
using MatMap = Eigen::Map<Eigen::Matrix<double, Dynamic, Dynamic, RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Dynamic, Dynamic, RowMajor>>;

/// Uniform double in [0,1) from the top 53 bits of a 64-bit draw; identical
/// on every standard library.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Box-Muller normal draw, portable for the same reason as uniform01.
inline double normal(std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

struct Conv2d {
  int in = 0;
  int out = 0;
  int kernel = 1;
  AlignedVector<double> weight;  // out x (in * kernel * kernel), row-major
  AlignedVector<double> bias;    // out

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel_size)
      : in(in_channels),
        out(out_channels),
        kernel(kernel_size),
        weight(static_cast<std::size_t>(out_channels) * in_channels * kernel_size * kernel_size, 0.0),
        bias(out_channels, 0.0) {
    if (kernel_size % 2 == 0) throw std::invalid_argument("Conv2d: kernel size must be odd");
  }

  int fan_in() const { return in * kernel * kernel; }

  /// Kaiming-uniform weights, zero bias.
  void init_kaiming(std::mt19937_64& rng, double gain = std::sqrt(2.0)) {
    const double bound = gain * std::sqrt(3.0 / fan_in());
    for (auto& w : weight) w = uniform(rng, -bound, bound);
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  void zero() {
    std::fill(weight.begin(), weight.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

/// Gradient buffers shaped like a Conv2d.
struct ConvGrad {
  AlignedVector<double> weight;
  AlignedVector<double> bias;

  ConvGrad() = default;
  explicit ConvGrad(const Conv2d& c) : weight(c.weight.size(), 0.0), bias(c.bias.size(), 0.0) {}
  void zero() {
    std::fill(weight.begin(), weight.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
  }
};

namespace detail {

/// (in * k * k) x (H * W) patch matrix with zero padding.
inline AlignedVector<double> im2col(const Tensor<double>& x, int k) {
  const int h = x.height(), w = x.width(), r = k / 2;
  const std::size_t hw = x.plane();
  AlignedVector<double> cols(static_cast<std::size_t>(x.channels()) * k * k * hw, 0.0);
  std::size_t row = 0;
  for (int c = 0; c < x.channels(); ++c) {
    const double* src = x.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.data() + row * hw;
        const int dy = ky - r, dx = kx - r;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          const double* s = src + static_cast<std::size_t>(y + dy) * w + dx;
          double* d = dst + static_cast<std::size_t>(y) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) d[xx] = s[xx];
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col, accumulated into dx.
inline void col2im_add(const AlignedVector<double>& cols, int k, Tensor<double>& dx) {
  const int h = dx.height(), w = dx.width(), r = k / 2;
  const std::size_t hw = dx.plane();
  std::size_t row = 0;
  for (int c = 0; c < dx.channels(); ++c) {
    double* dst = dx.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols.data() + row * hw;
        const int dy = ky - r, ddx = kx - r;
        const int x_lo = std::max(0, -ddx), x_hi = std::min(w, w - ddx);
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          double* d = dst + static_cast<std::size_t>(y + dy) * w + ddx;
          const double* s = src + static_cast<std::size_t>(y) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor<double> conv_forward(const Conv2d& conv, const Tensor<double>& x) {
  if (x.channels() != conv.in)
    throw DimensionError("conv: expected " + std::to_string(conv.in) + " input channels, got " +
                         std::to_string(x.channels()));
  const auto hw = static_cast<Eigen::Index>(x.plane());
  Tensor<double> y(conv.out, x.height(), x.width());
  MatMap ym(y.data(), conv.out, hw);
  ConstMatMap wm(conv.weight.data(), conv.out, conv.fan_in());
  if (conv.kernel == 1) {
    ConstMatMap xm(x.data(), conv.in, hw);
    ym.noalias() = wm * xm;
  } else {
    const auto cols = detail::im2col(x, conv.kernel);
    ConstMatMap cm(cols.data(), conv.fan_in(), hw);
    ym.noalias() = wm * cm;
  }
  for (int o = 0; o < conv.out; ++o) ym.row(o).array() += conv.bias[o];
  return y;
}

/// Accumulates parameter gradients into `grad`; returns dL/dx when
/// `want_input_grad` is set (an empty tensor otherwise).
inline Tensor<double> conv_backward(const Conv2d& conv, const Tensor<double>& x, const Tensor<double>& grad_y,
                                    ConvGrad* grad, bool want_input_grad = true) {
  const auto hw = static_cast<Eigen::Index>(x.plane());
  ConstMatMap gy(grad_y.data(), conv.out, hw);
  ConstMatMap wm(conv.weight.data(), conv.out, conv.fan_in());
  AlignedVector<double> cols;
  const double* cols_ptr = x.data();
  if (conv.kernel != 1) {
    cols = detail::im2col(x, conv.kernel);
    cols_ptr = cols.data();
  }
  ConstMatMap cm(cols_ptr, conv.fan_in(), hw);
  if (grad != nullptr) {
    MatMap gw(grad->weight.data(), conv.out, conv.fan_in());
    gw.noalias() += gy * cm.transpose();
    for (int o = 0; o < conv.out; ++o) grad->bias[o] += gy.row(o).sum();
  }
  Tensor<double> dx;
  if (!want_input_grad) return dx;
  dx = Tensor<double>(x.shape());
  if (conv.kernel == 1) {
    MatMap dxm(dx.data(), conv.in, hw);
    dxm.noalias() = wm.transpose() * gy;
  } else {
    AlignedVector<double> dcols(cols.size());
    MatMap dcm(dcols.data(), conv.fan_in(), hw);
    dcm.noalias() = wm.transpose() * gy;
    detail::col2im_add(dcols, conv.kernel, dx);
  }
  return dx;
}

// Pointwise activations. Backward functions take the forward *input*.

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }
inline double silu_grad(double v) {
  const double s = 1.0 / (1.0 + std::exp(-v));
  return s * (1.0 + v * (1.0 - s));
}
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

enum class Activation { identity, silu, sigmoid, tanh };

inline Tensor<double> activate(Activation a, Tensor<double> x) {
  switch (a) {
    case Activation::identity: break;
    case Activation::silu:
      for (auto& v : x.values()) v = silu(v);
      break;
    case Activation::sigmoid:
      for (auto& v : x.values()) v = sigmoid(v);
      break;
    case Activation::tanh:
      for (auto& v : x.values()) v = std::tanh(v);
      break;
  }
  return x;
}

/// dL/d(pre) given pre-activation values and dL/d(post).
inline Tensor<double> activate_backward(Activation a, const Tensor<double>& pre, Tensor<double> grad) {
  require_shape(pre.shape(), grad.shape(), "activation backward");
  switch (a) {
    case Activation::identity: break;
    case Activation::silu:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= silu_grad(pre[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double s = sigmoid(pre[i]);
        grad[i] *= s * (1.0 - s);
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double t = std::tanh(pre[i]);
        grad[i] *= 1.0 - t * t;
      }
      break;
  }
  return grad;
}

/// A plain stack of convolutions with one activation after each layer.
/// Intermediate values are kept so the stack can be differentiated.
struct ConvStack {
  std::vector<Conv2d> layers;
  std::vector<Activation> acts;

  struct Trace {
    std::vector<Tensor<double>> inputs;  // input of each layer
    std::vector<Tensor<double>> pre;     // pre-activation of each layer
    Tensor<double> output;
  };

  Tensor<double> forward(const Tensor<double>& x) const {
    Tensor<double> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) h = activate(acts[l], conv_forward(layers[l], h));
    return h;
  }

  Trace forward_traced(const Tensor<double>& x) const {
    Trace t;
    Tensor<double> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      t.inputs.push_back(h);
      t.pre.push_back(conv_forward(layers[l], h));
      h = activate(acts[l], t.pre.back());
    }
    t.output = std::move(h);
    return t;
  }

  /// `grads` may be null (frozen stack); it must otherwise hold one ConvGrad per layer.
  Tensor<double> backward(const Trace& t, Tensor<double> grad_out, std::vector<ConvGrad>* grads,
                          bool want_input_grad = true) const {
    for (std::size_t l = layers.size(); l-- > 0;) {
      grad_out = activate_backward(acts[l], t.pre[l], std::move(grad_out));
      const bool need_dx = l > 0 || want_input_grad;
      grad_out = conv_backward(layers[l], t.inputs[l], grad_out, grads ? &(*grads)[l] : nullptr, need_dx);
    }
    return grad_out;
  }

  std::vector<ConvGrad> make_grads() const {
    std::vector<ConvGrad> g;
    for (const auto& c : layers) g.emplace_back(c);
    return g;
  }

  friend bool operator==(const ConvStack&, const ConvStack&) = default;
};

/// Adam over a flat list of parameter vectors.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
            double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k];
      auto g = grads[k];
      if (p.size() != g.size() || p.size() != m_[k].size())
        throw std::invalid_argument("Adam: parameter size changed between steps");
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Spans over every weight/bias vector of a set of convolutions, in order.
inline void collect(std::vector<Conv2d>& convs, std::vector<std::span<double>>& out) {
  for (auto& c : convs) {
    out.emplace_back(c.weight);
    out.emplace_back(c.bias);
  }
}

inline void collect(const std::vector<ConvGrad>& grads, std::vector<std::span<const double>>& out) {
  for (const auto& g : grads) {
    out.emplace_back(g.weight);
    out.emplace_back(g.bias);
  }
}

}  // namespace chromaprop::nn
