#pragma once

// Forward and backward kernels for every layer type used by the counting
// networks. These are plain functions over Tensor4; autodiff.hpp wires them
// into the recorded graph.
//
// Accumulation order is fixed by loop structure. Parallel loops split work
// over output planes only, so results are identical for any thread count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/parallel.hpp"
#include "crowdscale/tensor.hpp"

namespace crowdscale::kernels {

inline constexpr double kDivEpsilon = 1e-8;

struct ConvGeometry {
  std::size_t k = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

// Zero padding that keeps spatial dims for an odd kernel.
inline std::size_t same_padding(std::size_t k, std::size_t dilation) {
  if (k % 2 == 0) throw ConfigError("'same' convolution needs an odd kernel, got k=" + std::to_string(k));
  return dilation * (k - 1) / 2;
}

template <typename T>
ConvGeometry conv_geometry(const Tensor4<T>& x, const Tensor4<T>& weight, std::size_t dilation,
                           std::size_t padding) {
  if (weight.h() != weight.w()) throw DimensionError("conv2d expects square kernels");
  if (weight.c() != x.c()) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(x.c()) +
                         " channels, weight expects " + std::to_string(weight.c()));
  }
  if (dilation == 0) throw ConfigError("conv2d dilation must be >= 1");
  ConvGeometry g;
  g.k = weight.h();
  g.dilation = dilation;
  g.padding = padding;
  const std::size_t span = dilation * (g.k - 1);
  if (x.h() + 2 * padding < span + 1 || x.w() + 2 * padding < span + 1) {
    throw DimensionError("conv2d input " + to_string(x.shape()) + " smaller than dilated kernel");
  }
  g.out_h = x.h() + 2 * padding - span;
  g.out_w = x.w() + 2 * padding - span;
  return g;
}

namespace detail {

// Valid output range [lo, hi) along one axis for tap offset `off`
// (= tap * dilation), so that out + off - padding lies in [0, in).
inline void tap_range(std::size_t off, std::size_t padding, std::size_t in, std::size_t out, std::size_t& lo,
                      std::size_t& hi) {
  const long long shift = static_cast<long long>(off) - static_cast<long long>(padding);
  const long long l = std::max<long long>(0, -shift);
  const long long h = std::min<long long>(static_cast<long long>(out), static_cast<long long>(in) - shift);
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(l, h));
}

// Dot product with eight fixed lanes; deterministic and vectorizable.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

// y = conv(x, weight) + bias; weight is [outC, inC, k, k], bias [1, outC, 1, 1].
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias,
                          std::size_t dilation, std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, weight, dilation, padding);
  const std::size_t out_c = weight.n();
  if (bias.size() != out_c) throw DimensionError("conv2d bias length does not match output channels");
  const std::size_t in_c = x.c();
  Tensor4<T> y(x.n(), out_c, g.out_h, g.out_w);
  parallel_for(0, x.n() * out_c, [&](std::size_t job) {
    const std::size_t b = job / out_c;
    const std::size_t o = job % out_c;
    T* out = y.plane(b, o);
    std::fill(out, out + g.out_h * g.out_w, bias[o]);
    for (std::size_t ic = 0; ic < in_c; ++ic) {
      const T* in = x.plane(b, ic);
      const T* wk = weight.plane(o, ic);
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t y0, y1;
        detail::tap_range(ky * g.dilation, g.padding, x.h(), g.out_h, y0, y1);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          std::size_t x0, x1;
          detail::tap_range(kx * g.dilation, g.padding, x.w(), g.out_w, x0, x1);
          const T wv = wk[ky * g.k + kx];
          if (wv == T{0}) continue;
          const std::size_t nx = x1 - x0;
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const T* irow = in + (oy + ky * g.dilation - g.padding) * x.w() + (x0 + kx * g.dilation - g.padding);
            T* orow = out + oy * g.out_w + x0;
            for (std::size_t i = 0; i < nx; ++i) orow[i] += wv * irow[i];
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& grad_y, std::size_t dilation,
                     std::size_t padding, std::vector<T>* grad_x, std::vector<T>* grad_w, std::vector<T>* grad_b) {
  const ConvGeometry g = conv_geometry(x, weight, dilation, padding);
  const std::size_t out_c = weight.n();
  const std::size_t in_c = x.c();
  const std::size_t kk = g.k * g.k;
  const std::size_t out_plane = g.out_h * g.out_w;

  if (grad_x != nullptr) {
    parallel_for(0, x.n() * in_c, [&](std::size_t job) {
      const std::size_t b = job / in_c;
      const std::size_t ic = job % in_c;
      T* gx = grad_x->data() + (b * in_c + ic) * x.h() * x.w();
      for (std::size_t o = 0; o < out_c; ++o) {
        const T* gy = grad_y.plane(b, o);
        const T* wk = weight.plane(o, ic);
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          std::size_t y0, y1;
          detail::tap_range(ky * g.dilation, g.padding, x.h(), g.out_h, y0, y1);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t x0, x1;
            detail::tap_range(kx * g.dilation, g.padding, x.w(), g.out_w, x0, x1);
            const T wv = wk[ky * g.k + kx];
            const std::size_t nx = x1 - x0;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              T* grow = gx + (oy + ky * g.dilation - g.padding) * x.w() + (x0 + kx * g.dilation - g.padding);
              const T* gyrow = gy + oy * g.out_w + x0;
              for (std::size_t i = 0; i < nx; ++i) grow[i] += wv * gyrow[i];
            }
          }
        }
      }
    });
  }

  if (grad_w != nullptr || grad_b != nullptr) {
    parallel_for(0, out_c, [&](std::size_t o) {
      if (grad_b != nullptr) {
        T acc{0};
        for (std::size_t b = 0; b < x.n(); ++b) {
          const T* gy = grad_y.plane(b, o);
          for (std::size_t i = 0; i < out_plane; ++i) acc += gy[i];
        }
        (*grad_b)[o] += acc;
      }
      if (grad_w == nullptr) return;
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        T* gw = grad_w->data() + (o * in_c + ic) * kk;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          std::size_t y0, y1;
          detail::tap_range(ky * g.dilation, g.padding, x.h(), g.out_h, y0, y1);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t x0, x1;
            detail::tap_range(kx * g.dilation, g.padding, x.w(), g.out_w, x0, x1);
            const std::size_t nx = x1 - x0;
            T acc{0};
            for (std::size_t b = 0; b < x.n(); ++b) {
              const T* in = x.plane(b, ic);
              const T* gy = grad_y.plane(b, o);
              for (std::size_t oy = y0; oy < y1; ++oy) {
                const T* irow = in + (oy + ky * g.dilation - g.padding) * x.w() + (x0 + kx * g.dilation - g.padding);
                acc += detail::dot(gy + oy * g.out_w + x0, irow, nx);
              }
            }
            gw[ky * g.k + kx] += acc;
          }
        }
      }
    });
  }
}

// 2x2 max pooling, stride 2. `argmax` receives the in-plane source index of
// every output cell; the first maximum in row-major block order wins ties.
template <typename T>
Tensor4<T> max_pool2_forward(const Tensor4<T>& x, std::vector<std::size_t>& argmax) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw DimensionError("max_pool2 needs even spatial dims, got " + to_string(x.shape()));
  }
  const std::size_t oh = x.h() / 2, ow = x.w() / 2;
  Tensor4<T> y(x.n(), x.c(), oh, ow);
  argmax.assign(y.size(), 0);
  for (std::size_t p = 0; p < x.n() * x.c(); ++p) {
    const T* in = x.data() + p * x.h() * x.w();
    T* out = y.data() + p * oh * ow;
    std::size_t* am = argmax.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * x.w() + 2 * j;
        const std::size_t cand[3] = {best + 1, best + x.w(), best + x.w() + 1};
        for (std::size_t c : cand) {
          // NaN wins so it reaches the loss.
          if (in[c] > in[best] || (std::isnan(in[c]) && !std::isnan(in[best]))) best = c;
        }
        out[i * ow + j] = in[best];
        am[i * ow + j] = best;
      }
    }
  }
  return y;
}

template <typename T>
void max_pool2_backward(const Shape& in_shape, const std::vector<std::size_t>& argmax, const std::vector<T>& grad_y,
                        std::vector<T>& grad_x) {
  const std::size_t in_plane = in_shape.plane();
  const std::size_t out_plane = (in_shape.h / 2) * (in_shape.w / 2);
  for (std::size_t p = 0; p < in_shape.n * in_shape.c; ++p) {
    for (std::size_t i = 0; i < out_plane; ++i) {
      grad_x[p * in_plane + argmax[p * out_plane + i]] += grad_y[p * out_plane + i];
    }
  }
}

// Block [lo, hi) covered by output cell i of an adaptive pool of size k over
// an axis of length n: lo = floor(i*n/k), hi = ceil((i+1)*n/k).
inline std::pair<std::size_t, std::size_t> adaptive_bounds(std::size_t i, std::size_t n, std::size_t k) {
  const std::size_t lo = (i * n) / k;
  const std::size_t hi = ((i + 1) * n + k - 1) / k;
  return {lo, hi};
}

template <typename T>
Tensor4<T> adaptive_avg_pool_forward(const Tensor4<T>& x, std::size_t k) {
  if (k == 0) throw ConfigError("adaptive_avg_pool: k must be >= 1");
  if (x.h() == 0 || x.w() == 0) throw DimensionError("adaptive_avg_pool on empty input " + to_string(x.shape()));
  Tensor4<T> y(x.n(), x.c(), k, k);
  for (std::size_t p = 0; p < x.n() * x.c(); ++p) {
    const T* in = x.data() + p * x.h() * x.w();
    T* out = y.data() + p * k * k;
    for (std::size_t i = 0; i < k; ++i) {
      const auto [r0, r1] = adaptive_bounds(i, x.h(), k);
      for (std::size_t j = 0; j < k; ++j) {
        const auto [c0, c1] = adaptive_bounds(j, x.w(), k);
        T acc{0};
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) acc += in[r * x.w() + c];
        }
        out[i * k + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  }
  return y;
}

template <typename T>
void adaptive_avg_pool_backward(const Shape& in_shape, std::size_t k, const std::vector<T>& grad_y,
                                std::vector<T>& grad_x) {
  for (std::size_t p = 0; p < in_shape.n * in_shape.c; ++p) {
    T* gx = grad_x.data() + p * in_shape.plane();
    const T* gy = grad_y.data() + p * k * k;
    for (std::size_t i = 0; i < k; ++i) {
      const auto [r0, r1] = adaptive_bounds(i, in_shape.h, k);
      for (std::size_t j = 0; j < k; ++j) {
        const auto [c0, c1] = adaptive_bounds(j, in_shape.w, k);
        const T share = gy[i * k + j] / static_cast<T>((r1 - r0) * (c1 - c0));
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) gx[r * in_shape.w + c] += share;
        }
      }
    }
  }
}

// Source taps for one output axis under the half-pixel convention with edge
// clamping.
struct LinearTaps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;  // weight of `hi`
};

inline LinearTaps linear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto l = static_cast<std::size_t>(std::floor(src));
    t.lo[o] = l;
    t.hi[o] = std::min(l + 1, in - 1);
    t.frac[o] = src - static_cast<double>(l);
  }
  return t;
}

template <typename T>
Tensor4<T> bilinear_upsample_forward(const Tensor4<T>& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || x.h() == 0 || x.w() == 0) {
    throw DimensionError("bilinear_upsample: zero-size input or target");
  }
  const LinearTaps ty = linear_taps(x.h(), out_h);
  const LinearTaps tx = linear_taps(x.w(), out_w);
  Tensor4<T> y(x.n(), x.c(), out_h, out_w);
  for (std::size_t p = 0; p < x.n() * x.c(); ++p) {
    const T* in = x.data() + p * x.h() * x.w();
    T* out = y.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ty.frac[i]);
      const T* r0 = in + ty.lo[i] * x.w();
      const T* r1 = in + ty.hi[i] * x.w();
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx.frac[j]);
        const T top = r0[tx.lo[j]] * (T{1} - fx) + r0[tx.hi[j]] * fx;
        const T bot = r1[tx.lo[j]] * (T{1} - fx) + r1[tx.hi[j]] * fx;
        out[i * out_w + j] = top * (T{1} - fy) + bot * fy;
      }
    }
  }
  return y;
}

template <typename T>
void bilinear_upsample_backward(const Shape& in_shape, std::size_t out_h, std::size_t out_w,
                                const std::vector<T>& grad_y, std::vector<T>& grad_x) {
  const LinearTaps ty = linear_taps(in_shape.h, out_h);
  const LinearTaps tx = linear_taps(in_shape.w, out_w);
  for (std::size_t p = 0; p < in_shape.n * in_shape.c; ++p) {
    T* gx = grad_x.data() + p * in_shape.plane();
    const T* gy = grad_y.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ty.frac[i]);
      T* r0 = gx + ty.lo[i] * in_shape.w;
      T* r1 = gx + ty.hi[i] * in_shape.w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx.frac[j]);
        const T g = gy[i * out_w + j];
        r0[tx.lo[j]] += g * (T{1} - fy) * (T{1} - fx);
        r0[tx.hi[j]] += g * (T{1} - fy) * fx;
        r1[tx.lo[j]] += g * fy * (T{1} - fx);
        r1[tx.hi[j]] += g * fy * fx;
      }
    }
  }
}

template <typename T>
T sigmoid(T v) {
  // Stable on both tails, and kept strictly inside (0, 1): saturated inputs
  // land on the nearest representable neighbours of 0 and 1.
  const T y = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  if (std::isnan(y)) return y;
  return std::clamp(y, std::numeric_limits<T>::min(), T{1} - std::numeric_limits<T>::epsilon() / T{2});
}

enum class Activation { relu, sigmoid };
enum class Binary { add, sub, mul, div };

// Whether b can be combined with a: identical shapes, or b is a single-channel
// map broadcast across a's channels.
inline bool broadcastable(const Shape& a, const Shape& b) {
  return a == b || (b.c == 1 && a.n == b.n && a.h == b.h && a.w == b.w);
}

}  // namespace crowdscale::kernels
