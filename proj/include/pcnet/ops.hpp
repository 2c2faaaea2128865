#pragma once

// Differentiable primitives. Shapes are explicit: no broadcasting apart from
// the per-channel bias of the convolutions.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pcnet/kernels.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ConfigError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
}

template <typename T>
std::span<T> grad_of(detail::Node<T>& out, std::size_t input) {
  return out.inputs[input]->ensure_grad();
}

template <typename T>
bool wants_grad(const detail::Node<T>& out, std::size_t input) {
  return out.inputs[input]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(n, k)) continue;
      auto g = detail::grad_of(n, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    if (detail::wants_grad(n, 0)) {
      auto g = detail::grad_of(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants_grad(n, 1)) {
      auto g = detail::grad_of(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    if (detail::wants_grad(n, 0)) {
      auto g = detail::grad_of(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (detail::wants_grad(n, 1)) {
      auto g = detail::grad_of(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + offset;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.1)) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = a.data()[i];
    out[i] = v > T{0} ? v : v * slope;
  }
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [slope](detail::Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += av[i] > T{0} ? n.grad[i] : n.grad[i] * slope;
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data()[i]);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = av[i];
      g[i] += v > T{0} ? n.grad[i] : (v < T{0} ? -n.grad[i] : T{0});
    }
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / av[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions (all return 0-dimensional tensors)

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v;
  return Tensor<T>::from_op(Shape{}, {s}, {a}, [](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (auto& v : g) v += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw UsageError("mean of an empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

// Sum of squares.
template <typename T>
Tensor<T> squared_l2(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v * v;
  return Tensor<T>::from_op(Shape{}, {s}, {a}, [](detail::Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * av[i] * n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Layout

// Concatenates rank-4 tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  detail::require_rank(s0, 4, "concat_channels");
  std::size_t channels = 0;
  std::vector<std::size_t> chans;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 4, "concat_channels");
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3])
      throw ConfigError("concat_channels: incompatible shapes " + to_string(s0) + " vs " + to_string(p.shape()));
    chans.push_back(p.dim(1));
    channels += p.dim(1);
  }
  const std::size_t batch = s0[0], plane = s0[2] * s0[3];
  std::vector<T> out(batch * channels * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data().subspan(b * chans[k] * plane, chans[k] * plane);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((b * channels + c0) * plane));
      c0 += chans[k];
    }
  }
  return Tensor<T>::from_op(Shape{batch, channels, s0[2], s0[3]}, std::move(out), parts,
                            [chans, channels, batch, plane](detail::Node<T>& n) {
                              std::size_t c0 = 0;
                              for (std::size_t k = 0; k < chans.size(); ++k) {
                                if (detail::wants_grad(n, k)) {
                                  auto g = detail::grad_of(n, k);
                                  for (std::size_t b = 0; b < batch; ++b)
                                    for (std::size_t i = 0; i < chans[k] * plane; ++i)
                                      g[b * chans[k] * plane + i] += n.grad[(b * channels + c0) * plane + i];
                                }
                                c0 += chans[k];
                              }
                            });
}

// [B, C*r*r, H, W] -> [B, C, r*H, r*W] with
// out(b, c, r*i+di, r*j+dj) = x(b, c*r*r + di*r + dj, i, j).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  detail::require_rank(x.shape(), 4, "pixel_shuffle");
  if (r == 0 || x.dim(1) % (r * r) != 0)
    throw ConfigError("pixel_shuffle: channels " + std::to_string(x.dim(1)) + " not divisible by r^2=" +
                      std::to_string(r * r));
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), C = Cin / (r * r);
  const std::size_t OH = H * r, OW = W * r;
  // src index for every destination element; the op is a permutation.
  std::vector<std::size_t> src(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          const std::size_t i = oy / r, di = oy % r, j = ox / r, dj = ox % r;
          const std::size_t ci = c * r * r + di * r + dj;
          src[((b * C + c) * OH + oy) * OW + ox] = ((b * Cin + ci) * H + i) * W + j;
        }
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x.data()[src[k]];
  return Tensor<T>::from_op(Shape{B, C, OH, OW}, std::move(out), {x}, [src = std::move(src)](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += n.grad[k];
  });
}

// Inverse rearrangement of pixel_shuffle: [B, C, r*H, r*W] -> [B, C*r*r, H, W].
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  detail::require_rank(x.shape(), 4, "pixel_unshuffle");
  if (r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0)
    throw ConfigError("pixel_unshuffle: spatial size not divisible by " + std::to_string(r));
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2) / r, W = x.dim(3) / r, OC = C * r * r;
  std::vector<std::size_t> src(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oc = 0; oc < OC; ++oc)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t c = oc / (r * r), di = (oc / r) % r, dj = oc % r;
          src[((b * OC + oc) * H + i) * W + j] = ((b * C + c) * H * r + i * r + di) * W * r + j * r + dj;
        }
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x.data()[src[k]];
  return Tensor<T>::from_op(Shape{B, OC, H, W}, std::move(out), {x}, [src = std::move(src)](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += n.grad[k];
  });
}

// Softmax over axis 1 of a rank-4 tensor, max-subtracted. When `valid` is
// given (size C*H*W, shared by every batch item) channels marked 0 are
// excluded and receive probability exactly 0.
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& x, const std::vector<std::uint8_t>* valid = nullptr) {
  detail::require_rank(x.shape(), 4, "softmax_channel");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (valid && valid->size() != C * plane) throw ConfigError("softmax_channel: validity mask has wrong size");
  std::vector<T> out(x.size(), T{0});
  for (std::size_t b = 0; b < B; ++b) {
    const T* in = x.data().data() + b * C * plane;
    T* o = out.data() + b * C * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < C; ++c)
        if (!valid || (*valid)[c * plane + p]) mx = std::max(mx, in[c * plane + p]);
      if (mx == -std::numeric_limits<T>::infinity()) continue;  // no valid channel
      T z{0};
      for (std::size_t c = 0; c < C; ++c) {
        if (valid && !(*valid)[c * plane + p]) continue;
        const T e = std::exp(in[c * plane + p] - mx);
        o[c * plane + p] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) o[c * plane + p] /= z;
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [B, C, plane](detail::Node<T>& n) {
    const auto& y = n.value;
    auto g = detail::grad_of(n, 0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = b * C * plane + p;
        T dot{0};
        for (std::size_t c = 0; c < C; ++c) dot += y[base + c * plane] * n.grad[base + c * plane];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = base + c * plane;
          g[i] += y[i] * (n.grad[i] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

enum class ConvAlgo { im2col, direct };

// Process-wide choice of convolution kernel. Both produce the same result up
// to floating-point summation order.
inline ConvAlgo& conv_algorithm() {
  static ConvAlgo algo = ConvAlgo::im2col;
  return algo;
}

namespace detail {

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* op) {
  if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (in + 2 * pad < k)
    throw ConfigError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded input " +
                      std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void conv2d_direct_forward(const kernels::ConvGeometry& g, std::size_t batch, std::size_t cout, const T* x, const T* w,
                           const T* bias, T* y) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          T acc = bias ? bias[co] : T{0};
          for (std::size_t ci = 0; ci < g.channels; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                acc += w[((co * g.channels + ci) * g.kh + ky) * g.kw + kx] *
                       x[((b * g.channels + ci) * g.height + static_cast<std::size_t>(iy)) * g.width +
                         static_cast<std::size_t>(ix)];
              }
            }
          y[((b * cout + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
}

// Accumulates dx and dw from dy for the direct convolution.
template <typename T>
void conv2d_direct_backward(const kernels::ConvGeometry& g, std::size_t batch, std::size_t cout, const T* x,
                            const T* w, const T* dy, T* dx, T* dw) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const T go = dy[((b * cout + co) * g.out_h + oy) * g.out_w + ox];
          for (std::size_t ci = 0; ci < g.channels; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                const std::size_t xi = ((b * g.channels + ci) * g.height + static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix);
                const std::size_t wi = ((co * g.channels + ci) * g.kh + ky) * g.kw + kx;
                if (dx) dx[xi] += go * w[wi];
                if (dw) dw[wi] += go * x[xi];
              }
            }
        }
}

}  // namespace detail

// x [B,Cin,H,W], w [Cout,Cin,kH,kW], bias [Cout] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  if (x.dim(1) != w.dim(1))
    throw ConfigError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                      std::to_string(w.dim(1)));
  const std::size_t B = x.dim(0), Cout = w.dim(0);
  if (bias.defined() && bias.shape() != Shape{Cout}) throw ConfigError("conv2d: bias shape " + to_string(bias.shape()));
  kernels::ConvGeometry g;
  g.channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.out_h = detail::conv_out_size(g.height, g.kh, stride, padding, "conv2d");
  g.out_w = detail::conv_out_size(g.width, g.kw, stride, padding, "conv2d");

  const std::size_t in_plane = g.channels * g.height * g.width, out_plane = Cout * g.col_cols();
  std::vector<T> out(B * out_plane);
  const ConvAlgo algo = conv_algorithm();
  if (algo == ConvAlgo::direct) {
    detail::conv2d_direct_forward(g, B, Cout, x.data().data(), w.data().data(),
                                  bias.defined() ? bias.data().data() : nullptr, out.data());
  } else {
    std::vector<T> col(g.col_rows() * g.col_cols());
    for (std::size_t b = 0; b < B; ++b) {
      kernels::im2col(g, x.data().data() + b * in_plane, col.data());
      T* y = out.data() + b * out_plane;
      kernels::gemm(kernels::Trans::no, kernels::Trans::no, Cout, g.col_cols(), g.col_rows(), w.data().data(),
                    col.data(), y, false);
      if (bias.defined())
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t i = 0; i < g.col_cols(); ++i) y[co * g.col_cols() + i] += bias.data()[co];
    }
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::from_op(
      Shape{B, Cout, g.out_h, g.out_w}, std::move(out), inputs,
      [g, B, Cout, algo, has_bias = bias.defined()](detail::Node<T>& n) {
        const T* xv = n.inputs[0]->value.data();
        const T* wv = n.inputs[1]->value.data();
        const std::size_t in_plane = g.channels * g.height * g.width, out_plane = Cout * g.col_cols();
        T* dx = detail::wants_grad(n, 0) ? detail::grad_of(n, 0).data() : nullptr;
        T* dw = detail::wants_grad(n, 1) ? detail::grad_of(n, 1).data() : nullptr;
        if (has_bias && detail::wants_grad(n, 2)) {
          auto db = detail::grad_of(n, 2);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              T s{0};
              const T* gy = n.grad.data() + b * out_plane + co * g.col_cols();
              for (std::size_t i = 0; i < g.col_cols(); ++i) s += gy[i];
              db[co] += s;
            }
        }
        if (algo == ConvAlgo::direct) {
          detail::conv2d_direct_backward(g, B, Cout, xv, wv, n.grad.data(), dx, dw);
          return;
        }
        std::vector<T> col(g.col_rows() * g.col_cols());
        for (std::size_t b = 0; b < B; ++b) {
          const T* gy = n.grad.data() + b * out_plane;
          if (dw) {
            kernels::im2col(g, xv + b * in_plane, col.data());
            kernels::gemm(kernels::Trans::no, kernels::Trans::yes, Cout, g.col_rows(), g.col_cols(), gy, col.data(),
                          dw, true);
          }
          if (dx) {
            kernels::gemm(kernels::Trans::yes, kernels::Trans::no, g.col_rows(), g.col_cols(), Cout, wv,
                          gy, col.data(), false);
            kernels::col2im(g, col.data(), dx + b * in_plane);
          }
        }
      });
}

// Transposed convolution. x [B,Cin,H,W], w [Cin,Cout,kH,kW], bias [Cout].
// Output spatial size (H-1)*stride - 2*padding + kH.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                   std::size_t padding) {
  detail::require_rank(x.shape(), 4, "deconv2d");
  detail::require_rank(w.shape(), 4, "deconv2d weight");
  if (stride < 1) throw ConfigError("deconv2d: stride must be >= 1");
  if (x.dim(1) != w.dim(0))
    throw ConfigError("deconv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                      std::to_string(w.dim(0)));
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = w.dim(1);
  const std::size_t kh = w.dim(2), kw = w.dim(3);
  if ((H - 1) * stride + kh < 2 * padding + 1 || (W - 1) * stride + kw < 2 * padding + 1)
    throw ConfigError("deconv2d: padding too large for input");
  if (bias.defined() && bias.shape() != Shape{Cout})
    throw ConfigError("deconv2d: bias shape " + to_string(bias.shape()));
  // Geometry of the adjoint convolution that maps the output back to x.
  kernels::ConvGeometry g;
  g.channels = Cout;
  g.height = (H - 1) * stride + kh - 2 * padding;
  g.width = (W - 1) * stride + kw - 2 * padding;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.padding = padding;
  g.out_h = H;
  g.out_w = W;

  const std::size_t in_plane = Cin * H * W, out_plane = Cout * g.height * g.width;
  std::vector<T> out(B * out_plane, T{0});
  const ConvAlgo algo = conv_algorithm();
  if (algo == ConvAlgo::direct) {
    // Forward of the transposed convolution is the data-gradient of the
    // adjoint convolution (w read as its [Cin,Cout,kh,kw] kernel).
    detail::conv2d_direct_backward(g, B, Cin, static_cast<const T*>(nullptr), w.data().data(), x.data().data(),
                                   out.data(), static_cast<T*>(nullptr));
  } else {
    std::vector<T> col(g.col_rows() * g.col_cols());
    for (std::size_t b = 0; b < B; ++b) {
      kernels::gemm(kernels::Trans::yes, kernels::Trans::no, Cout * kh * kw, H * W, Cin, w.data().data(),
                    x.data().data() + b * in_plane, col.data(), false);
      kernels::col2im(g, col.data(), out.data() + b * out_plane);
    }
  }
  if (bias.defined())
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Cout; ++co) {
        T* y = out.data() + b * out_plane + co * g.height * g.width;
        for (std::size_t i = 0; i < g.height * g.width; ++i) y[i] += bias.data()[co];
      }

  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::from_op(
      Shape{B, Cout, g.height, g.width}, std::move(out), inputs,
      [g, B, Cin, Cout, algo, has_bias = bias.defined()](detail::Node<T>& n) {
        const T* xv = n.inputs[0]->value.data();
        const T* wv = n.inputs[1]->value.data();
        const std::size_t H = g.out_h, W = g.out_w, kk = g.kh * g.kw;
        const std::size_t in_plane = Cin * H * W, out_plane = Cout * g.height * g.width;
        T* dx = detail::wants_grad(n, 0) ? detail::grad_of(n, 0).data() : nullptr;
        T* dw = detail::wants_grad(n, 1) ? detail::grad_of(n, 1).data() : nullptr;
        if (has_bias && detail::wants_grad(n, 2)) {
          auto db = detail::grad_of(n, 2);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              T s{0};
              const T* gy = n.grad.data() + b * out_plane + co * g.height * g.width;
              for (std::size_t i = 0; i < g.height * g.width; ++i) s += gy[i];
              db[co] += s;
            }
        }
        if (algo == ConvAlgo::direct) {
          if (dx) {
            std::vector<T> tmp(B * in_plane);
            detail::conv2d_direct_forward(g, B, Cin, n.grad.data(), wv, static_cast<const T*>(nullptr),
                                          tmp.data());
            for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
          }
          if (dw)
            detail::conv2d_direct_backward(g, B, Cin, n.grad.data(), wv, xv,
                                           static_cast<T*>(nullptr), dw);
          return;
        }
        std::vector<T> col(g.col_rows() * g.col_cols());
        for (std::size_t b = 0; b < B; ++b) {
          kernels::im2col(g, n.grad.data() + b * out_plane, col.data());
          if (dx)
            kernels::gemm(kernels::Trans::no, kernels::Trans::no, Cin, H * W, Cout * kk, wv, col.data(),
                          dx + b * in_plane, true);
          if (dw)
            kernels::gemm(kernels::Trans::no, kernels::Trans::yes, Cin, Cout * kk, H * W,
                          xv + b * in_plane, col.data(), dw, true);
        }
      });
}

}  // namespace pcnet
