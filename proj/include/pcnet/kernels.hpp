#pragma once

// Raw numeric kernels over contiguous row-major buffers. No autodiff here.

#include <Eigen/Core>
#include <cstddef>
#include <span>

namespace pcnet::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

enum class Trans { no, yes };

// C[m,n] (+)= op(A) * op(B), all row-major.
// op(A) is m x k and op(B) is k x n.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MapMat<T> C(c, M, N);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (ta == Trans::no && tb == Trans::no)
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, K, N));
  else if (ta == Trans::no && tb == Trans::yes)
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, N, K).transpose());
  else if (ta == Trans::yes && tb == Trans::no)
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, K, N));
  else
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, N, K).transpose());
}

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0, width = 0;        // input plane
  std::size_t kh = 0, kw = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;         // output plane of the strided window sweep

  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// Unfolds one image [C,H,W] into columns [C*kh*kw, out_h*out_w].
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into an image [C,H,W].
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace pcnet::kernels
