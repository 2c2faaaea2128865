#pragma once

// Training objectives: superpixel reconstruction loss, masked super-resolution
// loss, local-discrimination loss over boundary patches, and their weighted
// combination.

#include <spdlog/spdlog.h>

#include <cmath>
#include <vector>

#include "pcnet/assoc.hpp"
#include "pcnet/image.hpp"
#include "pcnet/ops.hpp"

namespace pcnet {

struct LossWeights {
  double alpha = 0.1;   // local (patch-calibration) branch
  double beta = 0.5;    // local discrimination
  double spatial_weight = 1.0;
  double sr_weight = 1.0;  // weight of the SR term inside each branch loss
  double ld_eps = 1e-6;
  bool ld_square_scatter = false;  // denominator S_f^2 + S_g^2 instead of S_f + S_g

  void validate() const {
    if (alpha < 0 || beta < 0 || spatial_weight < 0 || sr_weight < 0 || ld_eps < 0)
      throw ConfigError("loss weights must be non-negative");
  }
};

inline constexpr double kCrossEntropyEps = 1e-12;

// Coordinates [2,H,W] normalised to [0,1] per axis (row then column).
template <typename T>
Tensor<T> normalized_coords(std::size_t h, std::size_t w) {
  std::vector<T> data(2 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      data[y * w + x] = h > 1 ? static_cast<T>(y) / static_cast<T>(h - 1) : T{0};
      data[h * w + y * w + x] = w > 1 ? static_cast<T>(x) / static_cast<T>(w - 1) : T{0};
    }
  return Tensor<T>(Shape{2, h, w}, std::move(data));
}

template <typename T>
struct SuperpixelLoss {
  Tensor<T> total;
  Tensor<T> cross_entropy;  // mean over pixels
  Tensor<T> spatial;        // mean squared coordinate error over pixels
};

// Mean over pixels of CE(S'(p), S(p)) + spatial_weight * ||p' - p||^2, where S'
// and p' are obtained by pooling labels/coordinates into soft centers and
// reconstructing them through the same association map.
template <typename T>
SuperpixelLoss<T> superpixel_loss(const AssocMap<T>& assoc, const Tensor<T>& labels_one_hot, const Tensor<T>& coords,
                                  double spatial_weight = 1.0) {
  const auto& grid = assoc.grid;
  const std::size_t B = assoc.q.dim(0), H = grid.image_h, W = grid.image_w;
  if (labels_one_hot.rank() != 4 || labels_one_hot.dim(0) != B || labels_one_hot.dim(2) != H ||
      labels_one_hot.dim(3) != W)
    throw UsageError("superpixel_loss: labels " + to_string(labels_one_hot.shape()) + " do not match Q " +
                     to_string(assoc.q.shape()));
  if (coords.shape() != Shape{2, H, W}) throw UsageError("superpixel_loss: coords must be [2,H,W]");
  const T pixels = static_cast<T>(B * H * W);

  auto recon = reconstruct(assoc, soft_centers(assoc, labels_one_hot));
  auto ce = scale(sum(mul(labels_one_hot, log(add_scalar(recon, T(kCrossEntropyEps))))), T{-1} / pixels);

  std::vector<T> tiled;
  tiled.reserve(B * coords.size());
  for (std::size_t b = 0; b < B; ++b) tiled.insert(tiled.end(), coords.data().begin(), coords.data().end());
  Tensor<T> pos(Shape{B, 2, H, W}, std::move(tiled));
  auto pos_rec = reconstruct(assoc, soft_centers(assoc, pos));
  auto spatial = scale(squared_l2(sub(pos_rec, pos)), T{1} / pixels);

  auto total = add(ce, scale(spatial, static_cast<T>(spatial_weight)));
  return {total, ce, spatial};
}

// (1/|B|) * || B (.) (target - recon) ||_1 with the mask broadcast over
// channels; |B| counts masked pixels. Zero when the mask is empty.
template <typename T>
Tensor<T> sr_loss(const Tensor<T>& recon, const Tensor<T>& target, const std::vector<Mask>& masks) {
  detail::require_same_shape(recon.shape(), target.shape(), "sr_loss");
  const std::size_t B = recon.dim(0), C = recon.dim(1), H = recon.dim(2), W = recon.dim(3);
  if (masks.size() != B) throw UsageError("sr_loss: one mask per batch item required");
  std::vector<T> m(recon.size());
  std::size_t count = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (masks[b].height != H || masks[b].width != W) throw UsageError("sr_loss: mask size mismatch");
    for (std::size_t p = 0; p < H * W; ++p) {
      count += masks[b].data[p] ? 1 : 0;
      for (std::size_t c = 0; c < C; ++c) m[(b * C + c) * H * W + p] = masks[b].data[p] ? T{1} : T{0};
    }
  }
  Tensor<T> mask(recon.shape(), std::move(m));
  auto l1 = sum(abs(mul(mask, sub(target, recon))));
  if (count == 0) return scale(l1, T{0});
  return scale(l1, T{1} / static_cast<T>(count));
}

// Rows of E selected by pixel index: E [B,D,H,W], pixels of batch item b -> [n,D].
template <typename T>
Tensor<T> gather_pixels(const Tensor<T>& embedding, std::size_t b, const std::vector<std::size_t>& pixels) {
  if (embedding.rank() != 4) throw ConfigError("gather_pixels: rank-4 embedding required");
  const std::size_t D = embedding.dim(1), P = embedding.dim(2) * embedding.dim(3);
  std::vector<T> out(pixels.size() * D);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] >= P) throw UsageError("gather_pixels: pixel index out of range");
    for (std::size_t d = 0; d < D; ++d) out[i * D + d] = embedding.data()[(b * D + d) * P + pixels[i]];
  }
  return Tensor<T>::from_op(Shape{pixels.size(), D}, std::move(out), {embedding}, [b, D, P, pixels](detail::Node<T>& n) {
    auto g = detail::grad_of(n, 0);
    for (std::size_t i = 0; i < pixels.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) g[(b * D + d) * P + pixels[i]] += n.grad[i * D + d];
  });
}

// Fisher-style separation of two feature sets f [m,D] and g [n,D]:
//   -||mu_f - mu_g||^2 / (S_f + S_g + eps),  S = sum of squared deviations.
// With square_scatter the denominator is S_f^2 + S_g^2 + eps.
template <typename T>
Tensor<T> ld_patch_loss(const Tensor<T>& f, const Tensor<T>& g, double eps, bool square_scatter = false) {
  if (f.rank() != 2 || g.rank() != 2 || f.dim(1) != g.dim(1))
    throw UsageError("ld_patch_loss: feature sets must be [m,D] and [n,D]");
  if (f.dim(0) == 0 || g.dim(0) == 0) throw UsageError("ld_patch_loss: empty feature set");
  const std::size_t D = f.dim(1);
  auto stats = [D](const Tensor<T>& x) {
    std::vector<T> mu(D, T{0});
    const std::size_t m = x.dim(0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t d = 0; d < D; ++d) mu[d] += x.data()[i * D + d];
    for (auto& v : mu) v /= static_cast<T>(m);
    T scatter{0};
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        const T dev = x.data()[i * D + d] - mu[d];
        scatter += dev * dev;
      }
    return std::pair{mu, scatter};
  };
  auto [mu_f, s_f] = stats(f);
  auto [mu_g, s_g] = stats(g);
  T gap{0};
  for (std::size_t d = 0; d < D; ++d) gap += (mu_f[d] - mu_g[d]) * (mu_f[d] - mu_g[d]);
  const T den = (square_scatter ? s_f * s_f + s_g * s_g : s_f + s_g) + static_cast<T>(eps);
  const T value = -gap / den;

  return Tensor<T>::from_op(
      Shape{}, {value}, {f, g},
      [D, mu_f, mu_g, s_f, s_g, gap, den, square_scatter](detail::Node<T>& n) {
        const T up = n.grad[0];
        // dL = -(dgap * den - gap * dden) / den^2
        auto apply = [&](std::size_t input, const std::vector<T>& mu_self, const std::vector<T>& mu_other, T s_self) {
          if (!detail::wants_grad(n, input)) return;
          const auto& xv = n.inputs[input]->value;
          auto gx = detail::grad_of(n, input);
          const std::size_t m = xv.size() / D;
          const T dscatter_scale = square_scatter ? T{2} * s_self : T{1};
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t d = 0; d < D; ++d) {
              const T dgap = T{2} * (mu_self[d] - mu_other[d]) / static_cast<T>(m);
              const T dden = dscatter_scale * T{2} * (xv[i * D + d] - mu_self[d]);
              gx[i * D + d] += up * (-(dgap * den - gap * dden) / (den * den));
            }
        };
        apply(0, mu_f, mu_g, s_f);
        apply(1, mu_g, mu_f, s_g);
      });
}

// One boundary patch: pixel indices (at embedding resolution) of the two
// classes inside a K x K window of batch item `batch`.
struct LdPatch {
  std::size_t batch = 0;
  std::vector<std::size_t> f_pixels;  // class of the window's center pixel
  std::vector<std::size_t> g_pixels;
};

// Mean of the per-patch loss; 0 (with a warning) for an empty patch list.
template <typename T>
Tensor<T> ld_loss(const Tensor<T>& embedding, const std::vector<LdPatch>& patches, double eps,
                  bool square_scatter = false) {
  if (patches.empty()) {
    spdlog::warn("ld_loss: no boundary patches sampled, term set to 0");
    return scale(sum(embedding), T{0});
  }
  Tensor<T> acc;
  for (const auto& patch : patches) {
    auto term = ld_patch_loss(gather_pixels(embedding, patch.batch, patch.f_pixels),
                              gather_pixels(embedding, patch.batch, patch.g_pixels), eps, square_scatter);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, T{1} / static_cast<T>(patches.size()));
}

template <typename T>
struct LossTerms {
  Tensor<T> sp_global, sr_global, sp_local, sr_local, ld;
};

// L = [SP_G + w_sr SR_G] + alpha [SP_L + w_sr SR_L] + beta LD.
template <typename T>
Tensor<T> total_loss(const LossTerms<T>& t, const LossWeights& w) {
  w.validate();
  const T sr = static_cast<T>(w.sr_weight);
  auto global = add(t.sp_global, scale(t.sr_global, sr));
  auto local = add(t.sp_local, scale(t.sr_local, sr));
  return add(add(global, scale(local, static_cast<T>(w.alpha))), scale(t.ld, static_cast<T>(w.beta)));
}

}  // namespace pcnet
