#pragma once

// Training-input preparation: global resize/crop, boundary-anchored local
// crops, the dynamic guiding mask, dilated boundary masks and LD patches.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>
#include <vector>

#include "pcnet/image.hpp"
#include "pcnet/losses.hpp"

namespace pcnet {

// Spatial sizes of one training sample. Defaults are the paper-scale values.
struct SampleGeometry {
  std::size_t resize = 768;  // global branch: source resized to resize x resize
  std::size_t out = 512;     // crop size of G*, L*, S_G, S_L
  std::size_t factor = 4;    // G = out/factor
  std::size_t dilation = 16;
  std::size_t ld_kernel = 5;
  std::size_t ld_count = 64;

  std::size_t input() const { return out / factor; }
  void validate() const {
    if (out == 0 || factor == 0 || out % factor != 0) throw ConfigError("sample size must be a multiple of the factor");
    if (resize < out) throw ConfigError("resize must be at least the crop size");
    if (dilation == 0) throw ConfigError("dilation kernel must be >= 1");
    if (ld_kernel % 2 == 0) throw ConfigError("LD patch size must be odd");
  }

  // Desk-scale variant: network input `input`, everything else scaled alike.
  static SampleGeometry desk(std::size_t input) {
    SampleGeometry g;
    g.out = 4 * input;
    g.resize = g.out * 3 / 2;
    return g;
  }
};

struct Pixel {
  std::size_t y = 0, x = 0;
  bool operator==(const Pixel&) const = default;
};

struct GlobalView {
  Image g_star, g;
  LabelMap s_g;
  Pixel offset;  // crop origin in the resized source
};

struct LocalView {
  Image l_star, l;
  LabelMap s_l;
  Pixel origin;  // crop origin in the (possibly padded) source
};

struct TrainSample {
  Image g_star, g;
  LabelMap s_g;
  Image l_star, l;
  LabelMap s_l;
  Mask m;       // dynamic guiding mask on S_L
  Mask b_g;     // dilated boundaries of S_G
  Mask b_l;     // dilated boundaries of S_L
  Pixel anchor;  // boundary pixel of the source label
};

inline GlobalView prepare_global(const Image& image, const LabelMap& label, std::mt19937_64& rng,
                                 const SampleGeometry& geo = {}) {
  geo.validate();
  if (image.height < 2 || image.width < 2) throw UsageError("prepare_global: source smaller than 2x2");
  if (label.height() != image.height || label.width() != image.width)
    throw DimensionError("prepare_global: image and label sizes differ");
  const Image resized = resize_bilinear(image, geo.resize, geo.resize);
  const LabelMap resized_label = resize_nearest(label, geo.resize, geo.resize);
  std::uniform_int_distribution<std::size_t> pick(0, geo.resize - geo.out);
  const Pixel off{pick(rng), pick(rng)};
  GlobalView v;
  v.g_star = crop(resized, off.y, off.x, geo.out, geo.out);
  v.s_g = crop(resized_label, off.y, off.x, geo.out, geo.out);
  v.g = downsample_area(v.g_star, geo.factor);
  v.offset = off;
  return v;
}

struct Anchor {
  Pixel pixel;
  bool fallback = false;  // no boundary pixel existed
};

inline Anchor sample_boundary_anchor(const LabelMap& label, std::mt19937_64& rng) {
  const Mask b = boundary_pixels(label.labels);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.data[i]) candidates.push_back(i);
  const bool fallback = candidates.empty();
  if (fallback) spdlog::warn("sample_boundary_anchor: label has no boundary, sampling uniformly");
  const std::size_t n = fallback ? label.labels.size() : candidates.size();
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  const std::size_t idx = fallback ? k : candidates[k];
  return {{idx / label.width(), idx % label.width()}, fallback};
}

inline LocalView crop_local(const Image& image, const LabelMap& label, Pixel b, const SampleGeometry& geo = {}) {
  geo.validate();
  const Image* src = &image;
  const LabelMap* lab = &label;
  Image padded;
  LabelMap padded_label;
  if (image.height < geo.out || image.width < geo.out) {
    spdlog::info("crop_local: source {}x{} smaller than {}, reflect-padding", image.height, image.width, geo.out);
    padded = reflect_pad(image, geo.out, geo.out);
    padded_label = {reflect_pad(label.labels, geo.out, geo.out), label.num_classes};
    src = &padded;
    lab = &padded_label;
  }
  auto origin = [&](std::size_t c, std::size_t n) {
    const auto half = static_cast<std::ptrdiff_t>(geo.out / 2);
    const auto hi = static_cast<std::ptrdiff_t>(n - geo.out);
    return static_cast<std::size_t>(std::clamp(static_cast<std::ptrdiff_t>(c) - half, std::ptrdiff_t{0}, hi));
  };
  LocalView v;
  v.origin = {origin(b.y, src->height), origin(b.x, src->width)};
  v.l_star = crop(*src, v.origin.y, v.origin.x, geo.out, geo.out);
  v.s_l = crop(*lab, v.origin.y, v.origin.x, geo.out, geo.out);
  v.l = downsample_area(v.l_star, geo.factor);
  return v;
}

// Class with the most boundary pixels (ties -> lowest id).
inline int guiding_class(const LabelMap& s) {
  const Mask b = boundary_pixels(s.labels);
  std::vector<std::size_t> length(static_cast<std::size_t>(std::max(s.num_classes, 1)), 0);
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.data[i]) ++length[static_cast<std::size_t>(s.labels.data[i])];
  return static_cast<int>(std::max_element(length.begin(), length.end()) - length.begin());
}

// M(p) = 1 iff S_L(p) is the guiding class; all ones for a single-class patch.
inline Mask dynamic_mask(const LabelMap& s) {
  Mask m(s.height(), s.width(), 1);
  const Mask b = boundary_pixels(s.labels);
  if (std::none_of(b.data.begin(), b.data.end(), [](std::uint8_t v) { return v != 0; })) return m;
  const int c = guiding_class(s);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = s.labels.data[i] == c ? 1 : 0;
  return m;
}

// Binary dilation with a k x k square anchored at (k/2, k/2).
inline Mask dilate(const Mask& src, std::size_t k) {
  if (k == 0) throw UsageError("dilate: kernel must be >= 1");
  const auto a = static_cast<std::ptrdiff_t>(k / 2), kk = static_cast<std::ptrdiff_t>(k);
  const auto H = static_cast<std::ptrdiff_t>(src.height), W = static_cast<std::ptrdiff_t>(src.width);
  // Separable: rows then columns.
  Mask tmp(src.height, src.width, 0), out(src.height, src.width, 0);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      std::uint8_t v = 0;
      for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, x - a); j <= std::min(W - 1, x - a + kk - 1) && !v; ++j)
        v = src(std::size_t(y), std::size_t(j));
      tmp(std::size_t(y), std::size_t(x)) = v;
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      std::uint8_t v = 0;
      for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, y - a); i <= std::min(H - 1, y - a + kk - 1) && !v; ++i)
        v = tmp(std::size_t(i), std::size_t(x));
      out(std::size_t(y), std::size_t(x)) = v;
    }
  return out;
}

inline Mask boundary_mask(const LabelMap& s, std::size_t kernel = 16) {
  if (kernel == 0) throw UsageError("boundary_mask: kernel must be >= 1");
  return dilate(boundary_pixels(s.labels), kernel);
}

// K x K windows centred on boundary pixels that contain exactly two classes.
// f holds the pixels of the centre's class, g the rest. Pixel indices refer
// to the label raster (embedding resolution).
inline std::vector<LdPatch> sample_ld_patches(const LabelMap& s, std::size_t batch, std::size_t k, std::size_t count,
                                              std::mt19937_64& rng) {
  if (k % 2 == 0) throw UsageError("sample_ld_patches: K must be odd");
  std::vector<LdPatch> out;
  const std::size_t H = s.height(), W = s.width(), r = k / 2;
  if (count == 0) return out;
  const Mask b = boundary_pixels(s.labels);
  std::vector<std::size_t> centers;
  for (std::size_t y = r; y + r < H; ++y)
    for (std::size_t x = r; x + r < W; ++x)
      if (b(y, x)) centers.push_back(y * W + x);
  if (centers.empty()) {
    spdlog::warn("sample_ld_patches: no boundary pixel with a full {}x{} window", k, k);
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
  const std::size_t max_attempts = 20 * count;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    const std::size_t c = centers[pick(rng)], cy = c / W, cx = c % W;
    const std::int32_t own = s.labels.data[c];
    std::int32_t other = own;
    bool two_classes = true;
    LdPatch p{batch, {}, {}};
    for (std::size_t y = cy - r; y <= cy + r && two_classes; ++y)
      for (std::size_t x = cx - r; x <= cx + r; ++x) {
        const std::int32_t v = s.labels(y, x);
        if (v == own) {
          p.f_pixels.push_back(y * W + x);
          continue;
        }
        if (other != own && v != other) {
          two_classes = false;
          break;
        }
        other = v;
        p.g_pixels.push_back(y * W + x);
      }
    if (two_classes && !p.g_pixels.empty()) out.push_back(std::move(p));
  }
  if (out.size() < count) spdlog::debug("sample_ld_patches: {} of {} patches after {} attempts", out.size(), count, max_attempts);
  return out;
}

inline TrainSample make_train_sample(const Image& image, const LabelMap& label, std::mt19937_64& rng,
                                     const SampleGeometry& geo = {}) {
  auto global = prepare_global(image, label, rng, geo);
  const auto anchor = sample_boundary_anchor(label, rng);
  auto local = crop_local(image, label, anchor.pixel, geo);
  TrainSample s;
  s.m = dynamic_mask(local.s_l);
  s.b_g = boundary_mask(global.s_g, geo.dilation);
  s.b_l = boundary_mask(local.s_l, geo.dilation);
  s.g_star = std::move(global.g_star);
  s.g = std::move(global.g);
  s.s_g = std::move(global.s_g);
  s.l_star = std::move(local.l_star);
  s.l = std::move(local.l);
  s.s_l = std::move(local.s_l);
  s.anchor = anchor.pixel;
  return s;
}

// Independent stream per (seed, sample index).
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace pcnet
