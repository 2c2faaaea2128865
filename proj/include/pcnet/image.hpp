#pragma once

// Plain raster containers and the non-differentiable resampling used for data
// preparation and inference bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcnet/error.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

template <typename T>
struct Plane {
  std::size_t height = 0, width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

  T& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Plane&) const = default;
};

using Mask = Plane<std::uint8_t>;

// Planar RGB image with values nominally in [0,1].
struct Image {
  std::size_t channels = 3, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& operator()(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float operator()(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// Integer semantic labels, ids contiguous from 0.
struct LabelMap {
  Plane<std::int32_t> labels;
  int num_classes = 0;

  std::size_t height() const { return labels.height; }
  std::size_t width() const { return labels.width; }
  std::int32_t operator()(std::size_t y, std::size_t x) const { return labels(y, x); }
};

// ---------------------------------------------------------------------------
// Resampling

// Bilinear with half-pixel centers and edge clamping.
inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
  Image out(src.channels, h, w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src(c, y0, x0) * (1 - wx) + src(c, y0, x1) * wx;
        const double bot = src(c, y1, x0) * (1 - wx) + src(c, y1, x1) * wx;
        out(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

// Pixel-area resampling: each output pixel averages the source area it covers
// (fractional coverage at the edges).
inline Image resize_area(const Image& src, std::size_t h, std::size_t w) {
  struct Tap {
    std::size_t index;
    double weight;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<std::vector<Tap>> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double lo = static_cast<double>(o) * scale, hi = lo + scale;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 1e-12) t[o].push_back({i, overlap / scale});
      }
    }
    return t;
  };
  const auto ty = taps(src.height, h), tx = taps(src.width, w);
  Image out(src.channels, h, w);
  for (std::size_t c = 0; c < src.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (const auto& a : ty[y])
          for (const auto& b : tx[x]) acc += a.weight * b.weight * src(c, a.index, b.index);
        out(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

inline Image downsample_area(const Image& src, std::size_t factor) {
  return resize_area(src, (src.height + factor - 1) / factor, (src.width + factor - 1) / factor);
}

template <typename T>
Plane<T> resize_nearest(const Plane<T>& src, std::size_t h, std::size_t w) {
  Plane<T> out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(src.height - 1, (y * src.height + src.height / 2) / h);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(src.width - 1, (x * src.width + src.width / 2) / w);
      out(y, x) = src(sy, sx);
    }
  }
  return out;
}

inline LabelMap resize_nearest(const LabelMap& src, std::size_t h, std::size_t w) {
  return {resize_nearest(src.labels, h, w), src.num_classes};
}

inline Image crop(const Image& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > src.height || x0 + w > src.width) throw UsageError("crop window outside image");
  Image out(src.channels, h, w);
  for (std::size_t c = 0; c < src.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = src(c, y0 + y, x0 + x);
  return out;
}

template <typename T>
Plane<T> crop(const Plane<T>& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > src.height || x0 + w > src.width) throw UsageError("crop window outside plane");
  Plane<T> out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out(y, x) = src(y0 + y, x0 + x);
  return out;
}

inline LabelMap crop(const LabelMap& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  return {crop(src.labels, y0, x0, h, w), src.num_classes};
}

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

// Extends to at least h x w by reflecting across the bottom and right edges.
inline Image reflect_pad(const Image& src, std::size_t h, std::size_t w) {
  h = std::max(h, src.height);
  w = std::max(w, src.width);
  Image out(src.channels, h, w);
  for (std::size_t c = 0; c < src.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out(c, y, x) = src(c, reflect_index(static_cast<std::ptrdiff_t>(y), src.height),
                           reflect_index(static_cast<std::ptrdiff_t>(x), src.width));
  return out;
}

template <typename T>
Plane<T> reflect_pad(const Plane<T>& src, std::size_t h, std::size_t w) {
  h = std::max(h, src.height);
  w = std::max(w, src.width);
  Plane<T> out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out(y, x) = src(reflect_index(static_cast<std::ptrdiff_t>(y), src.height),
                      reflect_index(static_cast<std::ptrdiff_t>(x), src.width));
  return out;
}

// ---------------------------------------------------------------------------
// Boundaries

// A pixel is a boundary pixel iff one of its 4-neighbors carries a different id.
template <typename T>
Mask boundary_pixels(const Plane<T>& ids) {
  Mask out(ids.height, ids.width, 0);
  for (std::size_t y = 0; y < ids.height; ++y)
    for (std::size_t x = 0; x < ids.width; ++x) {
      const T v = ids(y, x);
      const bool edge = (y > 0 && ids(y - 1, x) != v) || (y + 1 < ids.height && ids(y + 1, x) != v) ||
                        (x > 0 && ids(y, x - 1) != v) || (x + 1 < ids.width && ids(y, x + 1) != v);
      out(y, x) = edge ? 1 : 0;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor bridges

template <typename T>
Tensor<T> to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw UsageError("to_tensor: empty batch");
  const auto& f = batch.front();
  std::vector<T> data;
  data.reserve(batch.size() * f.data.size());
  for (const auto& im : batch) {
    if (im.channels != f.channels || im.height != f.height || im.width != f.width)
      throw ConfigError("to_tensor: images in a batch must share a shape");
    data.insert(data.end(), im.data.begin(), im.data.end());
  }
  return Tensor<T>(Shape{batch.size(), f.channels, f.height, f.width}, std::move(data));
}

template <typename T>
Image image_from_tensor(const Tensor<T>& t, std::size_t index) {
  if (t.rank() != 4) throw ConfigError("image_from_tensor: rank-4 tensor required");
  Image im(t.dim(1), t.dim(2), t.dim(3));
  const auto src = t.data().subspan(index * im.data.size(), im.data.size());
  std::transform(src.begin(), src.end(), im.data.begin(), [](T v) { return static_cast<float>(v); });
  return im;
}

// One-hot encoding [B,K,H,W] of a batch of label planes.
template <typename T>
Tensor<T> one_hot(const std::vector<Plane<std::int32_t>>& batch, std::size_t classes) {
  if (batch.empty()) throw UsageError("one_hot: empty batch");
  const std::size_t h = batch.front().height, w = batch.front().width, plane = h * w;
  std::vector<T> data(batch.size() * classes * plane, T{0});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].height != h || batch[b].width != w) throw ConfigError("one_hot: label planes must share a shape");
    for (std::size_t p = 0; p < plane; ++p) {
      const auto k = batch[b].data[p];
      if (k < 0 || static_cast<std::size_t>(k) >= classes)
        throw UsageError("one_hot: label " + std::to_string(k) + " outside " + std::to_string(classes) + " classes");
      data[(b * classes + static_cast<std::size_t>(k)) * plane + p] = T{1};
    }
  }
  return Tensor<T>(Shape{batch.size(), classes, h, w}, std::move(data));
}

}  // namespace pcnet
