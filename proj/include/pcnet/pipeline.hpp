#pragma once

// Inference: whole-image decoding, decoding at a target superpixel count, the
// tiled baseline and its seam report, and map export.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pcnet/assoc.hpp"
#include "pcnet/checkpoint.hpp"
#include "pcnet/data.hpp"
#include "pcnet/image.hpp"
#include "pcnet/net.hpp"

namespace pcnet {

inline constexpr std::size_t kMinInferSide = 64;

// Frozen weights: forward passes build no autodiff graph.
struct Model {
  Params<float> params;
  NetConfig net;
  std::size_t cell = 16;
};

inline Model make_model(const Params<float>& params, const NetConfig& net, std::size_t cell = 16) {
  if (cell == 0) throw ConfigError("cell size must be positive");
  Model m{{}, net, cell};
  for (const auto& [name, t] : params) m.params.add(name, Tensor<float>(t.shape(), t.values(), false));
  return m;
}

inline Model load_model(const std::string& path, std::size_t cell = 16) {
  const auto arrays = load_arrays(path);
  const auto net = config_from_arrays(arrays);
  return make_model(params_from_arrays<float>(arrays, net), net, cell);
}

// Runs the network on `input` (any size; reflect-padded to the encoder
// multiple), keeps the top-left out_h x out_w of the association logits and
// decodes them into connected, compacted superpixels.
inline SuperpixelMap predict(const Model& model, const Image& input, std::size_t out_h, std::size_t out_w) {
  const std::size_t m = model.net.input_multiple(), up = model.net.upscale;
  const std::size_t ph = (input.height + m - 1) / m * m, pw = (input.width + m - 1) / m * m;
  if (out_h > ph * up || out_w > pw * up) throw UsageError("predict: output larger than the network output");
  const Image padded = (ph == input.height && pw == input.width) ? input : reflect_pad(input, ph, pw);
  const auto out = forward(model.params, model.net, to_tensor<float>({padded}));

  const std::size_t OH = ph * up, OW = pw * up;
  std::vector<float> cropped(kNeighbours * out_h * out_w);
  const auto src = out.logits.data();
  for (std::size_t c = 0; c < kNeighbours; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((c * OH + y) * OW), out_w,
                  cropped.begin() + static_cast<std::ptrdiff_t>((c * out_h + y) * out_w));
  const Tensor<float> logits(Shape{1, kNeighbours, out_h, out_w}, std::move(cropped));
  const auto assoc = mask_invalid(logits, GridSpec::make(out_h, out_w, model.cell));
  return enforce_connectivity(hard_assign(assoc), default_min_size(model.cell));
}

struct InferShape {
  std::size_t input_h, input_w;    // after x4 area downsampling
  std::size_t padded_h, padded_w;  // network input
};

inline InferShape infer_shape(const Model& model, std::size_t h, std::size_t w) {
  const std::size_t f = model.net.upscale, m = model.net.input_multiple();
  const std::size_t ih = (h + f - 1) / f, iw = (w + f - 1) / f;
  return {ih, iw, (ih + m - 1) / m * m, (iw + m - 1) / m * m};
}

// Superpixels at the image's own resolution.
inline SuperpixelMap infer(const Model& model, const Image& image) {
  if (image.height < kMinInferSide || image.width < kMinInferSide)
    throw UsageError("infer: image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " is smaller than the 64x64 minimum");
  const auto small = downsample_area(image, model.net.upscale);
  return predict(model, small, image.height, image.width);
}

// Network input size whose output grid holds about `target` cells.
struct CountPlan {
  std::size_t input_h, input_w, grid_cells;
};

inline CountPlan plan_for_count(std::size_t h, std::size_t w, std::size_t target, std::size_t cell = 16,
                                std::size_t upscale = 4) {
  if (target == 0 || h == 0 || w == 0) throw UsageError("plan_for_count: empty image or zero target");
  const double cell_in = double(cell) / double(upscale);  // cell side in input pixels
  const double s = std::sqrt(double(target) * cell_in * cell_in / (double(h) * double(w)));
  const auto ih = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(h) * s)));
  const auto iw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(w) * s)));
  const auto grid = GridSpec::make(ih * upscale, iw * upscale, cell);
  return {ih, iw, grid.cells()};
}

inline Image resize_to(const Image& src, std::size_t h, std::size_t w) {
  if (h == src.height && w == src.width) return src;
  return (h <= src.height && w <= src.width) ? resize_area(src, h, w) : resize_bilinear(src, h, w);
}

// Decodes at the resolution implied by `target`, then maps labels back to the
// image size by nearest-neighbour resampling.
inline SuperpixelMap segment_for_count(const Model& model, const Image& image, std::size_t target) {
  const auto plan = plan_for_count(image.height, image.width, target, model.cell, model.net.upscale);
  const auto input = resize_to(image, plan.input_h, plan.input_w);
  const std::size_t oh = plan.input_h * model.net.upscale, ow = plan.input_w * model.net.upscale;
  auto sp = predict(model, input, oh, ow);
  if (oh == image.height && ow == image.width) return sp;
  return enforce_connectivity(compact(resize_nearest(sp.labels, image.height, image.width)), 1);
}

// ---------------------------------------------------------------------------
// Tiled baseline

struct SeamBorder {
  bool vertical = false;      // true: line between columns position-1 and position
  std::size_t position = 0;
  std::size_t adjacent = 0;   // distinct superpixels touching the line
  std::size_t crossing = 0;   // distinct superpixels present on both sides of it
};

// Tile edges along one axis: floor(i * n / k) for i = 0..k.
inline std::vector<std::size_t> tile_edges(std::size_t n, std::size_t k) {
  std::vector<std::size_t> e(k + 1);
  for (std::size_t i = 0; i <= k; ++i) e[i] = i * n / k;
  return e;
}

inline std::vector<SeamBorder> seam_report(const Plane<std::int32_t>& labels, std::size_t k) {
  std::vector<SeamBorder> out;
  const auto ys = tile_edges(labels.height, k), xs = tile_edges(labels.width, k);
  for (std::size_t i = 1; i < k; ++i) {
    SeamBorder b{true, xs[i], 0, 0};
    std::set<std::int32_t> touch, cross;
    for (std::size_t y = 0; y < labels.height; ++y) {
      const auto l = labels(y, b.position - 1), r = labels(y, b.position);
      touch.insert(l);
      touch.insert(r);
      if (l == r) cross.insert(l);
    }
    b.adjacent = touch.size();
    b.crossing = cross.size();
    out.push_back(b);
  }
  for (std::size_t i = 1; i < k; ++i) {
    SeamBorder b{false, ys[i], 0, 0};
    std::set<std::int32_t> touch, cross;
    for (std::size_t x = 0; x < labels.width; ++x) {
      const auto t = labels(b.position - 1, x), d = labels(b.position, x);
      touch.insert(t);
      touch.insert(d);
      if (t == d) cross.insert(t);
    }
    b.adjacent = touch.size();
    b.crossing = cross.size();
    out.push_back(b);
  }
  return out;
}

struct TileResult {
  SuperpixelMap map;
  std::vector<SeamBorder> seams;
};

// k x k independent tiles, labels offset by the running superpixel count.
inline TileResult tile_baseline(const Model& model, const Image& image, std::size_t k) {
  if (k < 2) throw UsageError("tile_baseline: k must be at least 2");
  const auto ys = tile_edges(image.height, k), xs = tile_edges(image.width, k);
  for (std::size_t i = 0; i < k; ++i)
    if (ys[i + 1] - ys[i] < kMinInferSide || xs[i + 1] - xs[i] < kMinInferSide)
      throw UsageError("tile_baseline: tiles of " + std::to_string(image.width) + "x" +
                       std::to_string(image.height) + " split " + std::to_string(k) +
                       " ways are smaller than 64 px");
  Plane<std::int32_t> labels(image.height, image.width, 0);
  std::int32_t offset = 0;
  for (std::size_t ty = 0; ty < k; ++ty)
    for (std::size_t tx = 0; tx < k; ++tx) {
      const std::size_t h = ys[ty + 1] - ys[ty], w = xs[tx + 1] - xs[tx];
      const auto sp = infer(model, crop(image, ys[ty], xs[tx], h, w));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) labels(ys[ty] + y, xs[tx] + x) = sp.labels(y, x) + offset;
      offset += sp.n_superpixels;
    }
  TileResult r{compact(std::move(labels)), {}};
  r.seams = seam_report(r.map.labels, k);
  return r;
}

// ---------------------------------------------------------------------------
// Export

inline void save_superpixels(const std::string& path, const SuperpixelMap& sp) {
  if (sp.n_superpixels > 65535)
    throw UsageError("save_superpixels: " + std::to_string(sp.n_superpixels) + " superpixels exceed 16-bit ids");
  save_label_plane(path, sp.labels, true);
}

inline constexpr float kOverlayColor[3] = {1.0f, 0.0f, 0.0f};

inline Image boundary_overlay(const Image& image, const SuperpixelMap& sp) {
  if (image.height != sp.labels.height || image.width != sp.labels.width)
    throw DimensionError("boundary_overlay: image and map sizes differ");
  Image out = image;
  const Mask b = boundary_pixels(sp.labels);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      if (b(y, x))
        for (std::size_t c = 0; c < std::min<std::size_t>(3, out.channels); ++c) out(c, y, x) = kOverlayColor[c];
  return out;
}

inline std::string seam_report_text(const std::vector<SeamBorder>& seams) {
  std::string s = "orientation,position,adjacent,crossing\n";
  for (const auto& b : seams)
    s += std::string(b.vertical ? "vertical" : "horizontal") + "," + std::to_string(b.position) + "," +
         std::to_string(b.adjacent) + "," + std::to_string(b.crossing) + "\n";
  return s;
}

}  // namespace pcnet
