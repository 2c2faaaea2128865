#pragma once

// Boundary recall / precision with a distance tolerance, and BR-BP curves.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pcnet/assoc.hpp"
#include "pcnet/checkpoint.hpp"
#include "pcnet/image.hpp"

namespace pcnet {

enum class MatchNorm { chebyshev, euclidean };

template <typename T>
Mask boundary_of(const Plane<T>& ids) {
  return boundary_pixels(ids);
}
inline Mask boundary_of(const SuperpixelMap& sp) { return boundary_pixels(sp.labels); }
inline Mask boundary_of(const LabelMap& l) { return boundary_pixels(l.labels); }

namespace detail {

// Exact Chebyshev distance to the nearest set pixel (two-pass chamfer with
// unit weights on all 8 neighbours). Unreachable -> max.
inline std::vector<std::int64_t> chebyshev_distance(const Mask& m) {
  const std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  const std::size_t H = m.height, W = m.width;
  std::vector<std::int64_t> d(H * W);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] ? 0 : inf;
  auto relax = [&](std::size_t y, std::size_t x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
    const auto ny = static_cast<std::ptrdiff_t>(y) + dy, nx = static_cast<std::ptrdiff_t>(x) + dx;
    if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(H) || nx >= static_cast<std::ptrdiff_t>(W)) return;
    auto& cur = d[y * W + x];
    cur = std::min(cur, d[static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx)] + 1);
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      relax(y, x, -1, -1);
      relax(y, x, -1, 0);
      relax(y, x, -1, 1);
      relax(y, x, 0, -1);
    }
  for (std::size_t y = H; y-- > 0;)
    for (std::size_t x = W; x-- > 0;) {
      relax(y, x, 1, 1);
      relax(y, x, 1, 0);
      relax(y, x, 1, -1);
      relax(y, x, 0, 1);
    }
  return d;
}

// 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out) {
  const std::size_t n = f.size();
  const std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < inf) {
      first = q;
      break;
    }
  out.assign(n, inf);
  if (first == n) return;
  v[0] = first;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] >= inf) continue;
    double s;
    while (true) {
      const auto p = v[k];
      s = (double(f[q] + std::int64_t(q * q)) - double(f[p] + std::int64_t(p * p))) / (2.0 * double(q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {  // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const auto p = static_cast<std::int64_t>(v[k]);
    const auto dq = static_cast<std::int64_t>(q) - p;
    out[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance to the nearest set pixel.
inline std::vector<std::int64_t> squared_euclidean_distance(const Mask& m) {
  const std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  const std::size_t H = m.height, W = m.width;
  std::vector<std::int64_t> d(H * W), col(H), tmp;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] ? 0 : inf;
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) col[y] = d[y * W + x];
    edt_1d(col, tmp);
    for (std::size_t y = 0; y < H; ++y) d[y * W + x] = tmp[y];
  }
  std::vector<std::int64_t> row(W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) row[x] = d[y * W + x];
    edt_1d(row, tmp);
    for (std::size_t x = 0; x < W; ++x) d[y * W + x] = tmp[x];
  }
  return d;
}

struct MatchCount {
  std::size_t hits = 0, total = 0;
};

inline MatchCount match(const Mask& from, const Mask& to, int tol, MatchNorm norm) {
  MatchCount c;
  const auto d = norm == MatchNorm::chebyshev ? chebyshev_distance(to) : squared_euclidean_distance(to);
  const std::int64_t limit = norm == MatchNorm::chebyshev ? tol : std::int64_t(tol) * tol;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from.data[i]) continue;
    ++c.total;
    if (d[i] <= limit) ++c.hits;
  }
  return c;
}

}  // namespace detail

struct BoundaryScore {
  double br = 1, bp = 1;
  std::size_t gt_hits = 0, gt_total = 0, pred_hits = 0, pred_total = 0;
};

// br: share of gt boundary pixels with a predicted boundary pixel within tol;
// bp: the converse. Empty sets score 1.
inline BoundaryScore br_bp(const Mask& pred, const Mask& gt, int tol, MatchNorm norm = MatchNorm::chebyshev) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("br_bp: prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                         " vs ground truth " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  if (tol < 0) throw UsageError("br_bp: tolerance must be >= 0");
  const auto r = detail::match(gt, pred, tol, norm);
  const auto p = detail::match(pred, gt, tol, norm);
  BoundaryScore s{1, 1, r.hits, r.total, p.hits, p.total};
  if (r.total == 0) spdlog::debug("br_bp: empty ground-truth boundary, recall set to 1");
  else s.br = double(r.hits) / double(r.total);
  if (p.total == 0) spdlog::debug("br_bp: empty predicted boundary, precision set to 1");
  else s.bp = double(p.hits) / double(p.total);
  return s;
}

inline int default_tolerance(std::size_t h, std::size_t w) {
  const double diag = std::sqrt(double(h) * double(h) + double(w) * double(w));
  return std::max(1, static_cast<int>(std::lround(0.0025 * diag)));
}

struct CurvePoint {
  std::size_t target_count = 0;
  double achieved_count = 0;
  double br = 0, bp = 0;
};

// Produces a superpixel map at the image's resolution for a target count.
using Segmenter = std::function<SuperpixelMap(const Image&, std::size_t target_count)>;

// tol < 0 selects default_tolerance per image. Points are averages of the
// per-image scores, accumulated in dataset order.
inline std::vector<CurvePoint> curve(const std::vector<Image>& images, const std::vector<LabelMap>& labels,
                                     const std::vector<std::size_t>& counts, const Segmenter& segment, int tol = -1,
                                     MatchNorm norm = MatchNorm::chebyshev) {
  if (images.size() != labels.size()) throw UsageError("curve: image/label count mismatch");
  if (images.empty() && !counts.empty()) throw DataError("empty dataset");
  if (!std::is_sorted(counts.begin(), counts.end())) throw UsageError("curve: counts must be sorted ascending");
  std::size_t min_pixels = std::numeric_limits<std::size_t>::max();
  for (const auto& im : images) min_pixels = std::min(min_pixels, im.height * im.width);
  std::vector<CurvePoint> out;
  for (const auto target : counts) {
    if (target == 0 || target > min_pixels) {
      spdlog::warn("curve: skipping target count {} (outside 1..{})", target, min_pixels);
      continue;
    }
    CurvePoint pt{target, 0, 0, 0};
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto sp = segment(images[i], target);
      const int t = tol >= 0 ? tol : default_tolerance(images[i].height, images[i].width);
      const auto s = br_bp(boundary_of(sp), boundary_of(labels[i]), t, norm);
      pt.achieved_count += sp.n_superpixels;
      pt.br += s.br;
      pt.bp += s.bp;
    }
    const auto n = static_cast<double>(images.size());
    pt.achieved_count /= n;
    pt.br /= n;
    pt.bp /= n;
    out.push_back(pt);
  }
  return out;
}

inline std::string curve_csv(const std::vector<CurvePoint>& points) {
  std::string csv = "target_count,achieved_count,br,bp\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.9f,%.9f\n", p.target_count, p.achieved_count, p.br, p.bp);
    csv += buf;
  }
  return csv;
}

inline void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& points) {
  write_file_atomic(path, curve_csv(points));
}

}  // namespace pcnet
