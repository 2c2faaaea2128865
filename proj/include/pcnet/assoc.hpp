#pragma once

// Pixel <-> grid-cell association geometry.
//
// Every output pixel p has a home cell (floor(y/C), floor(x/C)) and nine
// candidate cells: the home cell and its 8 grid neighbours. Channel c of an
// association map corresponds to the offset (c/3 - 1, c%3 - 1), i.e. row-major
// from (-1,-1) to (+1,+1). Candidates that fall outside the grid are invalid.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <unordered_map>
#include <vector>

#include "pcnet/image.hpp"
#include "pcnet/ops.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

inline constexpr std::size_t kNeighbours = 9;

struct GridSpec {
  std::size_t cell = 16;
  std::size_t image_h = 0, image_w = 0;
  std::size_t grid_h = 0, grid_w = 0;

  static GridSpec make(std::size_t image_h, std::size_t image_w, std::size_t cell = 16) {
    if (cell == 0) throw ConfigError("grid cell size must be positive");
    return {cell, image_h, image_w, (image_h + cell - 1) / cell, (image_w + cell - 1) / cell};
  }

  std::size_t cells() const { return grid_h * grid_w; }
  std::size_t pixels() const { return image_h * image_w; }

  // Cell id reached from pixel (y,x) through channel c, or -1 when invalid.
  std::ptrdiff_t candidate(std::size_t y, std::size_t x, std::size_t c) const {
    const auto gy = static_cast<std::ptrdiff_t>(y / cell) + static_cast<std::ptrdiff_t>(c / 3) - 1;
    const auto gx = static_cast<std::ptrdiff_t>(x / cell) + static_cast<std::ptrdiff_t>(c % 3) - 1;
    if (gy < 0 || gx < 0 || gy >= static_cast<std::ptrdiff_t>(grid_h) || gx >= static_cast<std::ptrdiff_t>(grid_w))
      return -1;
    return gy * static_cast<std::ptrdiff_t>(grid_w) + gx;
  }

  // Candidate table [9 * pixels], channel-major like the association map.
  std::vector<std::int32_t> candidate_table() const {
    std::vector<std::int32_t> table(kNeighbours * pixels());
    for (std::size_t c = 0; c < kNeighbours; ++c)
      for (std::size_t y = 0; y < image_h; ++y)
        for (std::size_t x = 0; x < image_w; ++x)
          table[c * pixels() + y * image_w + x] = static_cast<std::int32_t>(candidate(y, x, c));
    return table;
  }

  std::vector<std::uint8_t> validity() const {
    auto table = candidate_table();
    std::vector<std::uint8_t> valid(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) valid[i] = table[i] >= 0 ? 1 : 0;
    return valid;
  }
};

// Per-pixel distribution over the nine candidate cells, Q [B,9,H,W].
template <typename T>
struct AssocMap {
  Tensor<T> q;
  GridSpec grid;
};

// Softmax over the valid candidates only; invalid channels carry exactly 0.
template <typename T>
AssocMap<T> mask_invalid(const Tensor<T>& logits, const GridSpec& grid) {
  if (logits.rank() != 4 || logits.dim(1) != kNeighbours || logits.dim(2) != grid.image_h ||
      logits.dim(3) != grid.image_w)
    throw ConfigError("mask_invalid: logits " + to_string(logits.shape()) + " do not match grid " +
                      std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w));
  const auto valid = grid.validity();
  return {softmax_channel(logits, &valid), grid};
}

inline constexpr double kCenterEps = 1e-8;

// h(s) = sum_{p: s in N_p} F(p) Q(p,s) / (sum_{p: s in N_p} Q(p,s) + eps).
// F [B,K,H,W] -> [B,K,grid_h,grid_w].
template <typename T>
Tensor<T> soft_centers(const AssocMap<T>& assoc, const Tensor<T>& features, T eps = T(kCenterEps)) {
  const auto& q = assoc.q;
  const auto& grid = assoc.grid;
  if (features.rank() != 4 || features.dim(0) != q.dim(0) || features.dim(2) != grid.image_h ||
      features.dim(3) != grid.image_w)
    throw ConfigError("soft_centers: features " + to_string(features.shape()) + " incompatible with Q " +
                      to_string(q.shape()));
  const std::size_t B = q.dim(0), K = features.dim(1), P = grid.pixels(), S = grid.cells();
  const auto table = grid.candidate_table();
  std::vector<T> num(B * K * S, T{0}), den(B * S, T{0});
  const T* qv = q.data().data();
  const T* fv = features.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < kNeighbours; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const auto s = table[c * P + p];
        if (s < 0) continue;
        const T w = qv[(b * kNeighbours + c) * P + p];
        den[b * S + static_cast<std::size_t>(s)] += w;
        for (std::size_t k = 0; k < K; ++k) num[(b * K + k) * S + static_cast<std::size_t>(s)] += w * fv[(b * K + k) * P + p];
      }
  std::vector<T> centers(num.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t s = 0; s < S; ++s)
        centers[(b * K + k) * S + s] = num[(b * K + k) * S + s] / (den[b * S + s] + eps);

  return Tensor<T>::from_op(
      Shape{B, K, grid.grid_h, grid.grid_w}, std::move(centers), {q, features},
      [table, den = std::move(den), B, K, P, S, eps](detail::Node<T>& n) {
        const T* qv = n.inputs[0]->value.data();
        const T* fv = n.inputs[1]->value.data();
        const T* hv = n.value.data();
        T* dq = detail::wants_grad(n, 0) ? detail::grad_of(n, 0).data() : nullptr;
        T* df = detail::wants_grad(n, 1) ? detail::grad_of(n, 1).data() : nullptr;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < kNeighbours; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const auto s = table[c * P + p];
              if (s < 0) continue;
              const auto su = static_cast<std::size_t>(s);
              const T inv = T{1} / (den[b * S + su] + eps);
              const T w = qv[(b * kNeighbours + c) * P + p];
              T acc{0};
              for (std::size_t k = 0; k < K; ++k) {
                const T g = n.grad[(b * K + k) * S + su];
                if (dq) acc += g * (fv[(b * K + k) * P + p] - hv[(b * K + k) * S + su]);
                if (df) df[(b * K + k) * P + p] += g * w * inv;
              }
              if (dq) dq[(b * kNeighbours + c) * P + p] += acc * inv;
            }
      });
}

// F'(p) = sum_{s in N_p} h(s) Q(p,s). centers [B,K,grid_h,grid_w] -> [B,K,H,W].
template <typename T>
Tensor<T> reconstruct(const AssocMap<T>& assoc, const Tensor<T>& centers) {
  const auto& q = assoc.q;
  const auto& grid = assoc.grid;
  if (centers.rank() != 4 || centers.dim(0) != q.dim(0) || centers.dim(2) != grid.grid_h ||
      centers.dim(3) != grid.grid_w)
    throw ConfigError("reconstruct: centers " + to_string(centers.shape()) + " do not match the grid");
  const std::size_t B = q.dim(0), K = centers.dim(1), P = grid.pixels(), S = grid.cells();
  const auto table = grid.candidate_table();
  std::vector<T> out(B * K * P, T{0});
  const T* qv = q.data().data();
  const T* hv = centers.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < kNeighbours; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const auto s = table[c * P + p];
        if (s < 0) continue;
        const T w = qv[(b * kNeighbours + c) * P + p];
        for (std::size_t k = 0; k < K; ++k)
          out[(b * K + k) * P + p] += w * hv[(b * K + k) * S + static_cast<std::size_t>(s)];
      }
  return Tensor<T>::from_op(
      Shape{B, K, grid.image_h, grid.image_w}, std::move(out), {q, centers}, [table, B, K, P, S](detail::Node<T>& n) {
        const T* qv = n.inputs[0]->value.data();
        const T* hv = n.inputs[1]->value.data();
        T* dq = detail::wants_grad(n, 0) ? detail::grad_of(n, 0).data() : nullptr;
        T* dh = detail::wants_grad(n, 1) ? detail::grad_of(n, 1).data() : nullptr;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < kNeighbours; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const auto s = table[c * P + p];
              if (s < 0) continue;
              const auto su = static_cast<std::size_t>(s);
              const T w = qv[(b * kNeighbours + c) * P + p];
              T acc{0};
              for (std::size_t k = 0; k < K; ++k) {
                const T g = n.grad[(b * K + k) * P + p];
                acc += g * hv[(b * K + k) * S + su];
                if (dh) dh[(b * K + k) * S + su] += g * w;
              }
              if (dq) dq[(b * kNeighbours + c) * P + p] += acc;
            }
      });
}

// ---------------------------------------------------------------------------
// Decoding

struct SuperpixelMap {
  Plane<std::int32_t> labels;
  int n_superpixels = 0;
};

// Relabels ids to 0..n-1 preserving their relative order.
inline SuperpixelMap compact(Plane<std::int32_t> ids) {
  std::vector<std::int32_t> used(ids.data.begin(), ids.data.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  for (auto& v : ids.data)
    v = static_cast<std::int32_t>(std::lower_bound(used.begin(), used.end(), v) - used.begin());
  return {std::move(ids), static_cast<int>(used.size())};
}

// Raw cell id of the most probable valid candidate per pixel (ties -> lowest
// channel) for batch item `b`.
template <typename T>
Plane<std::int32_t> decode_cells(const AssocMap<T>& assoc, std::size_t b = 0) {
  const auto& grid = assoc.grid;
  const std::size_t P = grid.pixels();
  Plane<std::int32_t> cells(grid.image_h, grid.image_w, 0);
  const T* qv = assoc.q.data().data() + b * kNeighbours * P;
  for (std::size_t y = 0; y < grid.image_h; ++y)
    for (std::size_t x = 0; x < grid.image_w; ++x) {
      const std::size_t p = y * grid.image_w + x;
      std::ptrdiff_t best = -1;
      T best_q = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < kNeighbours; ++c) {
        const auto s = grid.candidate(y, x, c);
        if (s < 0) continue;
        const T v = qv[c * P + p];
        if (v > best_q) {
          best_q = v;
          best = s;
        }
      }
      cells(y, x) = static_cast<std::int32_t>(best);
    }
  return cells;
}

template <typename T>
SuperpixelMap hard_assign(const AssocMap<T>& assoc, std::size_t b = 0) {
  return compact(decode_cells(assoc, b));
}

// Merges stray fragments so that every label is one 4-connected region.
// Components that are not their label's largest, or smaller than min_size,
// are absorbed by the adjacent component sharing the longest border (ties ->
// lowest adjacent label, then first-discovered component).
inline SuperpixelMap enforce_connectivity(const SuperpixelMap& sp, std::size_t min_size) {
  if (min_size < 1) throw UsageError("enforce_connectivity: min_size must be >= 1");
  const auto& L = sp.labels;
  const std::size_t H = L.height, W = L.width, N = H * W;
  if (N == 0) return sp;

  // 4-connected components in raster discovery order.
  std::vector<std::int32_t> comp(N, -1);
  std::vector<std::int32_t> comp_label;
  std::vector<std::size_t> comp_size;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < N; ++start) {
    if (comp[start] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comp_label.size());
    const auto label = L.data[start];
    comp_label.push_back(label);
    comp_size.push_back(0);
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++comp_size[static_cast<std::size_t>(id)];
      const std::size_t y = p / W, x = p % W;
      auto visit = [&](std::size_t q) {
        if (comp[q] < 0 && L.data[q] == label) {
          comp[q] = id;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - W);
      if (y + 1 < H) visit(p + W);
      if (x > 0) visit(p - 1);
      if (x + 1 < W) visit(p + 1);
    }
  }
  const std::size_t C = comp_label.size();
  if (C == 1) return sp;

  // Shared border lengths between components.
  std::vector<std::map<std::int32_t, std::size_t>> adj(C);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto a = comp[y * W + x];
      if (x + 1 < W) {
        const auto b = comp[y * W + x + 1];
        if (a != b) {
          ++adj[static_cast<std::size_t>(a)][b];
          ++adj[static_cast<std::size_t>(b)][a];
        }
      }
      if (y + 1 < H) {
        const auto b = comp[(y + 1) * W + x];
        if (a != b) {
          ++adj[static_cast<std::size_t>(a)][b];
          ++adj[static_cast<std::size_t>(b)][a];
        }
      }
    }

  std::map<std::int32_t, std::size_t> largest;  // label -> component
  for (std::size_t c = 0; c < C; ++c) {
    auto it = largest.find(comp_label[c]);
    if (it == largest.end() || comp_size[c] > comp_size[it->second]) largest[comp_label[c]] = c;
  }
  auto is_bad = [&](std::size_t c) { return largest[comp_label[c]] != c || comp_size[c] < min_size; };

  std::vector<std::int32_t> parent(C);
  std::iota(parent.begin(), parent.end(), 0);
  std::set<std::pair<std::size_t, std::size_t>> pending;  // (size, component)
  for (std::size_t c = 0; c < C; ++c)
    if (is_bad(c)) pending.emplace(comp_size[c], c);

  while (!pending.empty()) {
    const auto [size, a] = *pending.begin();
    pending.erase(pending.begin());
    if (adj[a].empty()) continue;  // nothing to merge into
    std::int32_t target = -1;
    for (const auto& [b, border] : adj[a]) {
      const auto bu = static_cast<std::size_t>(b);
      if (target < 0) {
        target = b;
        continue;
      }
      const auto tu = static_cast<std::size_t>(target);
      const auto best = adj[a][target];
      if (border > best || (border == best && comp_label[bu] < comp_label[tu])) target = b;
    }
    const auto t = static_cast<std::size_t>(target);
    const bool target_pending = pending.erase({comp_size[t], t}) > 0;
    parent[a] = target;
    comp_size[t] += size;
    for (const auto& [c, border] : adj[a]) {
      const auto cu = static_cast<std::size_t>(c);
      adj[cu].erase(static_cast<std::int32_t>(a));
      if (cu == t) continue;
      adj[t][c] += border;
      adj[cu][target] += border;
    }
    adj[a].clear();
    if (target_pending || comp_size[t] < min_size) pending.emplace(comp_size[t], t);
  }

  auto root = [&](std::size_t c) {
    while (parent[c] != static_cast<std::int32_t>(c)) c = static_cast<std::size_t>(parent[c]);
    return c;
  };
  Plane<std::int32_t> out(H, W);
  for (std::size_t p = 0; p < N; ++p) out.data[p] = comp_label[root(static_cast<std::size_t>(comp[p]))];
  return compact(std::move(out));
}

inline std::size_t default_min_size(std::size_t cell) { return std::max<std::size_t>(1, cell * cell / 4); }

}  // namespace pcnet
