#pragma once

// Central finite-difference checking of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pcnet/tensor.hpp"

namespace pcnet {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar entries or directions compared
};

struct GradCheckOptions {
  double step = 1e-4;
  // Entries with both gradients below this magnitude are compared absolutely.
  double floor = 1e-3;
  // Upper bound on probed entries per leaf; larger leaves are sub-sampled.
  std::size_t max_probes_per_leaf = 48;
  std::uint64_t seed = 1;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// `fn` must rebuild the graph from the given leaves on every call and return a
// 0-dimensional loss.
inline GradCheckResult grad_check(const std::string& name, std::vector<Tensor<double>> leaves, const GradFn& fn,
                                  const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) leaf.zero_grad();
  auto loss = fn(leaves);
  backward(loss);

  GradCheckResult result{name, 0.0, 0};
  std::mt19937_64 rng(opt.seed);
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) continue;
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    std::vector<std::size_t> probes(leaf.size());
    for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
    if (probes.size() > opt.max_probes_per_leaf) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(opt.max_probes_per_leaf);
    }
    auto values = leaf.mutable_data();
    for (std::size_t i : probes) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = fn(leaves).item();
      values[i] = saved - opt.step;
      const double down = fn(leaves).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric, opt.floor));
      ++result.checked;
    }
    leaf.zero_grad();
  }
  return result;
}

// Directional variant: compares g . v with the central difference along v for
// `directions` random unit vectors spanning every leaf at once.
inline GradCheckResult grad_check_directional(const std::string& name, std::vector<Tensor<double>> leaves,
                                              const GradFn& fn, std::size_t directions,
                                              const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(fn(leaves));
  std::vector<std::vector<double>> grads, saved;
  for (auto& leaf : leaves) {
    grads.emplace_back(leaf.size(), 0.0);
    if (leaf.requires_grad() && leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), grads.back().begin());
    saved.emplace_back(leaf.values());
    leaf.zero_grad();
  }

  GradCheckResult result{name, 0.0, 0};
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto shift = [&](const std::vector<std::vector<double>>& dir, double t) {
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      auto v = leaves[l].mutable_data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = saved[l][i] + t * dir[l][i];
    }
  };
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<std::vector<double>> dir;
    double norm2 = 0.0;
    for (const auto& leaf : leaves) {
      dir.emplace_back(leaf.size(), 0.0);
      if (!leaf.requires_grad()) continue;
      for (auto& x : dir.back()) {
        x = normal(rng);
        norm2 += x * x;
      }
    }
    const double inv = norm2 > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
    double analytic = 0.0;
    for (std::size_t l = 0; l < leaves.size(); ++l)
      for (std::size_t i = 0; i < dir[l].size(); ++i) {
        dir[l][i] *= inv;
        analytic += grads[l][i] * dir[l][i];
      }
    shift(dir, opt.step);
    const double up = fn(leaves).item();
    shift(dir, -opt.step);
    const double down = fn(leaves).item();
    shift(dir, 0.0);
    const double numeric = (up - down) / (2.0 * opt.step);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric, opt.floor));
    ++result.checked;
  }
  return result;
}

}  // namespace pcnet
