#pragma once

// Finite-difference check of every differentiable primitive plus composite
// graphs built from them, in double precision.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pcnet/assoc.hpp"
#include "pcnet/gradcheck.hpp"
#include "pcnet/losses.hpp"
#include "pcnet/net.hpp"
#include "pcnet/ops.hpp"

namespace pcnet {

inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

using DT = Tensor<double>;
using Leaves = std::vector<DT>;

inline DT random_leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return DT(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero so |x| stays differentiable under the probe.
inline DT away_from_zero(Shape shape, std::uint64_t seed) {
  auto t = random_leaf(std::move(shape), seed, 0.1, 1.0);
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
  return t;
}

struct ConvAlgoScope {
  explicit ConvAlgoScope(ConvAlgo a) : saved(conv_algorithm()) { conv_algorithm() = a; }
  ~ConvAlgoScope() { conv_algorithm() = saved; }
  ConvAlgo saved;
};

}  // namespace detail

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

inline std::vector<GradCheckCase> gradcheck_cases() {
  using detail::DT;
  using detail::Leaves;
  using detail::random_leaf;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, std::function<Leaves()> leaves, std::function<DT(const Leaves&)> fn) {
    cases.push_back({name, [name, leaves, fn](const GradCheckOptions& o) { return grad_check(name, leaves(), fn, o); }});
  };
  const auto w35 = random_leaf({3, 5}, 99, -1, 1, false);
  auto pair35 = [] { return Leaves{random_leaf({3, 5}, 10), random_leaf({3, 5}, 11)}; };

  add_case("add", pair35, [w35](const Leaves& in) { return sum(mul(add(in[0], in[1]), w35)); });
  add_case("sub", pair35, [w35](const Leaves& in) { return sum(mul(sub(in[0], in[1]), w35)); });
  add_case("mul", pair35, [](const Leaves& in) { return sum(mul(in[0], in[1])); });
  add_case("scale", pair35, [w35](const Leaves& in) { return sum(mul(scale(in[0], -1.7), w35)); });
  add_case("add_scalar", pair35, [](const Leaves& in) { return squared_l2(add_scalar(in[0], 0.3)); });
  add_case("leaky_relu", [] { return Leaves{detail::away_from_zero({3, 5}, 12)}; },
           [w35](const Leaves& in) { return sum(mul(leaky_relu(in[0], 0.1), w35)); });
  add_case("abs", [] { return Leaves{detail::away_from_zero({3, 5}, 13)}; },
           [w35](const Leaves& in) { return sum(mul(abs(in[0]), w35)); });
  add_case("log", [] { return Leaves{random_leaf({3, 5}, 14, 0.2, 2.0)}; },
           [w35](const Leaves& in) { return sum(mul(log(in[0]), w35)); });
  add_case("sum", pair35, [](const Leaves& in) { return mul(sum(in[0]), sum(in[1])); });
  add_case("mean", pair35, [](const Leaves& in) { return mean(mul(in[0], in[1])); });
  add_case("squared_l2", pair35, [](const Leaves& in) { return squared_l2(in[0]); });

  const auto w_cat = random_leaf({2, 5, 2, 3}, 4, -1, 1, false);
  add_case("concat_channels", [] { return Leaves{random_leaf({2, 2, 2, 3}, 1), random_leaf({2, 3, 2, 3}, 2)}; },
           [w_cat](const Leaves& in) { return sum(mul(concat_channels<double>({in[0], in[1]}), w_cat)); });
  const auto w_ps = random_leaf({1, 2, 6, 4}, 5, -1, 1, false);
  add_case("pixel_shuffle", [] { return Leaves{random_leaf({1, 8, 3, 2}, 6)}; },
           [w_ps](const Leaves& in) { return sum(mul(pixel_shuffle(in[0], 2), w_ps)); });
  const auto w_pu = random_leaf({1, 8, 3, 2}, 7, -1, 1, false);
  add_case("pixel_unshuffle", [] { return Leaves{random_leaf({1, 2, 6, 4}, 8)}; },
           [w_pu](const Leaves& in) { return sum(mul(pixel_unshuffle(in[0], 2), w_pu)); });
  const auto w_sm = random_leaf({2, 9, 3, 3}, 9, -1, 1, false);
  add_case("softmax_channel", [] { return Leaves{random_leaf({2, 9, 3, 3}, 15, -2, 2)}; },
           [w_sm](const Leaves& in) { return sum(mul(softmax_channel(in[0]), w_sm)); });
  const auto grid_sm = GridSpec::make(5, 6, 2);
  const auto w_msm = random_leaf({1, 9, 5, 6}, 16, -1, 1, false);
  add_case("softmax_channel[masked]", [] { return Leaves{random_leaf({1, 9, 5, 6}, 17, -2, 2)}; },
           [grid_sm, w_msm](const Leaves& in) { return sum(mul(mask_invalid(in[0], grid_sm).q, w_msm)); });

  for (auto algo : {ConvAlgo::im2col, ConvAlgo::direct}) {
    const std::string tag = algo == ConvAlgo::im2col ? "[im2col]" : "[direct]";
    for (std::size_t stride : {1u, 2u}) {
      const auto w_out = random_leaf({2, 4, stride == 1 ? 6u : 3u, stride == 1 ? 5u : 3u}, 20 + stride, -1, 1, false);
      add_case("conv2d" + tag + "[stride " + std::to_string(stride) + "]",
               [] { return Leaves{random_leaf({2, 3, 6, 5}, 21), random_leaf({4, 3, 3, 3}, 22), random_leaf({4}, 23)}; },
               [algo, stride, w_out](const Leaves& in) {
                 detail::ConvAlgoScope scope(algo);
                 return sum(mul(conv2d(in[0], in[1], in[2], stride, 1), w_out));
               });
    }
    const auto w_dc = random_leaf({2, 2, 8, 6}, 24, -1, 1, false);
    add_case("deconv2d" + tag,
             [] { return Leaves{random_leaf({2, 3, 4, 3}, 25), random_leaf({3, 2, 4, 4}, 26), random_leaf({2}, 27)}; },
             [algo, w_dc](const Leaves& in) {
               detail::ConvAlgoScope scope(algo);
               return sum(mul(deconv2d(in[0], in[1], in[2], 2, 1), w_dc));
             });
  }

  const auto grid = GridSpec::make(10, 9, 4);  // 3 x 3 cells, partial border cells
  auto soft_q = [grid] {
    auto q = random_leaf({2, 9, 10, 9}, 30, 0.05, 1.0);
    auto v = q.mutable_data();
    const auto valid = grid.validity();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < valid.size(); ++i)
        if (!valid[i]) v[b * valid.size() + i] = 0;
    return q;
  };
  const auto w_sc = random_leaf({2, 2, 3, 3}, 31, -1, 1, false);
  add_case("soft_centers", [soft_q] { return Leaves{soft_q(), random_leaf({2, 2, 10, 9}, 32)}; },
           [grid, w_sc](const Leaves& in) { return sum(mul(soft_centers(AssocMap<double>{in[0], grid}, in[1]), w_sc)); });
  const auto w_rc = random_leaf({2, 2, 10, 9}, 33, -1, 1, false);
  add_case("reconstruct", [soft_q] { return Leaves{soft_q(), random_leaf({2, 2, 3, 3}, 34)}; },
           [grid, w_rc](const Leaves& in) { return sum(mul(reconstruct(AssocMap<double>{in[0], grid}, in[1]), w_rc)); });

  const auto w_g = random_leaf({3, 2}, 35, -1, 1, false);
  add_case("gather_pixels", [] { return Leaves{random_leaf({2, 2, 3, 3}, 36)}; },
           [w_g](const Leaves& in) { return sum(mul(gather_pixels(in[0], 1, {0, 4, 4}), w_g)); });
  add_case("ld_patch_loss", [] { return Leaves{random_leaf({4, 3}, 37), random_leaf({3, 3}, 38, 1.0, 2.0)}; },
           [](const Leaves& in) { return ld_patch_loss(in[0], in[1], 1e-6); });
  add_case("ld_patch_loss[square]", [] { return Leaves{random_leaf({4, 3}, 39), random_leaf({3, 3}, 40, 1.0, 2.0)}; },
           [](const Leaves& in) { return ld_patch_loss(in[0], in[1], 1e-6, true); });
  const std::vector<Mask> sr_masks = [] {
    std::vector<Mask> m(2, Mask(4, 5, 0));
    for (std::size_t i = 0; i < 20; i += 3) m[0].data[i] = 1;
    for (std::size_t i = 1; i < 20; i += 2) m[1].data[i] = 1;
    return m;
  }();
  add_case("sr_loss", [] { return Leaves{detail::away_from_zero({2, 3, 4, 5}, 41), random_leaf({2, 3, 4, 5}, 42, -0.01, 0.01)}; },
           [sr_masks](const Leaves& in) { return sr_loss(in[0], in[1], sr_masks); });

  // Composite: logits -> masked association -> superpixel loss.
  const auto labels = [] {
    std::vector<Plane<std::int32_t>> l(1, Plane<std::int32_t>(10, 9, 0));
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 9; ++x) l[0](y, x) = (y + 2 * x) % 7 < 3 ? 1 : (x > 6 ? 2 : 0);
    return one_hot<double>(l, 3);
  }();
  add_case("composite:superpixel_loss", [] { return Leaves{random_leaf({1, 9, 10, 9}, 50, -2, 2)}; },
           [grid, labels](const Leaves& in) {
             return superpixel_loss(mask_invalid(in[0], grid), labels, normalized_coords<double>(10, 9), 0.7).total;
           });

  // Composite: tiny network -> SP + SR losses through every parameter.
  NetConfig tiny;
  tiny.base_channels = 1;
  tiny.embed_dim = 2;
  tiny.seed = 3;
  const auto image = random_leaf({1, 3, 16, 16}, 51, 0, 1, false);
  const auto target = random_leaf({1, 3, 64, 64}, 52, 0, 1, false);
  const auto net_labels = [] {
    std::vector<Plane<std::int32_t>> l(1, Plane<std::int32_t>(64, 64, 0));
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 24; x < 64; ++x) l[0](y, x) = 1;
    return one_hot<double>(l, 2);
  }();
  const std::vector<Mask> net_mask(1, Mask(64, 64, 1));
  auto net_leaves = [tiny] {
    Leaves out;
    for (auto& [_, t] : init_params<double>(tiny)) out.push_back(t);
    return out;
  };
  auto as_params = [tiny](const Leaves& in) {
    Params<double> p;
    std::size_t i = 0;
    for (const auto& spec : param_layout(tiny)) p.add(spec.name, in[i++]);
    return p;
  };
  // Checked along random directions: per-entry probes of a network with many
  // leaky-ReLU kinks are dominated by kink crossings on tiny gradient entries.
  auto net_fn = [=](const Leaves& in) {
    const auto out = forward(as_params(in), tiny, image);
    const auto grid64 = GridSpec::make(64, 64, 16);
    const auto sp = superpixel_loss(mask_invalid(out.logits, grid64), net_labels, normalized_coords<double>(64, 64));
    return add(sp.total, sr_loss(out.sr, target, net_mask));
  };
  cases.push_back({"composite:network_sp_sr", [net_leaves, net_fn](const GradCheckOptions& o) {
                     auto d = o;
                     d.step = std::min(o.step, 1e-6);
                     return grad_check_directional("composite:network_sp_sr", net_leaves(), net_fn, 32, d);
                   }});

  // Composite: shared embedding feeding both the LD term and an SP term via total_loss.
  const std::vector<LdPatch> patches{{0, {0, 1, 8, 9}, {2, 3, 10, 11}}, {0, {20, 21, 28}, {22, 29, 30, 31}}};
  add_case("composite:embedding_ld_total",
           [] {
             return Leaves{random_leaf({1, 3, 8, 8}, 53), random_leaf({4, 3, 3, 3}, 54), random_leaf({4}, 55),
                           random_leaf({9, 4, 3, 3}, 56), random_leaf({9}, 57)};
           },
           [patches](const Leaves& in) {
             const auto emb = leaky_relu(conv2d(in[0], in[1], in[2], 1, 1), 0.1);
             const auto assoc = mask_invalid(conv2d(emb, in[3], in[4], 1, 1), GridSpec::make(8, 8, 4));
             std::vector<Plane<std::int32_t>> l(1, Plane<std::int32_t>(8, 8, 0));
             for (std::size_t y = 0; y < 8; ++y)
               for (std::size_t x = 5; x < 8; ++x) l[0](y, x) = 1;
             const auto sp = superpixel_loss(assoc, one_hot<double>(l, 2), normalized_coords<double>(8, 8));
             LossTerms<double> t{sp.total, sp.spatial, sp.cross_entropy, sp.spatial, ld_loss(emb, patches, 1e-6)};
             return total_loss(t, LossWeights{});
           });
  return cases;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt = {}) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradcheck_cases()) out.push_back(c.run(opt));
  return out;
}

}  // namespace pcnet
