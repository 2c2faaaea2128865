#pragma once

// Training loop: dual global/local forward over one parameter set, loss
// assembly, backward, Adam update, step-decay schedule and checkpointing.

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pcnet/assoc.hpp"
#include "pcnet/checkpoint.hpp"
#include "pcnet/data.hpp"
#include "pcnet/losses.hpp"
#include "pcnet/net.hpp"
#include "pcnet/sampler.hpp"

namespace pcnet {

struct TrainConfig {
  double lr0 = 5e-5;
  std::size_t lr_decay_every = 2000;
  double lr_decay_factor = 0.1;
  std::size_t iterations = 4000;
  std::size_t batch_size = 8;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;
  std::size_t cell = 16;
  NetConfig net;
  SampleGeometry geometry;

  void validate() const {
    if (!(lr0 > 0) || lr_decay_every == 0 || !(lr_decay_factor > 0) || batch_size == 0 || cell == 0 ||
        checkpoint_every == 0)
      throw ConfigError("training hyper-parameters must be positive");
    weights.validate();
    net.validate();
    geometry.validate();
    if (geometry.input() % net.input_multiple() != 0)
      throw ConfigError("network input " + std::to_string(geometry.input()) + " must be a multiple of " +
                        std::to_string(net.input_multiple()));
  }

  static TrainConfig paper() { return {}; }

  // Small enough for one CPU core: 64x64 inputs, batch 2, 300 steps.
  static TrainConfig desk() {
    TrainConfig c;
    c.lr0 = 1e-3;
    c.lr_decay_every = 200;
    c.iterations = 300;
    c.batch_size = 2;
    c.checkpoint_every = 100;
    c.geometry = SampleGeometry::desk(64);
    return c;
  }
};

inline double learning_rate(const TrainConfig& c, std::size_t step) {
  return c.lr0 * std::pow(c.lr_decay_factor, static_cast<double>(step / c.lr_decay_every));
}

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::vector<T>> m, v;
  std::size_t step = 0;

  explicit AdamState(const Params<T>& params = {}) {
    for (const auto& [_, p] : params) {
      m.emplace_back(p.size(), T{0});
      v.emplace_back(p.size(), T{0});
    }
  }
};

// Bias-corrected Adam on every parameter's accumulated gradient.
template <typename T>
void adam_update(Params<T>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size()) throw ConfigError("Adam state does not match the parameter set");
  ++state.step;
  const double c1 = 1.0 - std::pow(AdamState<T>::beta1, double(state.step));
  const double c2 = 1.0 - std::pow(AdamState<T>::beta2, double(state.step));
  std::size_t i = 0;
  for (auto& [_, p] : params) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    ++i;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(AdamState<T>::beta1 * m[k] + (1 - AdamState<T>::beta1) * gk);
      v[k] = static_cast<T>(AdamState<T>::beta2 * v[k] + (1 - AdamState<T>::beta2) * gk * gk);
      const double mh = m[k] / c1, vh = v[k] / c2;
      w[k] = static_cast<T>(w[k] - lr * mh / (std::sqrt(vh) + AdamState<T>::eps));
    }
  }
}

struct LossBreakdown {
  double sp_g = 0, sr_g = 0, sp_l = 0, sr_l = 0, ld = 0, total = 0;
  std::size_t ld_patches = 0;
};

template <typename T>
struct StepGraph {
  LossTerms<T> terms;
  Tensor<T> total;
  std::size_t ld_patches = 0;
};

namespace detail {

inline Plane<std::int32_t> mask_labels(const Mask& m) {
  Plane<std::int32_t> out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] ? 1 : 0;
  return out;
}

template <typename T>
T checked(const Tensor<T>& t, const char* name) {
  const T v = t.item();
  if (!std::isfinite(static_cast<double>(v))) throw NumericError(std::string("non-finite ") + name + " loss");
  return v;
}

}  // namespace detail

// Builds the full loss graph of one step. Both branches run through the same
// Params; `rng` drives LD patch sampling.
template <typename T>
StepGraph<T> build_step(const Params<T>& params, const TrainConfig& cfg, const std::vector<TrainSample>& batch,
                        std::mt19937_64& rng) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const auto& net = cfg.net;
  const std::size_t out = batch.front().g_star.height;
  const auto grid = GridSpec::make(out, out, cfg.cell);
  const auto coords = normalized_coords<T>(out, out);
  const int classes = batch.front().s_g.num_classes;

  std::vector<Image> g, g_star, l, l_star;
  std::vector<Plane<std::int32_t>> s_g, m;
  std::vector<Mask> b_g, b_l;
  for (const auto& s : batch) {
    g.push_back(s.g);
    g_star.push_back(s.g_star);
    l.push_back(s.l);
    l_star.push_back(s.l_star);
    s_g.push_back(s.s_g.labels);
    m.push_back(detail::mask_labels(s.m));
    b_g.push_back(s.b_g);
    b_l.push_back(s.b_l);
  }

  StepGraph<T> step;
  auto global = forward(params, net, to_tensor<T>(g));
  auto q_g = mask_invalid(global.logits, grid);
  step.terms.sp_global = superpixel_loss(q_g, one_hot<T>(s_g, std::size_t(classes)), coords, cfg.weights.spatial_weight).total;
  step.terms.sr_global = sr_loss(global.sr, to_tensor<T>(g_star), b_g);

  auto local = forward(params, net, to_tensor<T>(l));
  auto q_l = mask_invalid(local.logits, grid);
  step.terms.sp_local = superpixel_loss(q_l, one_hot<T>(m, 2), coords, cfg.weights.spatial_weight).total;
  step.terms.sr_local = sr_loss(local.sr, to_tensor<T>(l_star), b_l);

  std::vector<LdPatch> patches;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto p = sample_ld_patches(batch[b].s_g, b, cfg.geometry.ld_kernel, cfg.geometry.ld_count, rng);
    patches.insert(patches.end(), p.begin(), p.end());
  }
  step.ld_patches = patches.size();
  step.terms.ld = ld_loss(global.embedding, patches, cfg.weights.ld_eps, cfg.weights.ld_square_scatter);
  step.total = total_loss(step.terms, cfg.weights);
  return step;
}

// One optimisation step; throws NumericError naming the first non-finite term.
template <typename T>
LossBreakdown train_step(Params<T>& params, AdamState<T>& adam, const TrainConfig& cfg,
                         const std::vector<TrainSample>& batch, std::mt19937_64& rng, double lr) {
  params.zero_grad();
  auto step = build_step(params, cfg, batch, rng);
  LossBreakdown r;
  r.sp_g = detail::checked(step.terms.sp_global, "sp_g");
  r.sr_g = detail::checked(step.terms.sr_global, "sr_g");
  r.sp_l = detail::checked(step.terms.sp_local, "sp_l");
  r.sr_l = detail::checked(step.terms.sr_local, "sr_l");
  r.ld = detail::checked(step.terms.ld, "ld");
  r.total = detail::checked(step.total, "total");
  r.ld_patches = step.ld_patches;
  backward(step.total);
  for (const auto& [name, p] : params)
    for (auto g : p.grad())
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + name);
  adam_update(params, adam, lr);
  return r;
}

// ---------------------------------------------------------------------------
// Sample schedule: epoch-wise permutations derived from (seed, epoch).

inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xe90cu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::vector<TrainSample> make_batch(const std::vector<Sample>& data, const TrainConfig& cfg, std::size_t step) {
  const std::size_t n = data.size();
  std::vector<TrainSample> batch;
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    const std::size_t q = step * cfg.batch_size + i;
    if (q / n != cached_epoch) {
      cached_epoch = q / n;
      order = epoch_order(cfg.seed, cached_epoch, n);
    }
    const auto& s = data[order[q % n]];
    auto rng = sample_rng(cfg.seed, q);
    batch.push_back(make_train_sample(s.image, s.label, rng, cfg.geometry));
  }
  return batch;
}

inline std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), 0x1du};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Persistence

inline std::string adam_path(const std::string& checkpoint) { return checkpoint + ".adam"; }

template <typename T>
void save_adam(const std::string& path, const Params<T>& params, const AdamState<T>& s) {
  std::vector<NamedArray> arrays;
  arrays.push_back({"adam.step", Shape{1}, {static_cast<float>(s.step)}});
  std::size_t i = 0;
  for (const auto& [name, p] : params) {
    arrays.push_back({"adam.m." + name, p.shape(), {s.m[i].begin(), s.m[i].end()}});
    arrays.push_back({"adam.v." + name, p.shape(), {s.v[i].begin(), s.v[i].end()}});
    ++i;
  }
  save_arrays(path, arrays);
}

template <typename T>
AdamState<T> load_adam(const std::string& path, const Params<T>& params) {
  const auto arrays = load_arrays(path);
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto get = [&](const std::string& name, const Shape& shape) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointShapeError("optimizer state is missing " + name);
    if (it->second->shape != shape) throw CheckpointShapeError("optimizer tensor " + name + " has wrong shape");
    return *it->second;
  };
  AdamState<T> s(params);
  s.step = static_cast<std::size_t>(get("adam.step", Shape{1}).data[0]);
  std::size_t i = 0;
  for (const auto& [name, p] : params) {
    const auto& m = get("adam.m." + name, p.shape());
    const auto& v = get("adam.v." + name, p.shape());
    s.m[i].assign(m.data.begin(), m.data.end());
    s.v[i].assign(v.data.begin(), v.data.end());
    ++i;
  }
  return s;
}

inline std::string format_loss_row(std::size_t step, double lr, const LossBreakdown& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step, lr, r.sp_g, r.sr_g, r.sp_l, r.sr_l,
                r.ld, r.total);
  return buf;
}

inline constexpr const char* kLossHeader = "step,lr,sp_g,sr_g,sp_l,sr_l,ld,total";

struct FitResult {
  std::string checkpoint;
  std::string loss_log;
  std::vector<LossBreakdown> history;  // steps run in this call
  std::size_t start_step = 0;
};

// Runs cfg.iterations steps. Output directory layout:
//   model.spxc, model.spxc.adam   latest parameters and optimizer state
//   model_<step>.spxc             periodic snapshots
//   loss.csv                      one row per step
// With `resume`, training continues from model.spxc(.adam) when present.
inline FitResult fit(const TrainConfig& cfg, const std::vector<Sample>& data, const std::string& out_dir,
                     bool resume = false) {
  cfg.validate();
  if (data.empty()) throw DataError("empty dataset");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  FitResult res;
  res.checkpoint = (fs::path(out_dir) / "model.spxc").string();
  res.loss_log = (fs::path(out_dir) / "loss.csv").string();

  Params<float> params;
  AdamState<float> adam;
  std::vector<std::string> rows;
  if (resume && fs::exists(res.checkpoint) && fs::exists(adam_path(res.checkpoint))) {
    params = load_checkpoint<float>(res.checkpoint, cfg.net);
    adam = load_adam(adam_path(res.checkpoint), params);
    res.start_step = adam.step;
    std::ifstream in(res.loss_log);
    std::string line;
    std::getline(in, line);
    while (rows.size() < res.start_step && std::getline(in, line)) rows.push_back(line);
    if (rows.size() != res.start_step) throw DataError("loss log " + res.loss_log + " is shorter than the checkpoint step");
    spdlog::info("resuming from step {}", res.start_step);
  } else {
    params = init_params<float>(cfg.net);
    adam = AdamState<float>(params);
  }

  auto write_state = [&](std::size_t done) {
    save_checkpoint(params, res.checkpoint);
    save_adam(adam_path(res.checkpoint), params, adam);
    std::string csv = std::string(kLossHeader) + "\n";
    for (const auto& r : rows) csv += r + "\n";
    write_file_atomic(res.loss_log, csv);
    if (done > 0 && done % cfg.checkpoint_every == 0)
      save_checkpoint(params, (fs::path(out_dir) / ("model_" + std::to_string(done) + ".spxc")).string());
  };

  if (res.start_step == 0) write_state(0);
  for (std::size_t step = res.start_step; step < cfg.iterations; ++step) {
    const double lr = learning_rate(cfg, step);
    const auto batch = make_batch(data, cfg, step);
    auto rng = step_rng(cfg.seed, step);
    const auto r = train_step(params, adam, cfg, batch, rng, lr);
    rows.push_back(format_loss_row(step + 1, lr, r));
    res.history.push_back(r);
    spdlog::info("step {}/{} lr {:.3g} total {:.5f} (sp_g {:.4f} sr_g {:.4f} sp_l {:.4f} sr_l {:.4f} ld {:.4f})",
                 step + 1, cfg.iterations, lr, r.total, r.sp_g, r.sr_g, r.sp_l, r.sr_l, r.ld);
    if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.iterations) write_state(step + 1);
  }
  return res;
}

}  // namespace pcnet
