#pragma once

// Sub-command implementations behind the pcnet executable.

#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcnet/data.hpp"
#include "pcnet/gradcheck_suite.hpp"
#include "pcnet/metrics.hpp"
#include "pcnet/pipeline.hpp"
#include "pcnet/trainer.hpp"

namespace pcnet {

struct RunConfig {
  std::string command;
  std::string manifest, checkpoint, out, image;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> cells;
  std::vector<std::size_t> counts{16, 32, 64, 128, 256, 512, 1024};
  int tol = -1;  // < 0: per-image default tolerance
  std::size_t tiles = 2;
  bool paper_scale = false;
  bool dry_run = false;
  bool resume = false;
  std::optional<std::size_t> iterations, batch_size, input_size;
  SynthSpec synth;
};

namespace detail {

inline void require(bool ok, const std::string& flag, const std::string& command) {
  if (!ok) throw UsageError(command + " requires " + flag);
}

// Shortest round-trip decimal, exponent without padding zeros.
inline std::string short_number(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  std::string s(buf);
  const auto e = s.find('e');
  if (e != std::string::npos) {
    std::string mant = s.substr(0, e), exp = s.substr(e + 1);
    const bool neg = exp[0] == '-';
    std::size_t i = (exp[0] == '-' || exp[0] == '+') ? 1 : 0;
    while (i + 1 < exp.size() && exp[i] == '0') ++i;
    s = mant + "e" + (neg ? "-" : "") + exp.substr(i);
  }
  return s;
}

}  // namespace detail

inline TrainConfig train_config(const RunConfig& rc) {
  TrainConfig cfg = rc.paper_scale ? TrainConfig::paper() : TrainConfig::desk();
  if (rc.seed) {
    cfg.seed = *rc.seed;
    cfg.net.seed = *rc.seed;
  }
  if (rc.cells) cfg.cell = *rc.cells;
  if (rc.iterations) cfg.iterations = *rc.iterations;
  if (rc.batch_size) cfg.batch_size = *rc.batch_size;
  if (rc.input_size) cfg.geometry = SampleGeometry::desk(*rc.input_size);
  cfg.validate();
  return cfg;
}

inline std::string describe(const TrainConfig& c) {
  using detail::short_number;
  std::ostringstream s;
  s << "lr0=" << short_number(c.lr0) << " lr_decay_every=" << c.lr_decay_every
    << " lr_decay_factor=" << short_number(c.lr_decay_factor) << " iters=" << c.iterations
    << " batch=" << c.batch_size << " alpha=" << short_number(c.weights.alpha)
    << " beta=" << short_number(c.weights.beta) << " K=" << c.geometry.ld_kernel
    << " ld_count=" << c.geometry.ld_count << " dilation=" << c.geometry.dilation << " resize=" << c.geometry.resize
    << " crop=" << c.geometry.out << " input=" << c.geometry.input() << " cell=" << c.cell
    << " base_channels=" << c.net.base_channels << " embed_dim=" << c.net.embed_dim << " seed=" << c.seed;
  return s.str();
}

inline int run_train(const RunConfig& rc, std::FILE* report = stdout) {
  const auto cfg = train_config(rc);
  std::fprintf(report, "effective config: %s\n", describe(cfg).c_str());
  if (rc.dry_run) return 0;
  detail::require(!rc.manifest.empty(), "--manifest", "train");
  detail::require(!rc.out.empty(), "--out", "train");
  const auto data = load_dataset(load_manifest(rc.manifest));
  const auto r = fit(cfg, data, rc.out, rc.resume);
  std::fprintf(report, "checkpoint: %s\nloss log: %s\n", r.checkpoint.c_str(), r.loss_log.c_str());
  return 0;
}

inline Model model_for(const RunConfig& rc) {
  detail::require(!rc.checkpoint.empty(), "--checkpoint", rc.command);
  return load_model(rc.checkpoint, rc.cells.value_or(16));
}

inline int run_infer(const RunConfig& rc, std::FILE* report = stdout) {
  detail::require(!rc.image.empty(), "--image", "infer");
  detail::require(!rc.out.empty(), "--out", "infer");
  const auto model = model_for(rc);
  const auto image = load_image(rc.image);
  const auto sp = infer(model, image);
  namespace fs = std::filesystem;
  fs::create_directories(rc.out);
  const auto stem = fs::path(rc.image).stem().string();
  const auto labels = (fs::path(rc.out) / (stem + "_labels.png")).string();
  const auto overlay = (fs::path(rc.out) / (stem + "_overlay.png")).string();
  save_superpixels(labels, sp);
  save_image(overlay, boundary_overlay(image, sp));
  std::fprintf(report, "superpixels: %d\nlabels: %s\noverlay: %s\n", sp.n_superpixels, labels.c_str(),
               overlay.c_str());
  return 0;
}

inline std::vector<CurvePoint> evaluate(const Model& model, const std::vector<Sample>& data,
                                        const std::vector<std::size_t>& counts, int tol) {
  std::vector<Image> images;
  std::vector<LabelMap> labels;
  for (const auto& s : data) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  return curve(images, labels, counts,
               [&](const Image& im, std::size_t n) { return segment_for_count(model, im, n); }, tol);
}

inline int run_eval(const RunConfig& rc, std::FILE* report = stdout) {
  detail::require(!rc.manifest.empty(), "--manifest", "eval");
  detail::require(!rc.out.empty(), "--out", "eval");
  const auto manifest = load_manifest(rc.manifest);
  if (manifest.records.empty()) throw DataError("empty dataset: " + rc.manifest);
  const auto model = model_for(rc);
  const auto points = evaluate(model, load_dataset(manifest), rc.counts, rc.tol);
  std::filesystem::create_directories(rc.out);
  const auto path = (std::filesystem::path(rc.out) / "curve.csv").string();
  write_curve_csv(path, points);
  std::fputs(curve_csv(points).c_str(), report);
  std::fprintf(report, "curve: %s\n", path.c_str());
  return 0;
}

inline int run_synth(const RunConfig& rc, std::FILE* report = stdout) {
  detail::require(!rc.out.empty(), "--out", "synth");
  auto spec = rc.synth;
  if (rc.seed) spec.seed = *rc.seed;
  const auto m = generate_synthetic(spec, rc.out);
  std::fprintf(report, "wrote %zu images to %s\n", m.records.size(), rc.out.c_str());
  return 0;
}

inline int run_gradcheck(const RunConfig&, std::FILE* report = stdout) {
  bool ok = true;
  std::fprintf(report, "%-36s %-14s %s\n", "primitive", "max_rel_error", "checked");
  for (const auto& r : run_gradcheck_suite()) {
    const bool pass = r.max_rel_error < kGradCheckTolerance && r.checked > 0;
    ok = ok && pass;
    std::fprintf(report, "%-36s %-14.3e %zu%s\n", r.name.c_str(), r.max_rel_error, r.checked, pass ? "" : "  FAIL");
  }
  std::fprintf(report, "%s (tolerance %g)\n", ok ? "all gradients match" : "gradient check failed",
               kGradCheckTolerance);
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

inline int run_tile(const RunConfig& rc, std::FILE* report = stdout) {
  detail::require(!rc.image.empty(), "--image", "tile");
  detail::require(!rc.out.empty(), "--out", "tile");
  const auto model = model_for(rc);
  const auto image = load_image(rc.image);
  const auto r = tile_baseline(model, image, rc.tiles);
  namespace fs = std::filesystem;
  fs::create_directories(rc.out);
  const auto stem = fs::path(rc.image).stem().string();
  save_superpixels((fs::path(rc.out) / (stem + "_tiled_labels.png")).string(), r.map);
  save_image((fs::path(rc.out) / (stem + "_tiled_overlay.png")).string(), boundary_overlay(image, r.map));
  const auto text = seam_report_text(r.seams);
  write_file_atomic((fs::path(rc.out) / (stem + "_seams.csv")).string(), text);
  std::fprintf(report, "superpixels: %d\n%s", r.map.n_superpixels, text.c_str());
  return 0;
}

inline int run_command(const RunConfig& rc, std::FILE* report = stdout) {
  if (rc.command == "train") return run_train(rc, report);
  if (rc.command == "infer") return run_infer(rc, report);
  if (rc.command == "eval") return run_eval(rc, report);
  if (rc.command == "synth") return run_synth(rc, report);
  if (rc.command == "gradcheck") return run_gradcheck(rc, report);
  if (rc.command == "tile") return run_tile(rc, report);
  throw UsageError("unknown command " + rc.command);
}

}  // namespace pcnet
