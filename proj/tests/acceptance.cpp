// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "pcnet/cli.hpp"

namespace fs = std::filesystem;
using namespace pcnet;

namespace {

using Clock = std::chrono::steady_clock;
using D = Tensor<double>;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Verdict()>& body) {
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

AssocMap<double> random_assoc(const oracle::Dims& d, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  return {D({d.batch, 9, d.height, d.width}, oracle::random_assoc(d, rng), grad),
          GridSpec::make(d.height, d.width, d.cell)};
}

D random_features(std::size_t b, std::size_t k, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(b * k * h * w);
  for (auto& x : v) x = u(rng);
  return D({b, k, h, w}, v);
}

Verdict gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t n = 0;
  bool ok = true;
  for (const auto& r : run_gradcheck_suite()) {
    ++n;
    ok = ok && r.checked > 0 && r.max_rel_error < kGradCheckTolerance;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const double t = seconds_since(t0);
  return {ok && t < 60.0, fmt("%zu checks, worst %.2e (%s), %.1f s", n, worst, worst_name.c_str(), t)};
}

Verdict assoc_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cell = trial % 2 ? 16 : 8;
    const std::size_t h = 8 + rng() % 57, w = 8 + rng() % 57;
    const oracle::Dims d{1, h, w, cell};
    const auto a = random_assoc(d, 100 + trial);
    const auto f = random_features(1, 3, h, w, 200 + trial);
    const auto centers = soft_centers(a, f);
    const auto ref_c = oracle::soft_centers(d, a.q.values(), f.values(), 3);
    for (std::size_t i = 0; i < ref_c.size(); ++i) worst = std::max(worst, std::abs(centers.data()[i] - ref_c[i]));
    const auto rec = reconstruct(a, centers);
    const auto ref_r = oracle::reconstruct(d, a.q.values(), ref_c, 3);
    for (std::size_t i = 0; i < ref_r.size(); ++i) worst = std::max(worst, std::abs(rec.data()[i] - ref_r[i]));
  }
  return {worst <= 1e-5, fmt("20 instances, cells {8,16}, max abs diff %.2e", worst)};
}

Verdict superpixel_loss_structure() {
  std::vector<double> q(9 * 32 * 32, 0.0);
  std::fill(q.begin() + 4 * 1024, q.begin() + 5 * 1024, 1.0);
  const AssocMap<double> home{D({1, 9, 32, 32}, q), GridSpec::make(32, 32, 16)};
  Plane<std::int32_t> labels(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) labels(y, x) = static_cast<std::int32_t>((y / 16) ^ (x / 16));
  const double ce = superpixel_loss(home, one_hot<double>({labels}, 2), normalized_coords<double>(32, 32))
                        .cross_entropy.item();

  double worst = 0;
  for (std::size_t cell : {8u, 16u}) {
    const oracle::Dims d{2, 32, 32, cell};
    const auto a = random_assoc(d, 10 + cell);
    std::mt19937_64 rng(cell);
    const auto oh = one_hot<double>({oracle::random_blocks(32, 32, 3, 5, rng), oracle::random_blocks(32, 32, 3, 5, rng)}, 3);
    const double got = superpixel_loss(a, oh, normalized_coords<double>(32, 32), 0.7).total.item();
    worst = std::max(worst, std::abs(got - oracle::superpixel_loss(d, a.q.values(), oh.values(), 3, 0.7)));
  }
  return {std::abs(ce) <= 1e-6 && worst <= 1e-5, fmt("fixture CE %.1e, full loss max diff %.2e", ce, worst)};
}

Verdict guiding_mask() {
  std::mt19937_64 rng(17);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const int classes = 2 + t % 4;
    const LabelMap l{oracle::random_blocks(16 + t % 9, 16 + t % 7, classes, 8, rng), classes};
    const int c = oracle::longest_boundary_class(l.labels, classes);
    const auto m = dynamic_mask(l);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.data[i] != (c < 0 ? 1 : (l.labels.data[i] == c ? 1 : 0))) {
        ++mismatches;
        break;
      }
  }
  LabelMap src{Plane<std::int32_t>(128, 128, 0), 3};
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) src.labels(y, x) = x < 40 ? 0 : x < 85 ? 1 : 2;
  for (std::size_t y = 0; y < 128; y += 4) src.labels(y, 40) = 0;
  Image img(3, 128, 128);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) img(c, y, x) = float((y * 7 + x * 3 + c * 11) % 256) / 255.0f;
  const auto geo = SampleGeometry::desk(8);
  std::mt19937_64 anchor_rng(19);
  std::set<int> chosen;
  for (int i = 0; i < 1000; ++i) {
    const auto a = sample_boundary_anchor(src, anchor_rng);
    chosen.insert(guiding_class(crop_local(img, src, a.pixel, geo).s_l));
  }
  return {mismatches == 0 && chosen.size() >= 2,
          fmt("%d/200 mismatches, %zu distinct classes over 1000 crops", mismatches, chosen.size())};
}

D rows(std::size_t m, std::size_t dim, std::vector<double> v) { return D({m, dim}, std::move(v)); }

Verdict auxiliary_fixtures() {
  D recon({1, 1, 2, 2}, {0.5, 1.0, -2.0, 3.0}), target({1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
  Mask m(2, 2, 0);
  m(0, 0) = 1;
  m(1, 0) = 1;
  const double sr = sr_loss(recon, target, {m}).item();
  const double sr_empty = sr_loss(recon, target, {Mask(2, 2, 0)}).item();
  const double eps = 1e-6;
  const double ld = ld_patch_loss(rows(2, 1, {0, 2}), rows(2, 1, {10, 12}), eps).item();
  const double ld_equal = ld_patch_loss(rows(2, 1, {0, 2}), rows(2, 1, {-1, 3}), eps).item();
  const bool ok = sr == 1.25 && sr_empty == 0.0 && ld == -100.0 / (4.0 + eps) && std::abs(ld + 25.0) < 1e-5 &&
                  ld_equal == 0.0;
  return {ok, fmt("sr %.4f, empty-mask sr %.1f, ld %.6f, equal-mean ld %.1f", sr, sr_empty, ld, ld_equal)};
}

Verdict architecture() {
  NetConfig cfg;
  const auto params = init_params<float>(cfg);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(0, 1);
  double worst_sum = 0;
  bool shapes = true;
  for (std::size_t h : {32u, 64u, 128u})
    for (std::size_t w : {32u, 64u, 128u}) {
      std::vector<float> v(3 * h * w);
      for (auto& x : v) x = u(rng);
      const auto out = forward(params, cfg, Tensor<float>({1, 3, h, w}, v));
      shapes = shapes && out.assoc.shape() == Shape{1, 9, 4 * h, 4 * w} && out.sr.shape() == Shape{1, 3, 4 * h, 4 * w};
      const std::size_t P = 16 * h * w;
      for (std::size_t p = 0; p < P; ++p) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) s += out.assoc.data()[c * P + p];
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  std::vector<float> v(3 * 32 * 32);
  for (auto& x : v) x = u(rng);
  const Tensor<float> x({1, 3, 32, 32}, v);
  const auto g = forward(params, cfg, x), l = forward(params, cfg, x);
  const bool shared = g.assoc.values() == l.assoc.values() && g.sr.values() == l.sr.values() &&
                      g.embedding.values() == l.embedding.values();
  return {shapes && worst_sum <= 1e-6 && shared,
          fmt("9 input sizes, shapes %s, max |sum Q - 1| %.1e, shared branches %s", shapes ? "ok" : "wrong", worst_sum,
              shared ? "identical" : "differ")};
}

Mask random_mask(std::size_t h, std::size_t w, double density, std::mt19937_64& rng) {
  Mask m(h, w, 0);
  std::bernoulli_distribution on(density);
  for (auto& v : m.data) v = on(rng) ? 1 : 0;
  return m;
}

Verdict metric_oracle() {
  std::mt19937_64 rng(11);
  int mismatches = 0, non_monotone = 0;
  for (int i = 0; i < 50; ++i) {
    Mask pred, gt;
    if (i % 2 == 0) {
      pred = boundary_of(oracle::random_blocks(64, 64, 3, 10, rng));
      gt = boundary_of(oracle::random_blocks(64, 64, 3, 10, rng));
    } else {
      pred = random_mask(64, 64, 0.01, rng);
      gt = random_mask(64, 64, 0.02, rng);
    }
    const auto s = br_bp(pred, gt, 2);
    if (s.br != oracle::matched_fraction(gt, pred, 2) || s.bp != oracle::matched_fraction(pred, gt, 2)) ++mismatches;
    double br = 0, bp = 0;
    for (int tol : {0, 1, 2, 4}) {
      const auto t = br_bp(pred, gt, tol);
      if (t.br < br || t.bp < bp) ++non_monotone;
      br = t.br;
      bp = t.bp;
    }
  }
  return {mismatches == 0 && non_monotone == 0,
          fmt("50 instances, %d oracle mismatches, %d monotonicity violations", mismatches, non_monotone)};
}

Verdict decoding() {
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cell = trial % 2 ? 8 : 16;
    const oracle::Dims d{1, 48 + std::size_t(trial % 3) * 8, 40 + std::size_t(trial % 5) * 8, cell};
    const auto sp = enforce_connectivity(hard_assign(random_assoc(d, 1000 + trial)), default_min_size(cell));
    if (!oracle::each_label_connected(sp.labels) || !oracle::labels_compact(sp.labels, sp.n_superpixels)) ++bad;
  }
  return {bad == 0, fmt("100 random association maps, %d invalid decodings", bad)};
}

// Training and end-to-end criteria share these runs.
struct Workspace {
  fs::path root;
  std::string train_manifest, eval_manifest;
};

constexpr std::uint64_t kTrainSeed = 1;
constexpr std::size_t kEvalCount = 64;
constexpr int kEvalTol = 2;

struct RunOutput {
  fs::path dir;
  double seconds = 0;
};

RunConfig base_config(const Workspace& ws) {
  RunConfig rc;
  rc.seed = kTrainSeed;
  rc.counts = {kEvalCount};
  rc.tol = kEvalTol;
  rc.manifest = ws.train_manifest;
  return rc;
}

RunOutput train_and_eval(const Workspace& ws, const std::string& name) {
  RunOutput r;
  r.dir = ws.root / name;
  std::FILE* sink = std::fopen("/dev/null", "w");
  const auto t0 = Clock::now();
  auto rc = base_config(ws);
  rc.command = "train";
  rc.out = r.dir.string();
  run_command(rc, sink);
  rc.command = "eval";
  rc.manifest = ws.eval_manifest;
  rc.checkpoint = (r.dir / "model.spxc").string();
  rc.out = (r.dir / "eval").string();
  run_command(rc, sink);
  r.seconds = seconds_since(t0);
  std::fclose(sink);
  return r;
}

std::vector<double> loss_totals(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> totals;
  while (std::getline(in, line)) totals.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  return totals;
}

CurvePoint first_point(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  CurvePoint p{};
  std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &p.target_count, &p.achieved_count, &p.br, &p.bp);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict desk_training(const Workspace& ws, const RunOutput& run) {
  const auto totals = loss_totals(run.dir / "loss.csv");
  if (totals.size() < 11) return {false, "loss log too short"};
  double first = 0;
  for (std::size_t i = 0; i < 10; ++i) first += totals[i];
  first /= 10.0;
  const double ratio = totals.back() / first;

  // Untrained reference: same seed, same architecture, zero steps.
  const auto cfg = train_config(base_config(ws));
  const auto untrained = (ws.root / "untrained.spxc").string();
  save_checkpoint(init_params<float>(cfg.net), untrained);
  const auto t0 = Clock::now();
  const auto eval = load_dataset(load_manifest(ws.eval_manifest));
  const auto before = evaluate(load_model(untrained, cfg.cell), eval, {kEvalCount}, kEvalTol).at(0);
  const double total_seconds = run.seconds + seconds_since(t0);
  const auto after = first_point(run.dir / "eval" / "curve.csv");

  // Diagnostic: the regular grid at the same count.
  std::vector<Image> ims;
  std::vector<LabelMap> labs;
  for (const auto& s : eval) {
    ims.push_back(s.image);
    labs.push_back(s.label);
  }
  const auto grid = curve(ims, labs, {kEvalCount}, [](const Image& im, std::size_t n) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(n))));
    Plane<std::int32_t> p(im.height, im.width);
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x)
        p(y, x) = static_cast<std::int32_t>((y * side / p.height) * side + x * side / p.width);
    return compact(p);
  }, kEvalTol).at(0);

  const double gain = after.br - before.br;
  const bool ok = ratio <= 0.5 && gain >= 0.15 && total_seconds <= 900.0;
  return {ok, fmt("loss ratio %.3f (<= 0.5), BR %.4f vs untrained %.4f, gain %.4f (>= 0.15), %.0f s (<= 900); "
                  "regular-grid BR %.4f, superpixels %.1f vs %.1f",
                  ratio, after.br, before.br, gain, total_seconds, grid.br, after.achieved_count,
                  before.achieved_count)};
}

Verdict seams(const RunOutput& run) {
  const auto model = load_model((run.dir / "model.spxc").string());
  SynthSpec spec;
  spec.size = 400;
  spec.seed = 77;
  std::size_t tiled_crossings = 0, uncrossed_borders = 0, images = 4;
  std::string whole;
  for (std::size_t i = 0; i < images; ++i) {
    const auto s = synthesize(spec, i);
    for (const auto& b : tile_baseline(model, s.image, 2).seams) tiled_crossings += b.crossing;
    for (const auto& b : seam_report(infer(model, s.image).labels, 2)) {
      if (b.crossing == 0) ++uncrossed_borders;
      whole += fmt("%s%zu", whole.empty() ? "" : "/", b.crossing);
    }
  }
  return {tiled_crossings == 0 && uncrossed_borders == 0,
          fmt("%zu 400x400 images: tiled crossings %zu, whole-image crossings per border %s", images, tiled_crossings,
              whole.c_str())};
}

Verdict determinism(const RunOutput& a, const RunOutput& b) {
  std::string diff;
  for (const auto* rel : {"model.spxc", "loss.csv", "eval/curve.csv"})
    if (read_bytes(a.dir / rel) != read_bytes(b.dir / rel) || read_bytes(a.dir / rel).empty()) diff += std::string(" ") + rel;
  return {diff.empty(), diff.empty() ? "checkpoint, loss log and curve CSV byte-identical across two seeded runs"
                                     : "differs:" + diff};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  report(1, "gradient suite", gradients);
  report(2, "soft centers and reconstruction vs brute force", assoc_oracle);
  report(3, "superpixel loss structure", superpixel_loss_structure);
  report(4, "dynamic guiding mask", guiding_mask);
  report(5, "reconstruction and discrimination fixtures", auxiliary_fixtures);
  report(6, "architecture law", architecture);

  Workspace ws;
  ws.root = fs::temp_directory_path() / "pcnet_acceptance";
  fs::remove_all(ws.root);
  SynthSpec train_spec;
  train_spec.seed = 2024;
  generate_synthetic(train_spec, (ws.root / "train").string());
  ws.train_manifest = (ws.root / "train" / "manifest.txt").string();
  SynthSpec eval_spec;
  eval_spec.n_images = 10;
  eval_spec.size = 128;
  eval_spec.seed = 99;
  generate_synthetic(eval_spec, (ws.root / "eval").string());
  ws.eval_manifest = (ws.root / "eval" / "manifest.txt").string();

  RunOutput first;
  report(7, "desk-scale training", [&] {
    first = train_and_eval(ws, "run_a");
    return desk_training(ws, first);
  });
  report(8, "boundary metric vs brute force", metric_oracle);
  report(9, "decoding invariants", decoding);
  report(10, "tiling seams", [&] { return seams(first); });
  report(11, "determinism", [&] { return determinism(first, train_and_eval(ws, "run_b")); });

  std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
