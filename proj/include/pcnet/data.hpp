#pragma once

// Dataset manifests, image/label loading and the synthetic dataset generator.
//
// Manifest format (UTF-8, paths relative to the manifest's directory):
//   #classes=<n>
//   #split=<tag>            (optional)
//   <image path>\t<label path>
//   ...

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcnet/image.hpp"
#include "pcnet/png_io.hpp"

namespace pcnet {

struct Record {
  std::string image, label;  // resolved paths
};

struct DatasetManifest {
  std::vector<Record> records;
  int num_classes = 0;
  std::string split;
};

struct Sample {
  Image image;
  LabelMap label;
};

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#classes=", 0) == 0) {
        try {
          m.num_classes = std::stoi(line.substr(9));
        } catch (const std::exception&) {
          throw DataError("manifest " + path + ": bad class count '" + line + "'");
        }
      } else if (line.rfind("#split=", 0) == 0) {
        m.split = line.substr(7);
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("manifest " + path + ":" + std::to_string(line_no) + ": expected <image>\\t<label>");
    m.records.push_back({(base / line.substr(0, tab)).string(), (base / line.substr(tab + 1)).string()});
  }
  if (m.num_classes < 1) throw DataError("manifest " + path + " lacks a '#classes=<n>' header");
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m, const std::vector<Record>& relative) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  out << "#classes=" << m.num_classes << "\n";
  if (!m.split.empty()) out << "#split=" << m.split << "\n";
  for (const auto& r : relative) out << r.image << "\t" << r.label << "\n";
}

inline Image load_image(const std::string& path) {
  const auto raw = png::read(path);
  const float scale = raw.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  Image im(3, raw.height, raw.width);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = raw.channels == 3 ? c : 0;
        im(c, y, x) = static_cast<float>(raw.samples[(y * raw.width + x) * raw.channels + src]) * scale;
      }
  return im;
}

inline Plane<std::int32_t> load_label_plane(const std::string& path) {
  const auto raw = png::read(path);
  if (raw.channels != 1) throw DecodeError("label " + path + " must be single-channel");
  Plane<std::int32_t> out(raw.height, raw.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = raw.samples[i];
  return out;
}

inline Sample load_pair(const std::string& image_path, const std::string& label_path, int num_classes) {
  Sample s;
  s.image = load_image(image_path);
  auto labels = load_label_plane(label_path);
  if (labels.height != s.image.height || labels.width != s.image.width)
    throw DimensionError("image " + image_path + " is " + std::to_string(s.image.width) + "x" +
                         std::to_string(s.image.height) + " but label " + label_path + " is " +
                         std::to_string(labels.width) + "x" + std::to_string(labels.height));
  for (auto v : labels.data)
    if (v >= num_classes)
      throw LabelRangeError("label " + label_path + " contains id " + std::to_string(v) + " >= num_classes " +
                            std::to_string(num_classes));
  s.label = {std::move(labels), num_classes};
  return s;
}

inline std::vector<Sample> load_dataset(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back(load_pair(r.image, r.label, m.num_classes));
  return out;
}

// 8-bit RGB, values clamped to [0,1] and rounded.
inline void save_image(const std::string& path, const Image& im) {
  png::Raw raw{im.width, im.height, 3, 8, std::vector<std::uint16_t>(im.width * im.height * 3)};
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(im(std::min(c, im.channels - 1), y, x), 0.0f, 1.0f);
        raw.samples[(y * im.width + x) * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
      }
  png::write(path, raw);
}

// Single-channel, 8-bit when every id fits, otherwise 16-bit.
inline void save_label_plane(const std::string& path, const Plane<std::int32_t>& labels, bool force16 = false) {
  std::int32_t hi = 0;
  for (auto v : labels.data) {
    if (v < 0 || v > 65535) throw UsageError("label id " + std::to_string(v) + " does not fit a 16-bit PNG");
    hi = std::max(hi, v);
  }
  png::Raw raw{labels.width, labels.height, 1, (force16 || hi > 255) ? 16 : 8,
               std::vector<std::uint16_t>(labels.data.begin(), labels.data.end())};
  png::write(path, raw);
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class ShapeFamily { rectangles, ellipses, voronoi };

inline ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "rectangles") return ShapeFamily::rectangles;
  if (s == "ellipses") return ShapeFamily::ellipses;
  if (s == "voronoi") return ShapeFamily::voronoi;
  throw UsageError("unknown shape family '" + s + "' (rectangles|ellipses|voronoi)");
}

struct SynthSpec {
  std::size_t n_images = 50;
  std::size_t size = 512;
  int n_classes = 2;
  ShapeFamily family = ShapeFamily::rectangles;
  std::uint64_t seed = 0;
  double noise = 0.03;  // half-width of the uniform pixel noise

  void validate() const {
    if (size == 0 || size % 16 != 0) throw ConfigError("synthetic size must be a positive multiple of 16");
    if (n_classes < 1 || n_classes > 255) throw ConfigError("synthetic class count must be in [1,255]");
  }
};

namespace detail {

inline Plane<std::int32_t> synth_labels(const SynthSpec& spec, std::mt19937_64& rng) {
  const std::size_t n = spec.size;
  const auto nd = static_cast<double>(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(spec.n_classes > 1 ? 1 : 0, spec.n_classes - 1);
  Plane<std::int32_t> out(n, n, 0);
  switch (spec.family) {
    case ShapeFamily::rectangles:
      for (int r = 0, count = 3 + static_cast<int>(rng() % 4); r < count; ++r) {
        const double h = (0.15 + 0.35 * u(rng)) * nd, w = (0.15 + 0.35 * u(rng)) * nd;
        const double y0 = u(rng) * (nd - h), x0 = u(rng) * (nd - w);
        const int c = cls(rng);
        for (std::size_t y = std::size_t(y0); y < std::size_t(y0 + h); ++y)
          for (std::size_t x = std::size_t(x0); x < std::size_t(x0 + w); ++x) out(y, x) = c;
      }
      break;
    case ShapeFamily::ellipses:
      for (int r = 0, count = 3 + static_cast<int>(rng() % 4); r < count; ++r) {
        const double ry = (0.08 + 0.2 * u(rng)) * nd, rx = (0.08 + 0.2 * u(rng)) * nd;
        const double cy = u(rng) * nd, cx = u(rng) * nd, angle = u(rng) * M_PI;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const int c = cls(rng);
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t x = 0; x < n; ++x) {
            const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
            const double a = (ca * dx + sa * dy) / rx, b = (-sa * dx + ca * dy) / ry;
            if (a * a + b * b <= 1.0) out(y, x) = c;
          }
      }
      break;
    case ShapeFamily::voronoi: {
      const int sites = 6 + static_cast<int>(rng() % 6);
      std::uniform_int_distribution<int> any(0, spec.n_classes - 1);
      std::vector<double> sy(sites), sx(sites);
      std::vector<int> sc(sites);
      for (int i = 0; i < sites; ++i) {
        sy[i] = u(rng) * nd;
        sx[i] = u(rng) * nd;
        sc[i] = any(rng);
      }
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          int best = 0;
          double best_d = 1e300;
          for (int i = 0; i < sites; ++i) {
            const double d = (double(y) - sy[i]) * (double(y) - sy[i]) + (double(x) - sx[i]) * (double(x) - sx[i]);
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
          out(y, x) = sc[best];
        }
      break;
    }
  }
  return out;
}

// Per-class base colours at least `min_gap` apart (max channel difference).
inline std::vector<std::array<float, 3>> synth_palette(int classes, std::mt19937_64& rng, double min_gap = 0.3) {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::vector<std::array<float, 3>> out;
  for (int attempt = 0; static_cast<int>(out.size()) < classes; ++attempt) {
    std::array<float, 3> c{float(u(rng)), float(u(rng)), float(u(rng))};
    bool ok = true;
    for (const auto& o : out) {
      double gap = 0;
      for (int k = 0; k < 3; ++k) gap = std::max(gap, double(std::abs(o[k] - c[k])));
      ok &= gap >= (attempt < 1000 ? min_gap : 0.0);
    }
    if (ok) out.push_back(c);
  }
  return out;
}

}  // namespace detail

inline Sample synthesize(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  Plane<std::int32_t> labels;
  for (int attempt = 0;; ++attempt) {
    labels = detail::synth_labels(spec, rng);
    std::vector<char> present(static_cast<std::size_t>(spec.n_classes), 0);
    for (auto v : labels.data) present[static_cast<std::size_t>(v)] = 1;
    const int distinct = static_cast<int>(std::count(present.begin(), present.end(), 1));
    if (distinct >= std::min(2, spec.n_classes) || attempt >= 100) break;
  }
  const auto palette = detail::synth_palette(spec.n_classes, rng);
  std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);
  Image im(3, spec.size, spec.size);
  for (std::size_t y = 0; y < spec.size; ++y)
    for (std::size_t x = 0; x < spec.size; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im(c, y, x) = std::clamp(palette[static_cast<std::size_t>(labels(y, x))][c] + float(noise(rng)), 0.0f, 1.0f);
  return {std::move(im), {std::move(labels), spec.n_classes}};
}

// Writes images/<i>.png, labels/<i>.png and manifest.txt into `dir`.
inline DatasetManifest generate_synthetic(const SynthSpec& spec, const std::string& dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  DatasetManifest m;
  m.num_classes = spec.n_classes;
  m.split = "synthetic";
  std::vector<Record> relative;
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    const Record rel{std::string("images/") + name, std::string("labels/") + name};
    const auto s = synthesize(spec, i);
    save_image((fs::path(dir) / rel.image).string(), s.image);
    save_label_plane((fs::path(dir) / rel.label).string(), s.label.labels);
    relative.push_back(rel);
    m.records.push_back({(fs::path(dir) / rel.image).string(), (fs::path(dir) / rel.label).string()});
  }
  save_manifest((fs::path(dir) / "manifest.txt").string(), m, relative);
  spdlog::info("generated {} synthetic images ({}x{}, {} classes) in {}", spec.n_images, spec.size, spec.size,
               spec.n_classes, dir);
  return m;
}

}  // namespace pcnet
