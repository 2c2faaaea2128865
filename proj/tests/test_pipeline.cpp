#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "pcnet/pipeline.hpp"

namespace pcnet {
namespace {

namespace fs = std::filesystem;

const Model& tiny_model() {
  static const Model m = [] {
    NetConfig cfg;
    cfg.base_channels = 2;
    cfg.embed_dim = 4;
    cfg.seed = 7;
    return make_model(init_params<float>(cfg), cfg);
  }();
  return m;
}

Image synth_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  SynthSpec spec;
  spec.size = (std::max(h, w) + 15) / 16 * 16;
  spec.seed = seed;
  const auto s = synthesize(spec, 0);
  return crop(s.image, 0, 0, h, w);
}

void expect_valid(const SuperpixelMap& sp) {
  EXPECT_TRUE(oracle::each_label_connected(sp.labels));
  EXPECT_TRUE(oracle::labels_compact(sp.labels, sp.n_superpixels));
}

TEST(Model, FrozenWeightsBuildNoGraph) {
  const auto& m = tiny_model();
  for (const auto& [name, t] : m.params) EXPECT_FALSE(t.requires_grad()) << name;
  const auto out = forward(m.params, m.net, Tensor<float>::zeros(Shape{1, 3, 16, 16}));
  EXPECT_FALSE(out.logits.requires_grad());
  EXPECT_TRUE(out.logits.node()->inputs.empty());
}

TEST(Model, LoadsCheckpointWithInferredConfig) {
  const auto path = (fs::temp_directory_path() / "pcnet_pipeline_model.spxc").string();
  NetConfig cfg;
  cfg.base_channels = 4;
  cfg.embed_dim = 6;
  save_checkpoint(init_params<float>(cfg), path);
  const auto m = load_model(path);
  EXPECT_EQ(m.net.base_channels, 4u);
  EXPECT_EQ(m.net.embed_dim, 6u);
  EXPECT_EQ(m.params.scalar_count(), init_params<float>(cfg).scalar_count());
  fs::remove(path);
}

TEST(Infer, ShapeBookkeeping) {
  const auto s = infer_shape(tiny_model(), 700, 1000);
  EXPECT_EQ(s.input_h, 175u);
  EXPECT_EQ(s.input_w, 250u);
  EXPECT_EQ(s.padded_h, 176u);
  EXPECT_EQ(s.padded_w, 256u);
  const auto big = infer_shape(tiny_model(), 2048, 2048);
  EXPECT_EQ(big.padded_h, 512u);
  EXPECT_EQ(big.padded_w, 512u);
}

TEST(Infer, IndivisibleImageCroppedBackExactly) {
  const auto sp = infer(tiny_model(), synth_image(700, 1000, 3));
  EXPECT_EQ(sp.labels.height, 700u);
  EXPECT_EQ(sp.labels.width, 1000u);
  expect_valid(sp);
}

TEST(Infer, RefusesSmallImages) {
  EXPECT_THROW(infer(tiny_model(), Image(3, 63, 200)), UsageError);
  EXPECT_THROW(infer(tiny_model(), Image(3, 200, 63)), UsageError);
  EXPECT_NO_THROW(infer(tiny_model(), Image(3, 64, 64)));
}

TEST(Infer, Deterministic) {
  const auto im = synth_image(96, 128, 4);
  EXPECT_EQ(infer(tiny_model(), im).labels, infer(tiny_model(), im).labels);
}

TEST(CountPlan, GridArithmeticWithinFifteenPercent) {
  for (std::size_t target : {16u, 25u, 50u, 64u, 100u, 200u, 256u, 500u, 1000u, 1024u, 2000u}) {
    const auto p = plan_for_count(512, 512, target);
    EXPECT_LE(std::abs(double(p.grid_cells) - double(target)), 0.15 * double(target)) << target;
  }
  const auto p = plan_for_count(512, 512, 64);
  EXPECT_EQ(p.input_h, 32u);
  EXPECT_EQ(p.grid_cells, 64u);
}

TEST(SegmentForCount, ReturnsFullResolutionValidMap) {
  const auto im = synth_image(128, 96, 5);
  for (std::size_t target : {12u, 48u, 300u}) {
    const auto sp = segment_for_count(tiny_model(), im, target);
    EXPECT_EQ(sp.labels.height, 128u);
    EXPECT_EQ(sp.labels.width, 96u);
    expect_valid(sp);
    EXPECT_LE(std::size_t(sp.n_superpixels), plan_for_count(128, 96, target).grid_cells);
  }
}

TEST(TileBaseline, TilesEqualIndependentInference) {
  const auto im = synth_image(200, 232, 6);
  const auto r = tile_baseline(tiny_model(), im, 2);
  expect_valid(r.map);
  const auto ys = tile_edges(200, 2), xs = tile_edges(232, 2);
  std::set<std::int32_t> seen;
  for (std::size_t ty = 0; ty < 2; ++ty)
    for (std::size_t tx = 0; tx < 2; ++tx) {
      const std::size_t h = ys[ty + 1] - ys[ty], w = xs[tx + 1] - xs[tx];
      const auto own = infer(tiny_model(), crop(im, ys[ty], xs[tx], h, w));
      const auto part = crop(r.map.labels, ys[ty], xs[tx], h, w);
      const auto base = *std::min_element(part.data.begin(), part.data.end());
      for (std::size_t i = 0; i < part.size(); ++i) ASSERT_EQ(part.data[i] - base, own.labels.data[i]);
      const std::set<std::int32_t> ids(part.data.begin(), part.data.end());
      for (auto v : ids) ASSERT_FALSE(seen.count(v)) << "label shared across tiles";
      seen.insert(ids.begin(), ids.end());
    }
  EXPECT_EQ(seen.size(), std::size_t(r.map.n_superpixels));
}

TEST(TileBaseline, NoSuperpixelCrossesATileBorder) {
  const auto r = tile_baseline(tiny_model(), synth_image(200, 232, 7), 2);
  ASSERT_EQ(r.seams.size(), 2u);
  for (const auto& b : r.seams) {
    EXPECT_EQ(b.crossing, 0u);
    EXPECT_GT(b.adjacent, 0u);
  }
}

TEST(TileBaseline, WholeImageInferenceCrossesFormerBorders) {
  const auto sp = infer(tiny_model(), synth_image(200, 232, 7));
  for (const auto& b : seam_report(sp.labels, 2)) EXPECT_GE(b.crossing, 1u) << b.position;
}

TEST(TileBaseline, RefusesSmallTiles) {
  EXPECT_THROW(tile_baseline(tiny_model(), Image(3, 127, 200), 2), UsageError);
  EXPECT_THROW(tile_baseline(tiny_model(), Image(3, 200, 200), 1), UsageError);
}

TEST(SeamReport, CountsCrossingAndAdjacentLabels) {
  Plane<std::int32_t> p(4, 4, 0);
  // columns 0-1 label 0, column 2-3 label 1, except row 0 all label 0.
  for (std::size_t y = 1; y < 4; ++y)
    for (std::size_t x = 2; x < 4; ++x) p(y, x) = 1;
  const auto seams = seam_report(p, 2);
  ASSERT_EQ(seams.size(), 2u);
  EXPECT_TRUE(seams[0].vertical);
  EXPECT_EQ(seams[0].position, 2u);
  EXPECT_EQ(seams[0].adjacent, 2u);
  EXPECT_EQ(seams[0].crossing, 1u);
  EXPECT_EQ(seams[1].crossing, 2u);
}

TEST(Export, LabelPngRoundTripAndOverlay) {
  const auto im = synth_image(64, 80, 8);
  const auto sp = infer(tiny_model(), im);
  const auto path = (fs::temp_directory_path() / "pcnet_pipeline_labels.png").string();
  save_superpixels(path, sp);
  EXPECT_EQ(load_label_plane(path), sp.labels);
  fs::remove(path);

  const auto ov = boundary_overlay(im, sp);
  const auto b = boundary_pixels(sp.labels);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 80; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        ASSERT_EQ(ov(c, y, x), b(y, x) ? kOverlayColor[c] : im(c, y, x));

  SuperpixelMap huge{Plane<std::int32_t>(1, 1, 0), 70000};
  EXPECT_THROW(save_superpixels(path, huge), UsageError);
}

}  // namespace
}  // namespace pcnet
