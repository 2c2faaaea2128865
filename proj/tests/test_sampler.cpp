#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "pcnet/sampler.hpp"

namespace pcnet {
namespace {

LabelMap vertical_split(std::size_t h, std::size_t w, std::size_t at) {
  LabelMap l{Plane<std::int32_t>(h, w, 0), 2};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = at; x < w; ++x) l.labels(y, x) = 1;
  return l;
}

Image gradient_image(std::size_t h, std::size_t w) {
  Image im(3, h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) im(c, y, x) = float((y * 7 + x * 3 + c * 11) % 256) / 255.0f;
  return im;
}

LabelMap random_labels(std::size_t h, std::size_t w, int classes, std::mt19937_64& rng) {
  return {oracle::random_blocks(h, w, classes, 8, rng), classes};
}

TEST(PrepareGlobal, FullScaleSizes) {
  std::mt19937_64 rng(1);
  auto v = prepare_global(gradient_image(1024, 1024), vertical_split(1024, 1024, 500), rng);
  EXPECT_EQ(v.g_star.height, 512u);
  EXPECT_EQ(v.g_star.width, 512u);
  EXPECT_EQ(v.g.height, 128u);
  EXPECT_EQ(v.g.width, 128u);
  EXPECT_EQ(v.s_g.height(), 512u);
  EXPECT_LE(v.offset.y, 256u);
  EXPECT_LE(v.offset.x, 256u);
}

TEST(PrepareGlobal, SeedFixesCropOffsets) {
  auto img = gradient_image(300, 200);
  auto lab = vertical_split(300, 200, 90);
  auto geo = SampleGeometry::desk(32);
  std::mt19937_64 a(42), b(42);
  auto va = prepare_global(img, lab, a, geo), vb = prepare_global(img, lab, b, geo);
  EXPECT_EQ(va.offset, vb.offset);
  EXPECT_EQ(va.g_star, vb.g_star);
}

TEST(PrepareGlobal, ConstantSourceStaysConstant) {
  std::mt19937_64 rng(3);
  Image img(3, 100, 140, 0.25f);
  auto v = prepare_global(img, LabelMap{Plane<std::int32_t>(100, 140, 0), 1}, rng, SampleGeometry::desk(16));
  for (float x : v.g.data) EXPECT_NEAR(x, 0.25f, 1e-6);
}

TEST(PrepareGlobal, DownsampleIsAreaAverageOfCrop) {
  std::mt19937_64 rng(5);
  auto geo = SampleGeometry::desk(16);
  auto v = prepare_global(gradient_image(200, 200), vertical_split(200, 200, 70), rng, geo);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; y += 5)
      for (std::size_t x = 0; x < 16; x += 3) {
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t j = 0; j < 4; ++j) s += v.g_star(c, 4 * y + i, 4 * x + j);
        EXPECT_NEAR(v.g(c, y, x), s / 16.0, 1e-5);
      }
}

TEST(PrepareGlobal, DegenerateSourceRejected) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(prepare_global(Image(3, 1, 5), LabelMap{Plane<std::int32_t>(1, 5, 0), 1}, rng), UsageError);
}

TEST(BoundaryAnchor, VerticalSplitStaysOnSeam) {
  auto lab = vertical_split(20, 30, 12);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    auto a = sample_boundary_anchor(lab, rng);
    EXPECT_FALSE(a.fallback);
    EXPECT_TRUE(a.pixel.x == 11 || a.pixel.x == 12);
  }
}

TEST(BoundaryAnchor, SingleClassFallsBackToUniform) {
  LabelMap lab{Plane<std::int32_t>(4, 4, 0), 1};
  std::mt19937_64 rng(7);
  std::set<std::size_t> seen;
  for (int i = 0; i < 400; ++i) {
    auto a = sample_boundary_anchor(lab, rng);
    EXPECT_TRUE(a.fallback);
    seen.insert(a.pixel.y * 4 + a.pixel.x);
  }
  EXPECT_EQ(seen.size(), 16u);
}

TEST(BoundaryAnchor, UniformOverBoundarySetChiSquare) {
  std::mt19937_64 gen(11);
  auto lab = random_labels(24, 24, 3, gen);
  const Mask b = oracle::boundary_scan(lab.labels);
  std::map<std::size_t, long> counts;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.data[i]) counts[i] = 0;
  ASSERT_GT(counts.size(), 10u);
  std::mt19937_64 rng(12);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto a = sample_boundary_anchor(lab, rng);
    auto it = counts.find(a.pixel.y * 24 + a.pixel.x);
    ASSERT_NE(it, counts.end());
    ++it->second;
  }
  const double expected = double(draws) / double(counts.size());
  double chi2 = 0;
  for (auto [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Normal approximation of the chi-square upper 0.1% quantile.
  const double dof = double(counts.size() - 1);
  EXPECT_LT(chi2, dof + 3.1 * std::sqrt(2 * dof));
}

TEST(CropLocal, CentredAndClamped) {
  auto img = gradient_image(2048, 2048);
  auto lab = vertical_split(2048, 2048, 1024);
  auto v = crop_local(img, lab, {1024, 1024});
  EXPECT_EQ(v.origin, (Pixel{768, 768}));
  EXPECT_EQ(v.l_star.height, 512u);
  EXPECT_EQ(v.l.height, 128u);
  auto corner = crop_local(img, lab, {0, 0});
  EXPECT_EQ(corner.origin, (Pixel{0, 0}));
  auto far = crop_local(img, lab, {2047, 2000});
  EXPECT_EQ(far.origin, (Pixel{1536, 1536}));
}

TEST(CropLocal, LabelsAlignWithSource) {
  std::mt19937_64 rng(13);
  auto lab = random_labels(300, 260, 4, rng);
  auto img = gradient_image(300, 260);
  auto geo = SampleGeometry::desk(32);
  auto v = crop_local(img, lab, {150, 17}, geo);
  for (int i = 0; i < 100; ++i) {
    const std::size_t y = rng() % geo.out, x = rng() % geo.out;
    EXPECT_EQ(v.s_l(y, x), lab(v.origin.y + y, v.origin.x + x));
    EXPECT_EQ(v.l_star(1, y, x), img(1, v.origin.y + y, v.origin.x + x));
  }
}

TEST(CropLocal, SmallSourceIsReflectPadded) {
  auto geo = SampleGeometry::desk(16);
  auto v = crop_local(gradient_image(40, 90), vertical_split(40, 90, 30), {10, 10}, geo);
  EXPECT_EQ(v.l_star.height, 64u);
  EXPECT_EQ(v.l_star.width, 64u);
  EXPECT_EQ(v.s_l(40, 0), 0);
}

TEST(DynamicMask, HalfSplitTieGoesToClassZero) {
  auto m = dynamic_mask(vertical_split(8, 8, 4));
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(m(y, x), x < 4 ? 1 : 0);
}

TEST(DynamicMask, ConstructedLongestBoundaryClass) {
  // Columns 4..11 are a 1/2 checkerboard with an extra column of 2s on the right.
  LabelMap l{Plane<std::int32_t>(12, 12, 0), 3};
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 4; x < 12; ++x) l.labels(y, x) = ((y + x) % 2 == 0 || x == 11) ? 2 : 1;
  ASSERT_EQ(oracle::longest_boundary_class(l.labels, 3), 2);
  auto m = dynamic_mask(l);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.data[i], l.labels.data[i] == 2 ? 1 : 0);
}

TEST(DynamicMask, SingleClassAllOnes) {
  auto m = dynamic_mask(LabelMap{Plane<std::int32_t>(5, 5, 2), 3});
  for (auto v : m.data) EXPECT_EQ(v, 1);
}

TEST(DynamicMask, MatchesBruteForceOnRandomMaps) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    const int classes = 2 + t % 4;
    auto l = random_labels(16 + t % 9, 16 + t % 7, classes, rng);
    const int c = oracle::longest_boundary_class(l.labels, classes);
    auto m = dynamic_mask(l);
    for (std::size_t i = 0; i < m.size(); ++i)
      ASSERT_EQ(m.data[i], c < 0 ? 1 : (l.labels.data[i] == c ? 1 : 0)) << "trial " << t;
  }
}

TEST(DynamicMask, RandomCropsSelectSeveralClasses) {
  // Three vertical bands of different roughness on a 128x128 source.
  LabelMap src{Plane<std::int32_t>(128, 128, 0), 3};
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) src.labels(y, x) = x < 40 ? 0 : x < 85 ? 1 : 2;
  for (std::size_t y = 0; y < 128; y += 4) src.labels(y, 40) = 0;
  auto img = gradient_image(128, 128);
  auto geo = SampleGeometry::desk(8);
  std::mt19937_64 rng(19);
  std::set<int> chosen;
  for (int i = 0; i < 1000; ++i) {
    auto a = sample_boundary_anchor(src, rng);
    auto v = crop_local(img, src, a.pixel, geo);
    chosen.insert(guiding_class(v.s_l));
  }
  EXPECT_GE(chosen.size(), 2u);
}

TEST(BoundaryMask, SingleClassIsEmpty) {
  auto b = boundary_mask(LabelMap{Plane<std::int32_t>(10, 10, 1), 2});
  for (auto v : b.data) EXPECT_EQ(v, 0);
}

TEST(BoundaryMask, VerticalSplitBandMatchesDilationOracle) {
  auto l = vertical_split(64, 64, 32);
  auto b = boundary_mask(l, 16);
  EXPECT_EQ(b, oracle::dilate(oracle::boundary_scan(l.labels), 16));
  // seam columns 31,32; window x-8..x+7 -> band [24, 40]
  for (std::size_t x = 0; x < 64; ++x) EXPECT_EQ(b(10, x), (x >= 24 && x <= 40) ? 1 : 0) << x;
}

TEST(BoundaryMask, KernelOneIsRawBoundary) {
  std::mt19937_64 rng(23);
  auto l = random_labels(30, 20, 3, rng);
  EXPECT_EQ(boundary_mask(l, 1), oracle::boundary_scan(l.labels));
}

TEST(BoundaryMask, MatchesOracleAndIsMonotoneInKernel) {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 20; ++t) {
    auto l = random_labels(40, 33, 3, rng);
    Mask prev;
    for (std::size_t k : {1u, 2u, 3u, 5u, 8u, 16u}) {
      auto b = boundary_mask(l, k);
      ASSERT_EQ(b, oracle::dilate(oracle::boundary_scan(l.labels), k)) << "k=" << k;
      if (prev.size()) {
        for (std::size_t i = 0; i < b.size(); ++i) ASSERT_LE(prev.data[i], b.data[i]);
      }
      prev = b;
    }
  }
}

TEST(LdPatches, TwoClassPatchesCoverWholeWindow) {
  auto l = vertical_split(32, 32, 13);
  std::mt19937_64 rng(31);
  auto patches = sample_ld_patches(l, 0, 5, 64, rng);
  ASSERT_EQ(patches.size(), 64u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.f_pixels.size() + p.g_pixels.size(), 25u);
    EXPECT_FALSE(p.f_pixels.empty());
    EXPECT_FALSE(p.g_pixels.empty());
  }
}

TEST(LdPatches, SingleClassGivesEmptyList) {
  std::mt19937_64 rng(1);
  EXPECT_TRUE(sample_ld_patches(LabelMap{Plane<std::int32_t>(16, 16, 0), 1}, 0, 5, 10, rng).empty());
}

TEST(LdPatches, PartitionMatchesLabelLookup) {
  std::mt19937_64 gen(37);
  auto l = random_labels(40, 40, 4, gen);
  std::mt19937_64 rng(38);
  auto patches = sample_ld_patches(l, 1, 5, 30, rng);
  ASSERT_FALSE(patches.empty());
  for (const auto& p : patches) {
    EXPECT_EQ(p.batch, 1u);
    ASSERT_EQ(p.f_pixels.size() + p.g_pixels.size(), 25u);
    // The window is the 5x5 box spanned by all its pixels; its centre is in f.
    std::size_t y0 = 1000, x0 = 1000;
    for (auto q : p.f_pixels) y0 = std::min(y0, q / 40), x0 = std::min(x0, q % 40);
    for (auto q : p.g_pixels) y0 = std::min(y0, q / 40), x0 = std::min(x0, q % 40);
    const std::int32_t centre = l(y0 + 2, x0 + 2);
    std::set<std::int32_t> others;
    for (auto q : p.f_pixels) EXPECT_EQ(l.labels.data[q], centre);
    for (auto q : p.g_pixels) {
      EXPECT_NE(l.labels.data[q], centre);
      others.insert(l.labels.data[q]);
    }
    EXPECT_EQ(others.size(), 1u);
    EXPECT_EQ(oracle::boundary_scan(l.labels)(y0 + 2, x0 + 2), 1);
  }
}

TEST(TrainSampleStream, DeterministicPerSeedAndIndex) {
  std::mt19937_64 gen(41);
  auto lab = random_labels(160, 160, 3, gen);
  auto img = gradient_image(160, 160);
  auto geo = SampleGeometry::desk(16);
  auto r1 = sample_rng(5, 3), r2 = sample_rng(5, 3), r3 = sample_rng(5, 4);
  auto a = make_train_sample(img, lab, r1, geo), b = make_train_sample(img, lab, r2, geo);
  EXPECT_EQ(a.g_star, b.g_star);
  EXPECT_EQ(a.l_star, b.l_star);
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.anchor, b.anchor);
  auto c = make_train_sample(img, lab, r3, geo);
  EXPECT_FALSE(c.anchor == a.anchor && c.g_star == a.g_star);
  EXPECT_EQ(oracle::boundary_scan(lab.labels)(a.anchor.y, a.anchor.x), 1);
  EXPECT_EQ(a.g.height, 16u);
  EXPECT_EQ(a.b_g.height, 64u);
  EXPECT_EQ(a.b_l, boundary_mask(a.s_l, geo.dilation));
}

}  // namespace
}  // namespace pcnet
