#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pcnet/data.hpp"

namespace pcnet {
namespace {

namespace fs = std::filesystem;

class DataTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pcnet_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string bytes_of(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST_F(DataTest, BlackImageAndZeroLabel) {
  save_image(path("i.png"), Image(3, 2, 2, 0.0f));
  save_label_plane(path("l.png"), Plane<std::int32_t>(2, 2, 0));
  auto s = load_pair(path("i.png"), path("l.png"), 2);
  EXPECT_EQ(s.image, Image(3, 2, 2, 0.0f));
  EXPECT_EQ(s.label.labels, Plane<std::int32_t>(2, 2, 0));
  EXPECT_EQ(s.label.num_classes, 2);
}

TEST_F(DataTest, SizeMismatchNamesBothSizes) {
  save_image(path("i.png"), Image(3, 4, 5));
  save_label_plane(path("l.png"), Plane<std::int32_t>(4, 4, 0));
  try {
    load_pair(path("i.png"), path("l.png"), 2);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("5x4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x4"), std::string::npos) << msg;
  }
}

TEST_F(DataTest, SixteenBitLabelOutOfRange) {
  Plane<std::int32_t> l(3, 3, 0);
  l(1, 1) = 300;
  save_label_plane(path("l.png"), l);
  save_image(path("i.png"), Image(3, 3, 3));
  EXPECT_EQ(png::read(path("l.png")).bit_depth, 16);
  EXPECT_THROW(load_pair(path("i.png"), path("l.png"), 21), LabelRangeError);
}

TEST_F(DataTest, UndecodableFileIsDecodeError) {
  std::ofstream(path("bad.png")) << "not a png";
  save_label_plane(path("l.png"), Plane<std::int32_t>(2, 2, 0));
  EXPECT_THROW(load_pair(path("bad.png"), path("l.png"), 2), DecodeError);
  EXPECT_THROW(load_pair(path("missing.png"), path("l.png"), 2), DecodeError);
}

TEST_F(DataTest, ErrorKindsAreDistinct) {
  EXPECT_FALSE((std::is_base_of_v<DimensionError, LabelRangeError>));
  EXPECT_FALSE((std::is_base_of_v<DecodeError, DimensionError>));
  EXPECT_TRUE((std::is_base_of_v<DataError, DecodeError>));
}

TEST_F(DataTest, RoundTripExactLabelsAndQuantizedImages) {
  std::mt19937_64 rng(3);
  Image im(3, 17, 23);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : im.data) v = u(rng);
  auto labels = oracle::random_blocks(17, 23, 5, 6, rng);
  save_image(path("i.png"), im);
  save_label_plane(path("l.png"), labels);
  auto s = load_pair(path("i.png"), path("l.png"), 5);
  EXPECT_EQ(s.label.labels, labels);
  for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_LE(std::abs(s.image.data[i] - im.data[i]), 1.0f / 255.0f);
}

TEST_F(DataTest, GrayscaleImageReplicatesChannels) {
  png::write(path("g.png"), png::Raw{2, 1, 1, 8, {0, 255}});
  auto im = load_image(path("g.png"));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(im(c, 0, 0), 0.0f);
    EXPECT_EQ(im(c, 0, 1), 1.0f);
  }
}

TEST_F(DataTest, ManifestRoundTripAndErrors) {
  std::ofstream(path("m.txt")) << "#classes=3\n#split=val\na.png\tb.png\n\nc.png\td.png\n";
  auto m = load_manifest(path("m.txt"));
  EXPECT_EQ(m.num_classes, 3);
  EXPECT_EQ(m.split, "val");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[1].label, path("d.png"));
  std::ofstream(path("nohdr.txt")) << "a.png\tb.png\n";
  EXPECT_THROW(load_manifest(path("nohdr.txt")), DataError);
  std::ofstream(path("notab.txt")) << "#classes=2\na.png b.png\n";
  EXPECT_THROW(load_manifest(path("notab.txt")), DataError);
  EXPECT_THROW(load_manifest(path("absent.txt")), DataError);
}

TEST_F(DataTest, SyntheticIsByteIdenticalUnderSeed) {
  SynthSpec spec;
  spec.n_images = 1;
  spec.size = 64;
  spec.n_classes = 2;
  spec.seed = 7;
  generate_synthetic(spec, path("a"));
  generate_synthetic(spec, path("b"));
  for (const char* f : {"images/00000.png", "labels/00000.png", "manifest.txt"})
    EXPECT_EQ(bytes_of(path(std::string("a/") + f)), bytes_of(path(std::string("b/") + f))) << f;
}

TEST_F(DataTest, SyntheticLabelsInRangeWithBoundaries) {
  for (auto family : {ShapeFamily::rectangles, ShapeFamily::ellipses, ShapeFamily::voronoi})
    for (int classes : {2, 4}) {
      SynthSpec spec;
      spec.n_images = 3;
      spec.size = 64;
      spec.n_classes = classes;
      spec.family = family;
      spec.seed = 11;
      const auto m = generate_synthetic(spec, path("s"));
      for (const auto& s : load_dataset(load_manifest(path("s/manifest.txt")))) {
        for (auto v : s.label.labels.data) ASSERT_LT(v, classes);
        const auto b = oracle::boundary_scan(s.label.labels);
        EXPECT_TRUE(std::any_of(b.data.begin(), b.data.end(), [](auto v) { return v != 0; }));
      }
      EXPECT_EQ(m.records.size(), 3u);
    }
}

TEST_F(DataTest, LabelBoundariesCoincideWithColourEdges) {
  SynthSpec spec;
  spec.n_images = 2;
  spec.size = 96;
  spec.n_classes = 3;
  spec.family = ShapeFamily::ellipses;
  spec.seed = 5;
  generate_synthetic(spec, path("s"));
  for (const auto& s : load_dataset(load_manifest(path("s/manifest.txt")))) {
    // Colour edge: some 4-neighbour differs by more than twice the noise in a channel.
    Mask edge(s.image.height, s.image.width, 0);
    const float thr = float(2 * spec.noise + 2.0 / 255.0);
    for (std::size_t y = 0; y < s.image.height; ++y)
      for (std::size_t x = 0; x < s.image.width; ++x) {
        auto differs = [&](std::size_t ny, std::size_t nx) {
          for (std::size_t c = 0; c < 3; ++c)
            if (std::abs(s.image(c, y, x) - s.image(c, ny, nx)) > thr) return true;
          return false;
        };
        edge(y, x) = (y > 0 && differs(y - 1, x)) || (y + 1 < s.image.height && differs(y + 1, x)) ||
                     (x > 0 && differs(y, x - 1)) || (x + 1 < s.image.width && differs(y, x + 1));
      }
    const auto b = oracle::boundary_scan(s.label.labels);
    EXPECT_DOUBLE_EQ(oracle::matched_fraction(b, edge, 1), 1.0);
    EXPECT_DOUBLE_EQ(oracle::matched_fraction(edge, b, 1), 1.0);
  }
}

}  // namespace
}  // namespace pcnet
