#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

#include "coltran/data.h"
#include "coltran/errors.h"
#include "coltran/image_io.h"
#include "test_support.h"

using namespace coltran;
namespace fs = std::filesystem;

namespace {

RgbImage solid(std::size_t h, std::size_t w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img(h, w);
  for (std::size_t p = 0; p < h * w; ++p) {
    img.pixels[p * 3] = r;
    img.pixels[p * 3 + 1] = g;
    img.pixels[p * 3 + 2] = b;
  }
  return img;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("coltran_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("luma of reference colors") {
  CHECK(to_grayscale(solid(1, 1, 255, 255, 255)).pixels[0] == 255);
  CHECK(to_grayscale(solid(1, 1, 0, 0, 0)).pixels[0] == 0);
  CHECK(to_grayscale(solid(1, 1, 255, 0, 0)).pixels[0] == 76);
  for (int v = 0; v < 256; ++v) {
    CHECK(to_grayscale(solid(1, 1, v, v, v)).pixels[0] == v);
  }
}

TEST_CASE("luma agrees with the weighted-sum formula") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    const int r = rng() % 256, g = rng() % 256, b = rng() % 256;
    // Nearest integer to n / 1000 in exact arithmetic, halves rounding up.
    const long n = 299L * r + 587L * g + 114L * b;
    long expected = n / 1000;
    if (std::abs(1000 * (expected + 1) - n) <= std::abs(1000 * expected - n)) ++expected;
    CHECK(to_grayscale(solid(1, 1, r, g, b)).pixels[0] == expected);
  }
}

TEST_CASE("area downsampling") {
  CHECK(area_downsample(solid(4, 4, 9, 99, 200), 2) == solid(2, 2, 9, 99, 200));
  GrayscaleImage g(2, 2);
  g.pixels = {0, 0, 255, 255};
  CHECK(area_downsample(g, 2).pixels[0] == 128);
  CHECK_THROWS_AS(area_downsample(solid(3, 4, 0, 0, 0), 2), ResolutionError);
  CHECK_THROWS_AS(area_downsample(GrayscaleImage(4, 5), 2), ResolutionError);
}

TEST_CASE("area downsampling preserves the mean within rounding") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t f = 1 + trial % 4;
    auto img = coltran::testing::random_rgb(4 * f, 8 * f, rng);
    auto lo = area_downsample(img, f);
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0, b = 0;
      for (std::size_t p = 0; p < img.height * img.width; ++p) a += img.pixels[p * 3 + c];
      for (std::size_t p = 0; p < lo.height * lo.width; ++p) b += lo.pixels[p * 3 + c];
      a /= static_cast<double>(img.height * img.width);
      b /= static_cast<double>(lo.height * lo.width);
      CHECK(std::abs(a - b) <= 0.5);
    }
    // Replicating back keeps the block means.
    auto up = upsample_nearest(lo, f);
    CHECK(up.height == img.height);
    CHECK(area_downsample(up, f) == lo);
  }
}

TEST_CASE("coarse quantization examples") {
  CHECK(coarse_index(0, 0, 0) == 0);
  CHECK(coarse_index(255, 255, 255) == 511);
  CHECK(coarse_index(255, 128, 0) == 480);
  const auto l = coarse_levels(480);
  CHECK(l == std::array<std::uint8_t, 3>{7, 4, 0});
  CHECK_THROWS_AS(coarse_levels(512), VocabularyError);
  auto red = quantize_coarse(solid(2, 2, 255, 0, 0));
  for (auto v : red.indices) CHECK(v == 448);
  CoarseImage c(1, 2);
  c.indices = {0, 511};
  auto d = dequantize_coarse(c);
  CHECK(d.at(0, 0, 0) == 16);
  CHECK(d.at(0, 1, 2) == 240);
}

TEST_CASE("quantization roundtrip over every coarse color") {
  CoarseImage c(16, 32);
  for (std::size_t i = 0; i < 512; ++i) c.indices[i] = static_cast<std::uint16_t>(i);
  CHECK(quantize_coarse(dequantize_coarse(c)) == c);
}

TEST_CASE("quantization error, monotonicity and surjectivity over the 8-bit range") {
  std::set<std::uint16_t> seen;
  for (int v = 0; v < 256; ++v) {
    const auto idx = coarse_index(v, v, v);
    const auto lv = coarse_levels(idx);
    CHECK(std::abs(int(lv[0]) * 32 + 16 - v) <= 16);
    if (v > 0) CHECK(coarse_levels(coarse_index(v - 1, 0, 0))[0] <= lv[0]);
  }
  for (int r = 0; r < 256; r += 32)
    for (int g = 0; g < 256; g += 32)
      for (int b = 0; b < 256; b += 32) seen.insert(coarse_index(r, g, b));
  CHECK(seen.size() == 512);
}

TEST_CASE("training example shapes and purity") {
  DatasetSpec spec;
  spec.core_height = spec.core_width = 4;
  spec.image_height = spec.image_width = 8;
  std::mt19937_64 rng(3);
  auto img = coltran::testing::random_rgb(8, 8, rng);
  auto ex = make_training_example(img, spec);
  CHECK(ex.gray_lo.height == 4);
  CHECK(ex.coarse.width == 4);
  CHECK(ex.rgb_hi.height == 8);
  CHECK(ex.rgb_lo.width == 4);
  CHECK(ex.gray_hi == to_grayscale(img));
  CHECK(ex.coarse == quantize_coarse(area_downsample(img, 2)));
  auto again = make_training_example(img, spec);
  CHECK(again.coarse == ex.coarse);
  CHECK(again.gray_lo == ex.gray_lo);
  CHECK_THROWS_AS(make_training_example(coltran::testing::random_rgb(6, 8, rng), spec), ResolutionError);
}

TEST_CASE("png roundtrip and atomic writes") {
  const auto dir = scratch_dir("png");
  std::mt19937_64 rng(4);
  auto img = coltran::testing::random_rgb(5, 7, rng);
  write_png_atomic(dir / "a.png", img);
  CHECK(read_png_rgb(dir / "a.png") == img);
  CHECK_FALSE(fs::exists(dir / "a.png.tmp"));
  auto gray = coltran::testing::random_gray(3, 4, rng);
  write_png(dir / "g.png", gray);
  CHECK(read_png_gray(dir / "g.png") == gray);
  CHECK(read_png_gray(dir / "a.png") == to_grayscale(img));
  CHECK_THROWS_AS(read_png_rgb(dir / "missing.png"), ImageIoError);
  CHECK_THROWS(write_png_atomic(dir / "no_such_dir" / "x.png", img));
  CHECK_FALSE(fs::exists(dir / "no_such_dir" / "x.png"));
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png_rgb(dir / "junk.png"), ImageIoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset loading splits deterministically and disjointly") {
  const auto dir = scratch_dir("dataset");
  const auto images = synthetic_images(10, 8, 8, 5);
  for (std::size_t i = 0; i < images.size(); ++i) write_png(dir / ("im" + std::to_string(i) + ".png"), images[i]);
  DatasetSpec spec;
  spec.source = dir;
  spec.core_height = spec.core_width = 4;
  spec.image_height = spec.image_width = 8;
  spec.holdout_count = 3;
  spec.shuffle_seed = 9;
  auto a = load_dataset(spec);
  auto b = load_dataset(spec);
  CHECK(a.train.size() == 7);
  CHECK(a.holdout.size() == 3);
  CHECK(a.train.names == b.train.names);
  std::set<std::string> names(a.train.names.begin(), a.train.names.end());
  for (const auto& n : a.holdout.names) CHECK(names.count(n) == 0);

  std::ofstream(dir / "manifest.txt") << "im1.png\nim2.png\n\nim3.png\n";
  spec.holdout_count = 1;
  auto m = load_dataset(spec);
  CHECK(m.train.size() + m.holdout.size() == 3);

  spec.holdout_count = 3;
  CHECK_THROWS_AS(load_dataset(spec), ConfigError);
  spec.source = dir / "absent";
  CHECK_THROWS_AS(load_dataset(spec), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus is deterministic and varied") {
  auto a = synthetic_images(8, 16, 16, 11);
  auto b = synthetic_images(8, 16, 16, 11);
  CHECK(a == b);
  CHECK_FALSE(a[0] == a[1]);
  std::set<std::uint16_t> colors;
  for (const auto& img : a) {
    for (auto v : quantize_coarse(img).indices) colors.insert(v);
  }
  CHECK(colors.size() > 8);
}

TEST_CASE("batch sampler covers each epoch exactly once") {
  BatchSampler s(10, 5, 1);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 2; ++i)
    for (auto v : s.next()) seen.insert(v);
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
  BatchSampler t(10, 5, 1);
  BatchSampler u(10, 5, 1);
  CHECK(t.next() == u.next());
  CHECK_THROWS_AS(BatchSampler(0, 1, 0), ConfigError);
}
