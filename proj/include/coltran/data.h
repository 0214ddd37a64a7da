#pragma once

// Deterministic image transforms: grayscale conversion, area downsampling,
// 3-bit coarse color quantization, and dataset assembly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace coltran {

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

struct GrayscaleImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  GrayscaleImage() = default;
  GrayscaleImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const GrayscaleImage&) const = default;
};

/// One coarse color index per pixel, each in [0, 512) (or a reduced
/// vocabulary in test configurations).
struct CoarseImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint16_t> indices;

  CoarseImage() = default;
  CoarseImage(std::size_t h, std::size_t w) : height(h), width(w), indices(h * w, 0) {}
  std::uint16_t& at(std::size_t y, std::size_t x) { return indices[y * width + x]; }
  std::uint16_t at(std::size_t y, std::size_t x) const { return indices[y * width + x]; }
  bool operator==(const CoarseImage&) const = default;
};

inline constexpr std::size_t kCoarseLevels = 8;
inline constexpr std::size_t kCoarseColors = 512;

/// BT.601 luma, round-half-up.
GrayscaleImage to_grayscale(const RgbImage& image);

/// Each output cell is the round-half-up mean of its factor x factor block.
RgbImage area_downsample(const RgbImage& image, std::size_t factor);
GrayscaleImage area_downsample(const GrayscaleImage& image, std::size_t factor);
/// Nearest-neighbour replication by an integer factor.
RgbImage upsample_nearest(const RgbImage& image, std::size_t factor);

/// Index layout l_R * 64 + l_G * 8 + l_B with l = v / 32.
std::uint16_t coarse_index(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> coarse_levels(std::size_t index);
CoarseImage quantize_coarse(const RgbImage& image);
/// Level l maps to the bucket centre l * 32 + 16.
RgbImage dequantize_coarse(const CoarseImage& image);

struct DatasetSpec {
  std::filesystem::path source;
  std::size_t core_height = 8, core_width = 8;
  std::size_t image_height = 16, image_width = 16;
  std::size_t holdout_count = 0;
  std::uint64_t shuffle_seed = 0;
};

struct TrainingExample {
  GrayscaleImage gray_hi;  // H x W
  GrayscaleImage gray_lo;  // M x N
  CoarseImage coarse;      // M x N
  RgbImage rgb_lo;         // M x N
  RgbImage rgb_hi;         // H x W
};

TrainingExample make_training_example(const RgbImage& image, const DatasetSpec& spec);

struct Dataset {
  std::vector<std::string> names;
  std::vector<TrainingExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset holdout;
};

Dataset make_dataset(const std::vector<RgbImage>& images, const DatasetSpec& spec);

/// Reads `manifest.txt` (one relative PNG path per line) from the source
/// directory, or every *.png in it when no manifest exists. Filenames are
/// shuffled with `shuffle_seed` and the last `holdout_count` form the holdout.
DatasetSplit load_dataset(const DatasetSpec& spec);

/// Small images of flat colored shapes over a tinted gradient.
std::vector<RgbImage> synthetic_images(std::size_t count, std::size_t height, std::size_t width,
                                       std::uint64_t seed);

/// Epoch-wise shuffled batches of example indices, fixed by the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t size_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace coltran
