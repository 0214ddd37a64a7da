#include "coltran/data.h"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "coltran/errors.h"
#include "coltran/image_io.h"

namespace coltran {

namespace {

// floor(sum / count + 1/2) in integers.
std::uint8_t round_half_up_mean(std::uint64_t sum, std::uint64_t count) {
  return static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
}

void check_factor(std::size_t h, std::size_t w, std::size_t factor) {
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw ResolutionError("image of " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by factor " + std::to_string(factor));
  }
}

std::size_t resolution_factor(std::size_t hi, std::size_t lo, const char* what) {
  if (lo == 0 || hi % lo != 0) {
    throw ResolutionError(std::string(what) + " " + std::to_string(hi) + " is not a multiple of " +
                          std::to_string(lo));
  }
  return hi / lo;
}

}  // namespace

GrayscaleImage to_grayscale(const RgbImage& image) {
  GrayscaleImage out(image.height, image.width);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    const std::uint32_t weighted = 299u * image.pixels[i * 3] + 587u * image.pixels[i * 3 + 1] +
                                   114u * image.pixels[i * 3 + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::min<std::uint32_t>((weighted + 500u) / 1000u, 255u));
  }
  return out;
}

RgbImage area_downsample(const RgbImage& image, std::size_t factor) {
  check_factor(image.height, image.width, factor);
  RgbImage out(image.height / factor, image.width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint64_t total = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) total += image.at(y * factor + dy, x * factor + dx, c);
        out.at(y, x, c) = round_half_up_mean(total, factor * factor);
      }
  return out;
}

GrayscaleImage area_downsample(const GrayscaleImage& image, std::size_t factor) {
  check_factor(image.height, image.width, factor);
  GrayscaleImage out(image.height / factor, image.width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      std::uint64_t total = 0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) total += image.at(y * factor + dy, x * factor + dx);
      out.at(y, x) = round_half_up_mean(total, factor * factor);
    }
  return out;
}

RgbImage upsample_nearest(const RgbImage& image, std::size_t factor) {
  if (factor == 0) throw ResolutionError("upsampling factor must be positive");
  RgbImage out(image.height * factor, image.width * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y / factor, x / factor, c);
  return out;
}

std::uint16_t coarse_index(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint16_t>((r / 32) * 64 + (g / 32) * 8 + b / 32);
}

std::array<std::uint8_t, 3> coarse_levels(std::size_t index) {
  if (index >= kCoarseColors) {
    throw VocabularyError("coarse index " + std::to_string(index) + " outside [0, 512)");
  }
  return {static_cast<std::uint8_t>(index / 64), static_cast<std::uint8_t>((index / 8) % 8),
          static_cast<std::uint8_t>(index % 8)};
}

CoarseImage quantize_coarse(const RgbImage& image) {
  CoarseImage out(image.height, image.width);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    out.indices[i] = coarse_index(image.pixels[i * 3], image.pixels[i * 3 + 1], image.pixels[i * 3 + 2]);
  }
  return out;
}

RgbImage dequantize_coarse(const CoarseImage& image) {
  RgbImage out(image.height, image.width);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    const auto levels = coarse_levels(image.indices[i]);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = static_cast<std::uint8_t>(levels[c] * 32 + 16);
  }
  return out;
}

TrainingExample make_training_example(const RgbImage& image, const DatasetSpec& spec) {
  if (image.height != spec.image_height || image.width != spec.image_width) {
    throw ResolutionError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          ", expected " + std::to_string(spec.image_height) + "x" +
                          std::to_string(spec.image_width));
  }
  const std::size_t fy = resolution_factor(spec.image_height, spec.core_height, "image height");
  const std::size_t fx = resolution_factor(spec.image_width, spec.core_width, "image width");
  if (fy != fx) throw ResolutionError("downsampling factors differ between height and width");
  TrainingExample ex;
  ex.rgb_hi = image;
  ex.gray_hi = to_grayscale(image);
  ex.rgb_lo = area_downsample(image, fy);
  ex.gray_lo = area_downsample(ex.gray_hi, fy);
  ex.coarse = quantize_coarse(ex.rgb_lo);
  return ex;
}

Dataset make_dataset(const std::vector<RgbImage>& images, const DatasetSpec& spec) {
  Dataset ds;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ds.names.push_back("image_" + std::to_string(i));
    ds.examples.push_back(make_training_example(images[i], spec));
  }
  return ds;
}

DatasetSplit load_dataset(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(spec.source)) throw ConfigError("dataset directory not found: " + spec.source.string());
  std::vector<std::string> files;
  const auto manifest = spec.source / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) files.push_back(line);
    }
  } else {
    for (const auto& entry : fs::directory_iterator(spec.source)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        files.push_back(entry.path().filename().string());
      }
    }
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  if (files.empty()) throw ConfigError("no images found in " + spec.source.string());
  if (spec.holdout_count >= files.size() && spec.holdout_count > 0) {
    throw ConfigError("holdout count " + std::to_string(spec.holdout_count) + " leaves no training images");
  }
  std::mt19937_64 rng(spec.shuffle_seed);
  std::shuffle(files.begin(), files.end(), rng);
  DatasetSplit split;
  const std::size_t n_train = files.size() - spec.holdout_count;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Dataset& target = i < n_train ? split.train : split.holdout;
    target.names.push_back(files[i]);
    target.examples.push_back(make_training_example(read_png_rgb(spec.source / files[i]), spec));
  }
  return split;
}

std::vector<RgbImage> synthetic_images(std::size_t count, std::size_t height, std::size_t width,
                                       std::uint64_t seed) {
  static constexpr std::array<std::array<int, 3>, 8> palette = {{
      {220, 40, 40}, {40, 180, 60}, {40, 80, 220}, {230, 210, 50},
      {150, 60, 180}, {240, 140, 30}, {40, 200, 200}, {130, 80, 40},
  }};
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  std::vector<RgbImage> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    RgbImage img(height, width);
    const std::size_t bg = uniform(palette.size());
    for (std::size_t y = 0; y < height; ++y) {
      // Background darkens towards the bottom.
      const int shade = 100 - static_cast<int>(50 * y / std::max<std::size_t>(height - 1, 1));
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(palette[bg][c] * shade / 100);
    }
    const std::size_t shapes = 1 + uniform(3);
    for (std::size_t s = 0; s < shapes; ++s) {
      std::size_t color = uniform(palette.size());
      if (color == bg) color = (color + 1) % palette.size();
      const std::size_t h = std::max<std::size_t>(2, height / 4 + uniform(height / 2 + 1));
      const std::size_t w = std::max<std::size_t>(2, width / 4 + uniform(width / 2 + 1));
      const std::size_t y0 = uniform(height - std::min(h, height) + 1);
      const std::size_t x0 = uniform(width - std::min(w, width) + 1);
      const bool disc = uniform(2) == 1;
      for (std::size_t y = y0; y < std::min(height, y0 + h); ++y)
        for (std::size_t x = x0; x < std::min(width, x0 + w); ++x) {
          if (disc) {
            const double cy = (static_cast<double>(y - y0) + 0.5) / h - 0.5;
            const double cx = (static_cast<double>(x - x0) + 0.5) / w - 0.5;
            if (cy * cy + cx * cx > 0.25) continue;
          }
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(palette[color][c]);
        }
    }
    out.push_back(std::move(img));
  }
  return out;
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), rng_(seed), order_(dataset_size) {
  if (dataset_size == 0) throw ConfigError("cannot sample batches from an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_);
  while (batch.size() < batch_) {
    if (cursor_ == size_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

}  // namespace coltran
