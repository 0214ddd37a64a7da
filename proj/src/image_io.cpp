#include "coltran/image_io.h"

#include <png.h>

#include <cstdio>
#include <memory>
#include <system_error>

#include "coltran/errors.h"

namespace coltran {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct DecodedPng {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

DecodedPng decode(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8)) {
    throw ImageIoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError("libpng initialization failed");
  }
  DecodedPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.pixels.resize(out.width * out.height * out.channels);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3) {
    throw ImageIoError("unsupported channel count in " + path.string());
  }
  return out;
}

void encode(const std::filesystem::path& path, std::size_t height, std::size_t width, int color_type,
            std::size_t channels, const std::uint8_t* pixels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("failed to encode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(pixels + y * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw ImageIoError("failed to flush " + path.string());
}

template <typename Image>
void atomic_write(const std::filesystem::path& path, const Image& image) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    write_png(tmp, image);
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  auto png = decode(path);
  RgbImage img(png.height, png.width);
  if (png.channels == 3) {
    img.pixels = std::move(png.pixels);
  } else {
    for (std::size_t i = 0; i < png.height * png.width; ++i) {
      img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = png.pixels[i];
    }
  }
  return img;
}

GrayscaleImage read_png_gray(const std::filesystem::path& path) {
  auto png = decode(path);
  if (png.channels == 1) {
    GrayscaleImage img(png.height, png.width);
    img.pixels = std::move(png.pixels);
    return img;
  }
  RgbImage rgb(png.height, png.width);
  rgb.pixels = std::move(png.pixels);
  return to_grayscale(rgb);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  encode(path, image.height, image.width, PNG_COLOR_TYPE_RGB, 3, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const GrayscaleImage& image) {
  encode(path, image.height, image.width, PNG_COLOR_TYPE_GRAY, 1, image.pixels.data());
}

void write_png_atomic(const std::filesystem::path& path, const RgbImage& image) { atomic_write(path, image); }
void write_png_atomic(const std::filesystem::path& path, const GrayscaleImage& image) {
  atomic_write(path, image);
}

}  // namespace coltran
