#pragma once

#include <filesystem>

#include "coltran/data.h"

namespace coltran {

/// 8-bit PNG of any color type, converted to RGB (gray is replicated).
RgbImage read_png_rgb(const std::filesystem::path& path);
/// 8-bit PNG; color inputs are converted with to_grayscale.
GrayscaleImage read_png_gray(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayscaleImage& image);

/// Writes next to `path` and renames into place, so readers never observe a
/// partial file. The temporary is removed on failure.
void write_png_atomic(const std::filesystem::path& path, const RgbImage& image);
void write_png_atomic(const std::filesystem::path& path, const GrayscaleImage& image);

}  // namespace coltran
