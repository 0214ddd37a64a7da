#pragma once

// End-to-end inference built on trained checkpoints: colorization,
// probability maps and evaluation reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coltran/core.h"
#include "coltran/data.h"
#include "coltran/training.h"
#include "coltran/upsampler.h"

namespace coltran {

std::unique_ptr<ColTranCore<float>> load_core(const std::filesystem::path& path, WeightSet set);
/// `stage` must be color_up or spatial_up and match the checkpoint.
std::unique_ptr<Upsampler<float>> load_upsampler(const std::filesystem::path& path, Stage stage, WeightSet set);

/// Samples `samples` coarse images (seeds seed, seed+1, ...) and decodes
/// each through both upsamplers by argmax. `gray` must be H x W.
std::vector<RgbImage> colorize(const ColTranCore<float>& core, const Upsampler<float>& color,
                               const Upsampler<float>& spatial, const GrayscaleImage& gray, std::size_t samples,
                               std::optional<std::size_t> top_k, std::uint64_t seed);

/// round(255 * max softmax) per pixel of [1, M, N, V] logits.
GrayscaleImage probability_map(const Tensor<float>& logits);

/// Teacher-forced map for `coarse`, or for a coarse image sampled with
/// `seed` when none is given. `gray` may be M x N or H x W.
GrayscaleImage probmap(const ColTranCore<float>& core, const GrayscaleImage& gray, const CoarseImage* coarse,
                       std::uint64_t seed);

/// Brings a grayscale input to the core resolution, or throws
/// ResolutionError naming the expected M, N, H and W.
GrayscaleImage core_grayscale(const ModelConfig& config, const GrayscaleImage& gray);

/// Metric name and value, in report order.
using Report = std::vector<std::pair<std::string, double>>;

struct EvalModels {
  const ColTranCore<float>* core = nullptr;
  const Upsampler<float>* color = nullptr;
  const Upsampler<float>* spatial = nullptr;
};

Report evaluate(const EvalModels& models, const Dataset& data, std::size_t batch_size);
std::string format_report(const Report& report);

}  // namespace coltran
