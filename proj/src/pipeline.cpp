#include "coltran/pipeline.h"

#include <cmath>
#include <sstream>

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

namespace {

std::string resolution_summary(const ModelConfig& c) {
  return "M=" + std::to_string(c.core_height) + ", N=" + std::to_string(c.core_width) +
         ", H=" + std::to_string(c.image_height) + ", W=" + std::to_string(c.image_width);
}

void check_stage(const Checkpoint& ckpt, Stage expected, const std::filesystem::path& path) {
  if (ckpt.stage != expected) {
    throw CheckpointError(path.string() + " holds a " + std::string(stage_name(ckpt.stage)) + " checkpoint, expected " +
                          std::string(stage_name(expected)));
  }
}

bool same_resolution(const ModelConfig& a, const ModelConfig& b) {
  return a.core_height == b.core_height && a.core_width == b.core_width && a.image_height == b.image_height &&
         a.image_width == b.image_width;
}

}  // namespace

std::unique_ptr<ColTranCore<float>> load_core(const std::filesystem::path& path, WeightSet set) {
  const auto ckpt = load_checkpoint(path);
  check_stage(ckpt, Stage::core, path);
  auto model = std::make_unique<ColTranCore<float>>(ckpt.model, 0);
  import_weights(model->params(), ckpt.weights(set));
  return model;
}

std::unique_ptr<Upsampler<float>> load_upsampler(const std::filesystem::path& path, Stage stage, WeightSet set) {
  if (stage == Stage::core) throw ContractError("load_upsampler needs an upsampler stage");
  const auto ckpt = load_checkpoint(path);
  check_stage(ckpt, stage, path);
  auto model = std::make_unique<Upsampler<float>>(
      stage == Stage::color_up ? UpsamplerKind::color : UpsamplerKind::spatial, ckpt.model, 0);
  import_weights(model->params(), ckpt.weights(set));
  return model;
}

GrayscaleImage core_grayscale(const ModelConfig& c, const GrayscaleImage& gray) {
  if (gray.height == c.core_height && gray.width == c.core_width) return gray;
  if (gray.height == c.image_height && gray.width == c.image_width) {
    return area_downsample(gray, c.image_height / c.core_height);
  }
  throw ResolutionError("grayscale input is " + std::to_string(gray.height) + "x" + std::to_string(gray.width) +
                        "; expected HxW or MxN with " + resolution_summary(c));
}

std::vector<RgbImage> colorize(const ColTranCore<float>& core, const Upsampler<float>& color,
                               const Upsampler<float>& spatial, const GrayscaleImage& gray, std::size_t samples,
                               std::optional<std::size_t> top_k, std::uint64_t seed) {
  const auto& cfg = core.config();
  if (!same_resolution(cfg, color.config()) || !same_resolution(cfg, spatial.config())) {
    throw ConfigError("core and upsampler checkpoints disagree on resolution (core has " + resolution_summary(cfg) +
                      ")");
  }
  if (color.kind() != UpsamplerKind::color || spatial.kind() != UpsamplerKind::spatial) {
    throw ContractError("colorize needs a color and a spatial upsampler");
  }
  if (gray.height != cfg.image_height || gray.width != cfg.image_width) {
    throw ResolutionError("grayscale input is " + std::to_string(gray.height) + "x" + std::to_string(gray.width) +
                          ", expected " + std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width) +
                          " (" + resolution_summary(cfg) + ")");
  }
  if (samples == 0) throw ConfigError("samples must be positive");
  NoGradGuard no_grad;
  const auto gray_lo = area_downsample(gray, cfg.image_height / cfg.core_height);
  const std::vector<GrayscaleImage> lo(samples, gray_lo), hi(samples, gray);
  const auto coarse = sample_core(core, std::span<const GrayscaleImage>(lo), seed, top_k);
  const auto rgb_lo = argmax_decode(color_upsample(color, std::span<const CoarseImage>(coarse),
                                                   std::span<const GrayscaleImage>(lo)));
  return argmax_decode(spatial_upsample(spatial, std::span<const RgbImage>(rgb_lo),
                                        std::span<const GrayscaleImage>(hi)));
}

GrayscaleImage probability_map(const Tensor<float>& logits) {
  const auto& s = logits.shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("probability_map expects [1, M, N, V], got " + shape_str(s));
  NoGradGuard no_grad;
  const auto probs = softmax(logits);
  const auto p = probs.data();
  const std::size_t v = s[3];
  GrayscaleImage out(s[1], s[2]);
  for (std::size_t i = 0; i < s[1] * s[2]; ++i) {
    float best = 0.0f;
    for (std::size_t k = 0; k < v; ++k) best = std::max(best, p[i * v + k]);
    const double level = std::floor(255.0 * static_cast<double>(best) + 0.5);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return out;
}

GrayscaleImage probmap(const ColTranCore<float>& core, const GrayscaleImage& gray, const CoarseImage* coarse,
                       std::uint64_t seed) {
  const auto& cfg = core.config();
  const auto gray_lo = core_grayscale(cfg, gray);
  const std::vector<GrayscaleImage> g{gray_lo};
  std::vector<CoarseImage> c;
  if (coarse) {
    if (coarse->height != cfg.core_height || coarse->width != cfg.core_width) {
      throw ResolutionError("coarse input is " + std::to_string(coarse->height) + "x" +
                            std::to_string(coarse->width) + ", expected MxN with " + resolution_summary(cfg));
    }
    c.push_back(*coarse);
  } else {
    c = sample_core(core, std::span<const GrayscaleImage>(g), seed);
  }
  NoGradGuard no_grad;
  return probability_map(core.forward(g, c).autoregressive);
}

Report evaluate(const EvalModels& models, const Dataset& data, std::size_t batch_size) {
  Report report;
  if (models.core) {
    const auto nll = evaluate_core(*models.core, data, batch_size);
    report.emplace_back("nll_ar", nll.autoregressive);
    report.emplace_back("nll_parallel", nll.parallel);
  }
  if (models.color) report.emplace_back("nll_color_up", evaluate_upsampler(*models.color, data, batch_size));
  if (models.spatial) report.emplace_back("nll_spatial_up", evaluate_upsampler(*models.spatial, data, batch_size));
  return report;
}

std::string format_report(const Report& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& [name, value] : report) os << name << '\t' << value << '\n';
  return os.str();
}

}  // namespace coltran
