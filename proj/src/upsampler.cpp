#include "coltran/upsampler.h"

#include <string>

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

namespace {

const char* const kChannelNames[3] = {"r", "g", "b"};

std::string dims(std::size_t h, std::size_t w) { return std::to_string(h) + "x" + std::to_string(w); }

}  // namespace

template <typename T>
Upsampler<T>::Upsampler(UpsamplerKind kind, const ModelConfig& config, std::uint64_t seed)
    : kind_(kind), config_(config) {
  config_.validate();
  Initializer init(seed);
  const std::size_t d = config_.hidden;
  const std::size_t levels = kind_ == UpsamplerKind::color ? kCoarseLevels : kIntensityLevels;
  for (std::size_t c = 0; c < 3; ++c) {
    channel_embedding_[c] = params_.add(std::string("embedding.") + kChannelNames[c],
                                        init.normal<T>(Shape{levels, d}, 1.0));
  }
  gray_embedding_ = params_.add("embedding.gray", init.normal<T>(Shape{kIntensityLevels, d}, 1.0));
  if (config_.positional_embeddings) {
    row_pos_ = params_.add("row_position", init.normal<T>(Shape{height(), d}, 1.0));
    col_pos_ = params_.add("column_position", init.normal<T>(Shape{width(), d}, 1.0));
  }
  const std::size_t trunks = config_.per_channel_trunk ? 3 : 1;
  for (std::size_t t = 0; t < trunks; ++t) {
    const std::string prefix = config_.per_channel_trunk ? std::string("trunk.") + kChannelNames[t] : "trunk";
    std::vector<AttentionBlockParams<T>> blocks;
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      blocks.push_back(make_attention_block(params_, init, bp + ".row", d, config_.heads, config_.ffn_width(),
                                            config_.block_final_norm));
      blocks.push_back(make_attention_block(params_, init, bp + ".column", d, config_.heads,
                                            config_.ffn_width(), config_.block_final_norm));
    }
    trunks_.push_back(std::move(blocks));
    const std::string hp = config_.per_channel_trunk ? std::string("head.") + kChannelNames[t] : "head";
    head_w_.push_back(params_.add(hp + ".w", Tensor<T>(Shape{d, kIntensityLevels}, T{0})));
    head_b_.push_back(params_.add(hp + ".b", Tensor<T>(Shape{kIntensityLevels}, T{0})));
  }
}

template <typename T>
std::size_t Upsampler<T>::height() const {
  return kind_ == UpsamplerKind::color ? config_.core_height : config_.image_height;
}

template <typename T>
std::size_t Upsampler<T>::width() const {
  return kind_ == UpsamplerKind::color ? config_.core_width : config_.image_width;
}

template <typename T>
Tensor<T> Upsampler<T>::channel_logits(std::size_t channel, std::span<const std::int32_t> levels,
                                       std::span<const std::int32_t> gray, std::size_t batch) const {
  if (channel >= 3) throw ShapeError("channel index " + std::to_string(channel) + " out of range");
  const Shape grid{batch, height(), width()};
  auto x = add(embedding(channel_embedding_[channel], levels, grid), embedding(gray_embedding_, gray, grid));
  if (config_.positional_embeddings) {
    x = add(x, reshape(row_pos_, Shape{1, height(), 1, config_.hidden}));
    x = add(x, reshape(col_pos_, Shape{1, 1, width(), config_.hidden}));
  }
  const std::size_t t = config_.per_channel_trunk ? channel : 0;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    x = attention_block(x, trunks_[t][2 * b], Axis::row, MaskKind::none);
    x = attention_block(x, trunks_[t][2 * b + 1], Axis::column, MaskKind::none);
  }
  return add(matmul(x, head_w_[t]), head_b_[t]);
}

template <typename T>
ChannelLogits<T> color_upsample(const Upsampler<T>& model, std::span<const CoarseImage> coarse,
                                std::span<const GrayscaleImage> gray) {
  if (model.kind() != UpsamplerKind::color) throw ContractError("color_upsample needs a color upsampler");
  if (coarse.empty() || coarse.size() != gray.size()) {
    throw ShapeError("color upsampler needs matching non-empty coarse and grayscale batches");
  }
  const std::size_t h = model.height(), w = model.width();
  std::array<std::vector<std::int32_t>, 3> levels;
  std::vector<std::int32_t> g;
  for (std::size_t b = 0; b < coarse.size(); ++b) {
    if (coarse[b].height != h || coarse[b].width != w || gray[b].height != h || gray[b].width != w) {
      throw ResolutionError("color upsampler expects " + dims(h, w) + " inputs, got coarse " +
                            dims(coarse[b].height, coarse[b].width) + " and grayscale " +
                            dims(gray[b].height, gray[b].width));
    }
    for (auto idx : coarse[b].indices) {
      const auto l = coarse_levels(idx);
      for (std::size_t c = 0; c < 3; ++c) levels[c].push_back(l[c]);
    }
    g.insert(g.end(), gray[b].pixels.begin(), gray[b].pixels.end());
  }
  ChannelLogits<T> out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = model.channel_logits(c, levels[c], g, coarse.size());
  return out;
}

template <typename T>
ChannelLogits<T> spatial_upsample(const Upsampler<T>& model, std::span<const RgbImage> rgb_lo,
                                  std::span<const GrayscaleImage> gray_hi) {
  if (model.kind() != UpsamplerKind::spatial) throw ContractError("spatial_upsample needs a spatial upsampler");
  if (rgb_lo.empty() || rgb_lo.size() != gray_hi.size()) {
    throw ShapeError("spatial upsampler needs matching non-empty RGB and grayscale batches");
  }
  const auto& cfg = model.config();
  const std::size_t h = model.height(), w = model.width();
  std::array<std::vector<std::int32_t>, 3> levels;
  std::vector<std::int32_t> g;
  for (std::size_t b = 0; b < rgb_lo.size(); ++b) {
    const auto& lo = rgb_lo[b];
    if (lo.height == 0 || lo.width == 0 || h % lo.height != 0 || w % lo.width != 0 ||
        h / lo.height != w / lo.width) {
      throw ResolutionError("spatial upsampler cannot map " + dims(lo.height, lo.width) + " to " + dims(h, w));
    }
    if (lo.height != cfg.core_height || lo.width != cfg.core_width) {
      throw ResolutionError("spatial upsampler expects " + dims(cfg.core_height, cfg.core_width) +
                            " RGB input, got " + dims(lo.height, lo.width));
    }
    if (gray_hi[b].height != h || gray_hi[b].width != w) {
      throw ResolutionError("spatial upsampler expects " + dims(h, w) + " grayscale, got " +
                            dims(gray_hi[b].height, gray_hi[b].width));
    }
    const auto up = upsample_nearest(lo, h / lo.height);
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t c = 0; c < 3; ++c) levels[c].push_back(up.pixels[p * 3 + c]);
    }
    g.insert(g.end(), gray_hi[b].pixels.begin(), gray_hi[b].pixels.end());
  }
  ChannelLogits<T> out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = model.channel_logits(c, levels[c], g, rgb_lo.size());
  return out;
}

template <typename T>
Tensor<T> upsampler_nll(const ChannelLogits<T>& logits, std::span<const RgbImage> target) {
  const auto& shape = logits[0].shape();
  if (shape.size() != 4 || target.size() != shape[0]) {
    throw ShapeError("upsampler targets do not match logits " + shape_str(shape));
  }
  Tensor<T> total;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<std::int32_t> t;
    t.reserve(shape[0] * shape[1] * shape[2]);
    for (const auto& img : target) {
      if (img.height != shape[1] || img.width != shape[2]) {
        throw ResolutionError("upsampler target is " + dims(img.height, img.width) + ", logits are " +
                              dims(shape[1], shape[2]));
      }
      for (std::size_t p = 0; p < img.height * img.width; ++p) t.push_back(img.pixels[p * 3 + c]);
    }
    auto nll = gather_nll(logits[c], std::span<const std::int32_t>(t));
    total = total.defined() ? add(total, nll) : nll;
  }
  return scale(total, static_cast<T>(1.0 / 3.0));
}

template <typename T>
std::vector<RgbImage> argmax_decode(const ChannelLogits<T>& logits) {
  const auto& shape = logits[0].shape();
  if (shape.size() != 4) throw ShapeError("argmax_decode expects [B, Y, X, V], got " + shape_str(shape));
  const std::size_t batch = shape[0], h = shape[1], w = shape[2], v = shape[3];
  std::vector<RgbImage> out(batch, RgbImage(h, w));
  for (std::size_t c = 0; c < 3; ++c) {
    if (logits[c].shape() != shape) throw ShapeError("channel logits disagree in shape");
    const auto data = logits[c].data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < h * w; ++p) {
        const T* row = data.data() + (b * h * w + p) * v;
        std::size_t best = 0;
        for (std::size_t i = 1; i < v; ++i) {
          if (row[i] > row[best]) best = i;
        }
        out[b].pixels[p * 3 + c] = static_cast<std::uint8_t>(best);
      }
    }
  }
  return out;
}

#define COLTRAN_INSTANTIATE_UPSAMPLER(T)                                                                     \
  template class Upsampler<T>;                                                                               \
  template ChannelLogits<T> color_upsample(const Upsampler<T>&, std::span<const CoarseImage>,                \
                                           std::span<const GrayscaleImage>);                                 \
  template ChannelLogits<T> spatial_upsample(const Upsampler<T>&, std::span<const RgbImage>,                 \
                                             std::span<const GrayscaleImage>);                               \
  template Tensor<T> upsampler_nll(const ChannelLogits<T>&, std::span<const RgbImage>);                      \
  template std::vector<RgbImage> argmax_decode(const ChannelLogits<T>&);

COLTRAN_INSTANTIATE_UPSAMPLER(float)
COLTRAN_INSTANTIATE_UPSAMPLER(double)

}  // namespace coltran
