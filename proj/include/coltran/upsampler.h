#pragma once

// Fully parallel per-channel upsamplers. The color upsampler maps coarse
// 3-bit levels to 8-bit intensities at M x N; the spatial upsampler maps an
// M x N RGB image to H x W. Each channel is predicted from its own
// embedding plus the grayscale image; channels never see each other.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "coltran/attention.h"
#include "coltran/config.h"
#include "coltran/data.h"
#include "coltran/params.h"
#include "coltran/tensor.h"

namespace coltran {

enum class UpsamplerKind { color, spatial };

inline constexpr std::size_t kIntensityLevels = 256;

/// Logits [B, Y, X, 256] for the R, G and B channels.
template <typename T>
using ChannelLogits = std::array<Tensor<T>, 3>;

template <typename T>
class Upsampler {
 public:
  Upsampler(UpsamplerKind kind, const ModelConfig& config, std::uint64_t seed);

  UpsamplerKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t height() const;
  std::size_t width() const;

  /// One channel from its input levels and grayscale values, each laid out
  /// [B, height, width]. Levels are < 8 (color) or < 256 (spatial).
  Tensor<T> channel_logits(std::size_t channel, std::span<const std::int32_t> levels,
                           std::span<const std::int32_t> gray, std::size_t batch) const;

 private:
  UpsamplerKind kind_;
  ModelConfig config_;
  ParamStore<T> params_;
  std::array<Tensor<T>, 3> channel_embedding_;
  Tensor<T> gray_embedding_, row_pos_, col_pos_;
  // One trunk and head when shared, three when per_channel_trunk is set.
  std::vector<std::vector<AttentionBlockParams<T>>> trunks_;
  std::vector<Tensor<T>> head_w_, head_b_;
};

/// Coarse M x N colors plus M x N grayscale -> per-channel intensity logits.
template <typename T>
ChannelLogits<T> color_upsample(const Upsampler<T>& model, std::span<const CoarseImage> coarse,
                                std::span<const GrayscaleImage> gray);

/// M x N RGB plus H x W grayscale -> per-channel intensity logits at H x W.
/// The RGB input is replicated to H x W before embedding.
template <typename T>
ChannelLogits<T> spatial_upsample(const Upsampler<T>& model, std::span<const RgbImage> rgb_lo,
                                  std::span<const GrayscaleImage> gray_hi);

/// Mean over channels of the per-channel mean NLL against `target`.
template <typename T>
Tensor<T> upsampler_nll(const ChannelLogits<T>& logits, std::span<const RgbImage> target);

/// Per pixel and channel argmax; ties go to the lowest intensity.
template <typename T>
std::vector<RgbImage> argmax_decode(const ChannelLogits<T>& logits);

extern template class Upsampler<float>;
extern template class Upsampler<double>;

}  // namespace coltran
