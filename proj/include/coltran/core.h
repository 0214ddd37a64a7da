#pragma once

// The autoregressive coarse colorizer: grayscale encoder, conditional outer
// and inner decoders over one coarse-color channel, an auxiliary parallel
// head on the encoder output, and a semi-parallel sampler.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "coltran/attention.h"
#include "coltran/conditional.h"
#include "coltran/config.h"
#include "coltran/data.h"
#include "coltran/params.h"
#include "coltran/tensor.h"

namespace coltran {

template <typename T>
struct CoreLogits {
  Tensor<T> autoregressive;  // [B, M, N, vocab]
  Tensor<T> parallel;        // [B, M, N, vocab]
};

template <typename T>
struct CoreLosses {
  Tensor<T> autoregressive;  // mean NLL in nats per pixel
  Tensor<T> parallel;
};

struct CoreNll {
  double autoregressive = 0.0;
  double parallel = 0.0;
};

/// Row-shift of a [B, M, N, D] grid: row i takes row i-1, row 0 is zero.
template <typename T>
Tensor<T> shift_down(const Tensor<T>& x);
/// Column analogue of shift_down.
template <typename T>
Tensor<T> shift_right(const Tensor<T>& x);

template <typename T>
class ColTranCore {
 public:
  ColTranCore(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// c_g: [B, M, N, D] from low-resolution grayscale images.
  Tensor<T> encode_grayscale(std::span<const GrayscaleImage> gray) const;
  /// e: coarse color embeddings plus positions, [B, M, N, D].
  Tensor<T> embed_coarse(std::span<const CoarseImage> coarse) const;

  /// o = ShiftDown(s_o); s_o from [row -> causal column] conditional blocks
  /// over e + c_g. o at row i only sees coarse rows < i.
  Tensor<T> outer_decoder(const Tensor<T>& e, const Tensor<T>& c_g) const;

  /// Logits over the vocabulary. `o`, `e` and `c_g` may be any aligned run
  /// of full rows (the sampler passes one row); `pool_source` is the full
  /// grayscale context used by conditional norms, defaulting to `c_g`.
  Tensor<T> inner_decoder(const Tensor<T>& o, const Tensor<T>& e, const Tensor<T>& c_g,
                          const Tensor<T>* pool_source = nullptr) const;

  /// Per-pixel logits from the encoder output alone.
  Tensor<T> parallel_logits(const Tensor<T>& c_g) const;

  /// Teacher-forced forward pass for both heads.
  CoreLogits<T> forward(std::span<const GrayscaleImage> gray, std::span<const CoarseImage> coarse) const;
  CoreLosses<T> losses(std::span<const GrayscaleImage> gray, std::span<const CoarseImage> coarse) const;
  CoreNll nll(std::span<const GrayscaleImage> gray, std::span<const CoarseImage> coarse) const;

 private:
  void check_gray(std::span<const GrayscaleImage> gray) const;
  void check_coarse(std::span<const CoarseImage> coarse, std::size_t batch) const;
  Tensor<T> add_positions(const Tensor<T>& x, const Tensor<T>& rows, const Tensor<T>& cols) const;

  ModelConfig config_;
  ParamStore<T> params_;

  Tensor<T> gray_embedding_, enc_row_pos_, enc_col_pos_;
  std::vector<AttentionBlockParams<T>> encoder_;  // row, column, row, column, ...
  Tensor<T> color_embedding_, dec_row_pos_, dec_col_pos_;
  std::vector<CondBlockParams<T>> outer_;  // row, causal column, ...
  std::vector<CondBlockParams<T>> inner_;  // causal rows
  Tensor<T> head_w_, head_b_;
  Tensor<T> parallel_w_, parallel_b_;
};

/// Inverse-CDF draw from softmax(logits), optionally restricted to the top_k
/// most probable symbols (ties favour the lower index) and renormalized.
/// `u` is uniform in [0, 1).
std::size_t draw_categorical(std::span<const double> logits, double u, std::optional<std::size_t> top_k);

/// Uniform variate in [0, 1) from 53 random bits.
double uniform_unit(std::uint64_t bits);

/// Semi-parallel sampling: encoder once, outer decoder once per row, inner
/// decoder once per pixel on that row only. Batch element b uses its own
/// generator seeded with seed + b and one variate per pixel in raster order.
template <typename T>
std::vector<CoarseImage> sample_core(const ColTranCore<T>& model, std::span<const GrayscaleImage> gray,
                                     std::uint64_t seed, std::optional<std::size_t> top_k = std::nullopt);

extern template class ColTranCore<float>;
extern template class ColTranCore<double>;

}  // namespace coltran
