#include "coltran/core.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

namespace {

constexpr std::size_t kGrayLevels = 256;

}  // namespace

template <typename T>
Tensor<T> shift_down(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("shift_down expects [B, M, N, D], got " + shape_str(x.shape()));
  return shift(x, 1);
}

template <typename T>
Tensor<T> shift_right(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("shift_right expects [B, M, N, D], got " + shape_str(x.shape()));
  return shift(x, 2);
}

template <typename T>
ColTranCore<T>::ColTranCore(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer init(seed);
  const std::size_t d = config_.hidden;
  const std::size_t m = config_.core_height, n = config_.core_width;
  const std::size_t ffn = config_.ffn_width();
  const std::size_t positions = m * n;
  const bool final_norm = config_.block_final_norm;

  gray_embedding_ = params_.add("encoder.gray_embedding", init.normal<T>(Shape{kGrayLevels, d}, 1.0));
  if (config_.positional_embeddings) {
    enc_row_pos_ = params_.add("encoder.row_position", init.normal<T>(Shape{m, d}, 1.0));
    enc_col_pos_ = params_.add("encoder.column_position", init.normal<T>(Shape{n, d}, 1.0));
  }
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    encoder_.push_back(make_attention_block(params_, init, prefix + ".row", d, config_.heads, ffn, final_norm));
    encoder_.push_back(make_attention_block(params_, init, prefix + ".column", d, config_.heads, ffn, final_norm));
  }

  color_embedding_ = params_.add("decoder.color_embedding", init.normal<T>(Shape{config_.vocab, d}, 1.0));
  if (config_.positional_embeddings) {
    dec_row_pos_ = params_.add("decoder.row_position", init.normal<T>(Shape{m, d}, 1.0));
    dec_col_pos_ = params_.add("decoder.column_position", init.normal<T>(Shape{n, d}, 1.0));
  }
  const auto& flags = config_.ablation;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string prefix = "outer.block" + std::to_string(b);
    outer_.push_back(make_cond_block(params_, init, prefix + ".row", d, config_.heads, ffn, positions, flags,
                                     final_norm));
    outer_.push_back(make_cond_block(params_, init, prefix + ".column", d, config_.heads, ffn, positions, flags,
                                     final_norm));
  }
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    inner_.push_back(make_cond_block(params_, init, "inner.block" + std::to_string(b) + ".row", d, config_.heads,
                                     ffn, positions, flags, final_norm));
  }
  // Zero heads give exactly uniform predictions at initialization.
  head_w_ = params_.add("inner.head.w", Tensor<T>(Shape{d, config_.vocab}, T{0}));
  head_b_ = params_.add("inner.head.b", Tensor<T>(Shape{config_.vocab}, T{0}));
  parallel_w_ = params_.add("parallel.head.w", Tensor<T>(Shape{d, config_.vocab}, T{0}));
  parallel_b_ = params_.add("parallel.head.b", Tensor<T>(Shape{config_.vocab}, T{0}));
}

template <typename T>
void ColTranCore<T>::check_gray(std::span<const GrayscaleImage> gray) const {
  if (gray.empty()) throw ShapeError("empty grayscale batch");
  for (const auto& g : gray) {
    if (g.height != config_.core_height || g.width != config_.core_width) {
      throw ResolutionError("grayscale input is " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                            ", core expects " + std::to_string(config_.core_height) + "x" +
                            std::to_string(config_.core_width));
    }
  }
}

template <typename T>
void ColTranCore<T>::check_coarse(std::span<const CoarseImage> coarse, std::size_t batch) const {
  if (coarse.size() != batch) {
    throw ShapeError("coarse batch of " + std::to_string(coarse.size()) + " for " + std::to_string(batch) +
                     " grayscale images");
  }
  for (const auto& c : coarse) {
    if (c.height != config_.core_height || c.width != config_.core_width) {
      throw ResolutionError("coarse input is " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                            ", core expects " + std::to_string(config_.core_height) + "x" +
                            std::to_string(config_.core_width));
    }
  }
}

template <typename T>
Tensor<T> ColTranCore<T>::add_positions(const Tensor<T>& x, const Tensor<T>& rows, const Tensor<T>& cols) const {
  if (!config_.positional_embeddings) return x;
  const std::size_t d = config_.hidden;
  auto out = add(x, reshape(rows, Shape{1, config_.core_height, 1, d}));
  return add(out, reshape(cols, Shape{1, 1, config_.core_width, d}));
}

template <typename T>
Tensor<T> ColTranCore<T>::encode_grayscale(std::span<const GrayscaleImage> gray) const {
  check_gray(gray);
  std::vector<std::int32_t> idx;
  idx.reserve(gray.size() * config_.core_height * config_.core_width);
  for (const auto& g : gray) idx.insert(idx.end(), g.pixels.begin(), g.pixels.end());
  auto x = embedding(gray_embedding_, std::span<const std::int32_t>(idx),
                     Shape{gray.size(), config_.core_height, config_.core_width});
  x = add_positions(x, enc_row_pos_, enc_col_pos_);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    x = attention_block(x, encoder_[2 * b], Axis::row, MaskKind::none);
    x = attention_block(x, encoder_[2 * b + 1], Axis::column, MaskKind::none);
  }
  return x;
}

template <typename T>
Tensor<T> ColTranCore<T>::embed_coarse(std::span<const CoarseImage> coarse) const {
  check_coarse(coarse, coarse.size());
  if (coarse.empty()) throw ShapeError("empty coarse batch");
  std::vector<std::int32_t> idx;
  idx.reserve(coarse.size() * config_.core_height * config_.core_width);
  for (const auto& c : coarse) idx.insert(idx.end(), c.indices.begin(), c.indices.end());
  auto e = embedding(color_embedding_, std::span<const std::int32_t>(idx),
                     Shape{coarse.size(), config_.core_height, config_.core_width});
  return add_positions(e, dec_row_pos_, dec_col_pos_);
}

template <typename T>
Tensor<T> ColTranCore<T>::outer_decoder(const Tensor<T>& e, const Tensor<T>& c_g) const {
  auto x = add(e, c_g);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    x = cond_attention_block(x, c_g, c_g, outer_[2 * b], Axis::row, MaskKind::none);
    x = cond_attention_block(x, c_g, c_g, outer_[2 * b + 1], Axis::column, MaskKind::causal);
  }
  return shift_down(x);
}

template <typename T>
Tensor<T> ColTranCore<T>::inner_decoder(const Tensor<T>& o, const Tensor<T>& e, const Tensor<T>& c_g,
                                        const Tensor<T>* pool_source) const {
  const Tensor<T>& pool = pool_source ? *pool_source : c_g;
  auto context = add(o, c_g);
  auto z = add(context, shift_right(e));
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    z = cond_attention_block(z, context, pool, inner_[b], Axis::row, MaskKind::causal);
  }
  return add(matmul(z, head_w_), head_b_);
}

template <typename T>
Tensor<T> ColTranCore<T>::parallel_logits(const Tensor<T>& c_g) const {
  return add(matmul(c_g, parallel_w_), parallel_b_);
}

template <typename T>
CoreLogits<T> ColTranCore<T>::forward(std::span<const GrayscaleImage> gray,
                                      std::span<const CoarseImage> coarse) const {
  check_gray(gray);
  check_coarse(coarse, gray.size());
  auto c_g = encode_grayscale(gray);
  auto e = embed_coarse(coarse);
  auto o = outer_decoder(e, c_g);
  return {inner_decoder(o, e, c_g), parallel_logits(c_g)};
}

template <typename T>
CoreLosses<T> ColTranCore<T>::losses(std::span<const GrayscaleImage> gray,
                                     std::span<const CoarseImage> coarse) const {
  auto logits = forward(gray, coarse);
  std::vector<std::int32_t> targets;
  for (const auto& c : coarse) targets.insert(targets.end(), c.indices.begin(), c.indices.end());
  return {gather_nll(logits.autoregressive, std::span<const std::int32_t>(targets)),
          gather_nll(logits.parallel, std::span<const std::int32_t>(targets))};
}

template <typename T>
CoreNll ColTranCore<T>::nll(std::span<const GrayscaleImage> gray, std::span<const CoarseImage> coarse) const {
  NoGradGuard no_grad;
  auto l = losses(gray, coarse);
  return {static_cast<double>(l.autoregressive.item()), static_cast<double>(l.parallel.item())};
}

double uniform_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

std::size_t draw_categorical(std::span<const double> logits, double u, std::optional<std::size_t> top_k) {
  const std::size_t v = logits.size();
  if (v == 0) throw ShapeError("cannot draw from an empty distribution");
  if (top_k && (*top_k == 0 || *top_k > v)) {
    throw ConfigError("top_k must lie in [1, " + std::to_string(v) + "], got " + std::to_string(*top_k));
  }
  std::vector<std::size_t> kept(v);
  std::iota(kept.begin(), kept.end(), std::size_t{0});
  if (top_k && *top_k < v) {
    std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    kept.resize(*top_k);
    std::sort(kept.begin(), kept.end());
  }
  double mx = -INFINITY;
  for (auto i : kept) mx = std::max(mx, logits[i]);
  std::vector<double> weight(kept.size());
  double total = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    weight[i] = std::exp(logits[kept[i]] - mx);
    total += weight[i];
  }
  double cumulative = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    cumulative += weight[i] / total;
    if (u < cumulative) return kept[i];
  }
  return kept.back();
}

template <typename T>
std::vector<CoarseImage> sample_core(const ColTranCore<T>& model, std::span<const GrayscaleImage> gray,
                                     std::uint64_t seed, std::optional<std::size_t> top_k) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t batch = gray.size();
  const std::size_t m = cfg.core_height, n = cfg.core_width, vocab = cfg.vocab;
  if (top_k && (*top_k == 0 || *top_k > vocab)) {
    throw ConfigError("top_k must lie in [1, " + std::to_string(vocab) + "], got " + std::to_string(*top_k));
  }
  std::vector<std::mt19937_64> rngs;
  for (std::size_t b = 0; b < batch; ++b) rngs.emplace_back(seed + b);
  std::vector<CoarseImage> canvas(batch, CoarseImage(m, n));

  const auto c_g = model.encode_grayscale(gray);
  std::vector<double> row_logits(vocab);
  for (std::size_t i = 0; i < m; ++i) {
    const auto o_row = slice(model.outer_decoder(model.embed_coarse(canvas), c_g), 1, i, 1);
    const auto c_row = slice(c_g, 1, i, 1);
    for (std::size_t j = 0; j < n; ++j) {
      const auto e_row = slice(model.embed_coarse(canvas), 1, i, 1);
      const auto logits = model.inner_decoder(o_row, e_row, c_row, &c_g);  // [B, 1, N, V]
      const auto data = logits.data();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = data.data() + (b * n + j) * vocab;
        std::copy(src, src + vocab, row_logits.begin());
        const double u = uniform_unit(rngs[b]());
        canvas[b].at(i, j) = static_cast<std::uint16_t>(draw_categorical(row_logits, u, top_k));
      }
    }
  }
  return canvas;
}

template class ColTranCore<float>;
template class ColTranCore<double>;
template Tensor<float> shift_down(const Tensor<float>&);
template Tensor<double> shift_down(const Tensor<double>&);
template Tensor<float> shift_right(const Tensor<float>&);
template Tensor<double> shift_right(const Tensor<double>&);
template std::vector<CoarseImage> sample_core(const ColTranCore<float>&, std::span<const GrayscaleImage>,
                                              std::uint64_t, std::optional<std::size_t>);
template std::vector<CoarseImage> sample_core(const ColTranCore<double>&, std::span<const GrayscaleImage>,
                                              std::uint64_t, std::optional<std::size_t>);

}  // namespace coltran
