#pragma once

// Row-wise and column-wise multi-head self-attention blocks over [B, H, W, D]
// activation grids.

#include <cstddef>
#include <optional>
#include <string>

#include "coltran/params.h"
#include "coltran/tensor.h"

namespace coltran {

enum class Axis { row, column };
enum class MaskKind { none, causal };

inline constexpr double kNormEpsilon = 1e-6;

/// beta scales the normalized input, gamma shifts it.
template <typename T>
struct LayerNormParams {
  Tensor<T> beta;
  Tensor<T> gamma;
};

template <typename T>
struct AttentionParams {
  std::size_t heads = 1;
  Tensor<T> qkv;  // [D, 3D], columns laid out as [q | k | v], heads contiguous within each
  Tensor<T> out;  // [D, D]
};

template <typename T>
struct MlpParams {
  Tensor<T> w1, b1, w2, b2;  // [D, F], [F], [F, D], [D]
};

template <typename T>
struct AttentionBlockParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> attention;
  LayerNormParams<T> norm2;
  MlpParams<T> mlp;
  std::optional<LayerNormParams<T>> final_norm;
};

template <typename T>
LayerNormParams<T> make_layer_norm(ParamStore<T>& store, const std::string& prefix, std::size_t d);
template <typename T>
AttentionParams<T> make_attention(ParamStore<T>& store, Initializer& init, const std::string& prefix,
                                  std::size_t d, std::size_t heads);
template <typename T>
MlpParams<T> make_mlp(ParamStore<T>& store, Initializer& init, const std::string& prefix, std::size_t d,
                      std::size_t ffn);
template <typename T>
AttentionBlockParams<T> make_attention_block(ParamStore<T>& store, Initializer& init,
                                             const std::string& prefix, std::size_t d, std::size_t heads,
                                             std::size_t ffn, bool final_norm);

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p);

/// Attention core on already projected q, k, v along `axis`, without the
/// output projection. Operands are [B, H, W, D].
template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads, Axis axis,
                 MaskKind mask);

/// MSA(x) = [SA_1(x), ..., SA_k(x)] U_out with [q, k, v] = x U_qkv. No norm.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& p, Axis axis, MaskKind mask);
template <typename T>
Tensor<T> row_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, MaskKind mask) {
  return self_attention(x, p, Axis::row, mask);
}
template <typename T>
Tensor<T> column_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, MaskKind mask) {
  return self_attention(x, p, Axis::column, mask);
}

/// ReLU(x U_1 + b_1) U_2 + b_2
template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const MlpParams<T>& p);

/// Pre-norm residual block: x' = MSA(LN(x)) + x, y = MLP(LN(x')) + x'.
template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const AttentionBlockParams<T>& p, Axis axis, MaskKind mask);

}  // namespace coltran
