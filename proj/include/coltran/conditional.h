#pragma once

// Conditional transformer layers: self-attention, MLP and layer norm whose
// activations are scaled and shifted by functions of a context grid c.
//
// Scale projections start with zero weights and unit bias, shift projections
// with zero weights and zero bias, so at initialization every conditional
// layer computes exactly what its unconditional counterpart computes.

#include <cstddef>
#include <optional>
#include <string>
#include <variant>

#include "coltran/attention.h"
#include "coltran/config.h"
#include "coltran/params.h"
#include "coltran/tensor.h"

namespace coltran {

/// z_c = (c W_s + b_s) * z + (c W_b + b_b); either term may be absent.
template <typename T>
struct Modulation {
  std::optional<Tensor<T>> scale_w, scale_b;  // [D, D], [D]
  std::optional<Tensor<T>> shift_w, shift_b;
};

template <typename T>
struct CondAttentionParams {
  AttentionParams<T> base;
  std::optional<Modulation<T>> q, k, v;
};

template <typename T>
struct CondMlpParams {
  MlpParams<T> base;
  std::optional<Modulation<T>> out;
};

/// beta_c = (u . c_hat) W_beta + b_beta, gamma_c likewise; u has one weight
/// per context position and starts as a mean pool.
template <typename T>
struct CondNormParams {
  Tensor<T> pool;  // [positions]; a plain constant under PoolMode::fixed_mean
  Tensor<T> beta_w, beta_b, gamma_w, gamma_b;
};

template <typename T>
using NormParams = std::variant<LayerNormParams<T>, CondNormParams<T>>;

template <typename T>
struct CondBlockParams {
  NormParams<T> norm1;
  CondAttentionParams<T> attention;
  NormParams<T> norm2;
  CondMlpParams<T> mlp;
  std::optional<LayerNormParams<T>> final_norm;
};

template <typename T>
Modulation<T> make_modulation(ParamStore<T>& store, const std::string& prefix, std::size_t d, CondMode mode);
template <typename T>
CondNormParams<T> make_cond_norm(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                 std::size_t positions, PoolMode pool);
/// Only the sub-layers enabled by `flags` get conditional parameters.
template <typename T>
CondBlockParams<T> make_cond_block(ParamStore<T>& store, Initializer& init, const std::string& prefix,
                                   std::size_t d, std::size_t heads, std::size_t ffn, std::size_t positions,
                                   const AblationFlags& flags, bool final_norm);

template <typename T>
Tensor<T> modulate(const Tensor<T>& z, const Tensor<T>& c, const Modulation<T>& m);

/// Softmax(q_c k_c^T / sqrt(D_h)) v_c followed by the output projection.
/// `x` must already be normalized; `c` is spatially aligned with `x`.
template <typename T>
Tensor<T> cond_self_attention(const Tensor<T>& x, const Tensor<T>& c, const CondAttentionParams<T>& p,
                              Axis axis, MaskKind mask);

template <typename T>
Tensor<T> cond_mlp(const Tensor<T>& x, const Tensor<T>& c, const CondMlpParams<T>& p);

/// Pooled vector u . c_hat per batch element, [B, 1, D]. `c` must cover
/// exactly pool.numel() positions.
template <typename T>
Tensor<T> pool_context(const Tensor<T>& c, const Tensor<T>& pool);

/// beta_c * Norm(x) + gamma_c with beta_c, gamma_c from the pooled context.
/// `x` may cover any subset of positions; `c` is the full context grid.
template <typename T>
Tensor<T> cond_layer_norm(const Tensor<T>& x, const Tensor<T>& c, const CondNormParams<T>& p);

/// Pre-norm residual block built from conditional sub-layers. `c` modulates
/// pointwise and must align with `x`; `pool_source` feeds the conditional
/// norms and always covers the full configured grid.
template <typename T>
Tensor<T> cond_attention_block(const Tensor<T>& x, const Tensor<T>& c, const Tensor<T>& pool_source,
                               const CondBlockParams<T>& p, Axis axis, MaskKind mask);

}  // namespace coltran
