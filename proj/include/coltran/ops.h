#pragma once

// Differentiable tensor operations. Every op records a backward closure when
// grad mode is on and any input requires grad.

#include <cstddef>
#include <cstdint>
#include <span>

#include "coltran/tensor.h"

namespace coltran {

// Elementwise with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& a);

/// [..., m, k] x [..., k, n] -> [..., m, n]; batch extents broadcast.
/// Each output row depends only on the matching row of `a`, accumulated in
/// a fixed order, so results are bit-identical across batch/row slicing.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax along `axis` (negative counts from the end), max-subtracted.
/// NaN inputs propagate.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis = -1);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);

/// (x - mean) / sqrt(var + eps) over the last axis; no affine part.
template <typename T> Tensor<T> normalize(const Tensor<T>& x, T eps);
/// beta * normalize(x) + gamma, beta and gamma of extent [D].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, T eps);

/// Rows of `table` [V, D] selected by `indices`, result [index_shape..., D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> indices,
                    const Shape& index_shape);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Mean negative log-likelihood (nats) of `targets` under softmax(logits)
/// taken over the last axis. One target per logit row.
template <typename T>
Tensor<T> gather_nll(const Tensor<T>& logits, std::span<const std::int32_t> targets);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b);
/// Moves every slice along `axis` one step forward; slice 0 becomes zeros.
template <typename T> Tensor<T> shift(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Multi-head dot-product attention along axis 2 of [B, L, S, heads*Dh]
/// tensors, independently for every (b, l). Scores are scaled by 1/sqrt(Dh).
/// With `causal`, position s attends to positions <= s only.
template <typename T>
Tensor<T> axial_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t heads, bool causal);

/// Attention probabilities [B, L, heads, S, S] for inspection; no graph.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads,
                            bool causal);

struct AttentionStats {
  std::size_t calls = 0;
  std::size_t last_score_entries = 0;
  std::size_t max_score_entries = 0;
};

/// Per-thread counters of score-matrix sizes materialized by axial_attention.
AttentionStats attention_stats();
void reset_attention_stats();

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace coltran
