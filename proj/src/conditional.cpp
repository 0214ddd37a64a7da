#include "coltran/conditional.h"

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

template <typename T>
Modulation<T> make_modulation(ParamStore<T>& store, const std::string& prefix, std::size_t d, CondMode mode) {
  Modulation<T> m;
  if (mode != CondMode::shift_only) {
    m.scale_w = store.add(prefix + ".scale_w", Tensor<T>(Shape{d, d}, T{0}));
    m.scale_b = store.add(prefix + ".scale_b", Tensor<T>(Shape{d}, T{1}));
  }
  if (mode != CondMode::scale_only) {
    m.shift_w = store.add(prefix + ".shift_w", Tensor<T>(Shape{d, d}, T{0}));
    m.shift_b = store.add(prefix + ".shift_b", Tensor<T>(Shape{d}, T{0}));
  }
  return m;
}

template <typename T>
CondNormParams<T> make_cond_norm(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                 std::size_t positions, PoolMode pool) {
  CondNormParams<T> p;
  Tensor<T> u(Shape{positions}, T{1} / static_cast<T>(positions));
  p.pool = pool == PoolMode::learnable ? store.add(prefix + ".pool", u) : u;
  p.beta_w = store.add(prefix + ".beta_w", Tensor<T>(Shape{d, d}, T{0}));
  p.beta_b = store.add(prefix + ".beta_b", Tensor<T>(Shape{d}, T{1}));
  p.gamma_w = store.add(prefix + ".gamma_w", Tensor<T>(Shape{d, d}, T{0}));
  p.gamma_b = store.add(prefix + ".gamma_b", Tensor<T>(Shape{d}, T{0}));
  return p;
}

template <typename T>
CondBlockParams<T> make_cond_block(ParamStore<T>& store, Initializer& init, const std::string& prefix,
                                   std::size_t d, std::size_t heads, std::size_t ffn, std::size_t positions,
                                   const AblationFlags& flags, bool final_norm) {
  CondBlockParams<T> p;
  auto norm = [&](const std::string& name) -> NormParams<T> {
    if (flags.cond_norm) return make_cond_norm(store, prefix + "." + name, d, positions, flags.pool);
    return make_layer_norm(store, prefix + "." + name, d);
  };
  p.norm1 = norm("norm1");
  p.attention.base = make_attention(store, init, prefix + ".attention", d, heads);
  if (flags.cond_attention) {
    if (flags.attention_targets == AttentionTargets::qkv) {
      p.attention.q = make_modulation(store, prefix + ".attention.cond_q", d, flags.mode);
      p.attention.k = make_modulation(store, prefix + ".attention.cond_k", d, flags.mode);
    }
    p.attention.v = make_modulation(store, prefix + ".attention.cond_v", d, flags.mode);
  }
  p.norm2 = norm("norm2");
  p.mlp.base = make_mlp(store, init, prefix + ".mlp", d, ffn);
  if (flags.cond_mlp) p.mlp.out = make_modulation(store, prefix + ".mlp.cond", d, flags.mode);
  if (final_norm) p.final_norm = make_layer_norm(store, prefix + ".final_norm", d);
  return p;
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& z, const Tensor<T>& c, const Modulation<T>& m) {
  if (c.shape() != z.shape()) {
    throw ShapeError("context " + shape_str(c.shape()) + " is not aligned with " + shape_str(z.shape()));
  }
  Tensor<T> out = z;
  if (m.scale_w) out = mul(out, add(matmul(c, *m.scale_w), *m.scale_b));
  if (m.shift_w) out = add(out, add(matmul(c, *m.shift_w), *m.shift_b));
  return out;
}

template <typename T>
Tensor<T> cond_self_attention(const Tensor<T>& x, const Tensor<T>& c, const CondAttentionParams<T>& p,
                              Axis axis, MaskKind mask) {
  if (x.rank() != 4) throw ShapeError("self-attention expects [B, H, W, D], got " + shape_str(x.shape()));
  if (c.shape() != x.shape()) {
    throw ShapeError("context " + shape_str(c.shape()) + " is not aligned with " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(3);
  auto qkv = matmul(x, p.base.qkv);
  auto q = slice(qkv, 3, 0, d);
  auto k = slice(qkv, 3, d, d);
  auto v = slice(qkv, 3, 2 * d, d);
  if (p.q) q = modulate(q, c, *p.q);
  if (p.k) k = modulate(k, c, *p.k);
  if (p.v) v = modulate(v, c, *p.v);
  return matmul(attend(q, k, v, p.base.heads, axis, mask), p.base.out);
}

template <typename T>
Tensor<T> cond_mlp(const Tensor<T>& x, const Tensor<T>& c, const CondMlpParams<T>& p) {
  auto h = mlp(x, p.base);
  return p.out ? modulate(h, c, *p.out) : h;
}

template <typename T>
Tensor<T> pool_context(const Tensor<T>& c, const Tensor<T>& pool) {
  const std::size_t batch = c.dim(0);
  const std::size_t d = c.dim(-1);
  const std::size_t positions = c.numel() / (batch * d);
  if (positions != pool.numel()) {
    throw ResolutionError("conditional norm pools over " + std::to_string(pool.numel()) +
                          " positions but the context " + shape_str(c.shape()) + " has " +
                          std::to_string(positions));
  }
  auto flat = reshape(c, Shape{batch, positions, d});
  return matmul(reshape(pool, Shape{1, positions}), flat);
}

template <typename T>
Tensor<T> cond_layer_norm(const Tensor<T>& x, const Tensor<T>& c, const CondNormParams<T>& p) {
  const std::size_t batch = c.dim(0);
  const std::size_t d = c.dim(-1);
  if (x.dim(0) != batch || x.dim(-1) != d) {
    throw ShapeError("conditional norm input " + shape_str(x.shape()) + " vs context " + shape_str(c.shape()));
  }
  auto pooled = pool_context(c, p.pool);
  Shape bshape(x.rank(), 1);
  bshape.front() = batch;
  bshape.back() = d;
  auto beta = reshape(add(matmul(pooled, p.beta_w), p.beta_b), bshape);
  auto gamma = reshape(add(matmul(pooled, p.gamma_w), p.gamma_b), bshape);
  return add(mul(normalize(x, static_cast<T>(kNormEpsilon)), beta), gamma);
}

namespace {

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const Tensor<T>& pool_source, const NormParams<T>& p) {
  if (const auto* plain = std::get_if<LayerNormParams<T>>(&p)) return apply_layer_norm(x, *plain);
  return cond_layer_norm(x, pool_source, std::get<CondNormParams<T>>(p));
}

}  // namespace

template <typename T>
Tensor<T> cond_attention_block(const Tensor<T>& x, const Tensor<T>& c, const Tensor<T>& pool_source,
                               const CondBlockParams<T>& p, Axis axis, MaskKind mask) {
  auto x1 = add(cond_self_attention(apply_norm(x, pool_source, p.norm1), c, p.attention, axis, mask), x);
  auto y = add(cond_mlp(apply_norm(x1, pool_source, p.norm2), c, p.mlp), x1);
  if (p.final_norm) y = apply_layer_norm(y, *p.final_norm);
  return y;
}

#define COLTRAN_INSTANTIATE_CONDITIONAL(T)                                                                 \
  template Modulation<T> make_modulation(ParamStore<T>&, const std::string&, std::size_t, CondMode);       \
  template CondNormParams<T> make_cond_norm(ParamStore<T>&, const std::string&, std::size_t, std::size_t,  \
                                            PoolMode);                                                     \
  template CondBlockParams<T> make_cond_block(ParamStore<T>&, Initializer&, const std::string&,            \
                                              std::size_t, std::size_t, std::size_t, std::size_t,          \
                                              const AblationFlags&, bool);                                 \
  template Tensor<T> modulate(const Tensor<T>&, const Tensor<T>&, const Modulation<T>&);                   \
  template Tensor<T> cond_self_attention(const Tensor<T>&, const Tensor<T>&, const CondAttentionParams<T>&, \
                                         Axis, MaskKind);                                                  \
  template Tensor<T> cond_mlp(const Tensor<T>&, const Tensor<T>&, const CondMlpParams<T>&);                \
  template Tensor<T> pool_context(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> cond_layer_norm(const Tensor<T>&, const Tensor<T>&, const CondNormParams<T>&);        \
  template Tensor<T> cond_attention_block(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                          const CondBlockParams<T>&, Axis, MaskKind);

COLTRAN_INSTANTIATE_CONDITIONAL(float)
COLTRAN_INSTANTIATE_CONDITIONAL(double)

}  // namespace coltran
