#include "coltran/attention.h"

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

template <typename T>
LayerNormParams<T> make_layer_norm(ParamStore<T>& store, const std::string& prefix, std::size_t d) {
  return {store.add(prefix + ".beta", Tensor<T>(Shape{d}, T{1})),
          store.add(prefix + ".gamma", Tensor<T>(Shape{d}, T{0}))};
}

template <typename T>
AttentionParams<T> make_attention(ParamStore<T>& store, Initializer& init, const std::string& prefix,
                                  std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionParams<T> p;
  p.heads = heads;
  p.qkv = store.add(prefix + ".qkv", init.normal<T>(Shape{d, 3 * d}, 1.0 / std::sqrt(double(d))));
  p.out = store.add(prefix + ".out", init.dense<T>(d, d));
  return p;
}

template <typename T>
MlpParams<T> make_mlp(ParamStore<T>& store, Initializer& init, const std::string& prefix, std::size_t d,
                      std::size_t ffn) {
  MlpParams<T> p;
  p.w1 = store.add(prefix + ".w1", init.dense<T>(d, ffn));
  p.b1 = store.add(prefix + ".b1", Tensor<T>(Shape{ffn}, T{0}));
  p.w2 = store.add(prefix + ".w2", init.dense<T>(ffn, d));
  p.b2 = store.add(prefix + ".b2", Tensor<T>(Shape{d}, T{0}));
  return p;
}

template <typename T>
AttentionBlockParams<T> make_attention_block(ParamStore<T>& store, Initializer& init,
                                             const std::string& prefix, std::size_t d, std::size_t heads,
                                             std::size_t ffn, bool final_norm) {
  AttentionBlockParams<T> p;
  p.norm1 = make_layer_norm(store, prefix + ".norm1", d);
  p.attention = make_attention(store, init, prefix + ".attention", d, heads);
  p.norm2 = make_layer_norm(store, prefix + ".norm2", d);
  p.mlp = make_mlp(store, init, prefix + ".mlp", d, ffn);
  if (final_norm) p.final_norm = make_layer_norm(store, prefix + ".final_norm", d);
  return p;
}

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.beta, p.gamma, static_cast<T>(kNormEpsilon));
}

template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads, Axis axis,
                 MaskKind mask) {
  const bool causal = mask == MaskKind::causal;
  if (axis == Axis::row) return axial_attention(q, k, v, heads, causal);
  auto out = axial_attention(transpose(q, 1, 2), transpose(k, 1, 2), transpose(v, 1, 2), heads, causal);
  return transpose(out, 1, 2);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& p, Axis axis, MaskKind mask) {
  if (x.rank() != 4) throw ShapeError("self-attention expects [B, H, W, D], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(3);
  auto qkv = matmul(x, p.qkv);
  auto q = slice(qkv, 3, 0, d);
  auto k = slice(qkv, 3, d, d);
  auto v = slice(qkv, 3, 2 * d, d);
  return matmul(attend(q, k, v, p.heads, axis, mask), p.out);
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const MlpParams<T>& p) {
  auto h = relu(add(matmul(x, p.w1), p.b1));
  return add(matmul(h, p.w2), p.b2);
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const AttentionBlockParams<T>& p, Axis axis, MaskKind mask) {
  auto x1 = add(self_attention(apply_layer_norm(x, p.norm1), p.attention, axis, mask), x);
  auto y = add(mlp(apply_layer_norm(x1, p.norm2), p.mlp), x1);
  if (p.final_norm) y = apply_layer_norm(y, *p.final_norm);
  return y;
}

#define COLTRAN_INSTANTIATE_ATTENTION(T)                                                                   \
  template LayerNormParams<T> make_layer_norm(ParamStore<T>&, const std::string&, std::size_t);            \
  template AttentionParams<T> make_attention(ParamStore<T>&, Initializer&, const std::string&, std::size_t, \
                                             std::size_t);                                                 \
  template MlpParams<T> make_mlp(ParamStore<T>&, Initializer&, const std::string&, std::size_t, std::size_t); \
  template AttentionBlockParams<T> make_attention_block(ParamStore<T>&, Initializer&, const std::string&,  \
                                                        std::size_t, std::size_t, std::size_t, bool);       \
  template Tensor<T> apply_layer_norm(const Tensor<T>&, const LayerNormParams<T>&);                        \
  template Tensor<T> attend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, Axis,       \
                            MaskKind);                                                                     \
  template Tensor<T> self_attention(const Tensor<T>&, const AttentionParams<T>&, Axis, MaskKind);          \
  template Tensor<T> mlp(const Tensor<T>&, const MlpParams<T>&);                                           \
  template Tensor<T> attention_block(const Tensor<T>&, const AttentionBlockParams<T>&, Axis, MaskKind);

COLTRAN_INSTANTIATE_ATTENTION(float)
COLTRAN_INSTANTIATE_ATTENTION(double)

}  // namespace coltran
