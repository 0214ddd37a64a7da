#include "coltran/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "coltran/errors.h"

namespace coltran {

namespace {

using detail::Node;

thread_local AttentionStats g_attention_stats;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const auto a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Extents before, along and after an axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  const auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  p.out.resize(r);
  p.stride_a.resize(r);
  p.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1];
  const std::size_t sa = p.stride_a[r - 1], sb = p.stride_b[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t oo = 0; oo < total; oo += inner) {
    for (std::size_t i = 0; i < inner; ++i) f(oo + i, ao + i * sa, bo + i * sb);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ao += p.stride_a[d];
      bo += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ao -= p.stride_a[d] * p.out[d];
      bo -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<T> out(shape_numel(plan.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] + pb[j]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] - pb[j]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] * pb[j]; });
      break;
  }
  Shape shape = plan.out;
  return make_result<T>(std::move(shape), std::move(out), {a, b}, [plan, kind](Node<T>& self) {
    const T* g = self.grad.data();
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    T* ga = wants(self, 0) ? na.grad_buffer().data() : nullptr;
    T* gb = wants(self, 1) ? nb.grad_buffer().data() : nullptr;
    const T* da = na.data.data();
    const T* db = nb.data.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[i] += g[o];
          if (gb) gb[j] += g[o];
          break;
        case BinaryKind::sub:
          if (ga) ga[i] += g[o];
          if (gb) gb[j] -= g[o];
          break;
        case BinaryKind::mul:
          if (ga) ga[i] += g[o] * db[j];
          if (gb) gb[j] += g[o] * da[i];
          break;
      }
    });
  });
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row i of the output only ever reads row i of the left operand
// and accumulates over the inner extent in ascending order.

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename T>
void transpose_2d(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

struct BatchPairs {
  Shape batch;
  std::vector<std::size_t> a_index, b_index;  // batch slot indices, not element offsets
};

BatchPairs pair_batches(const Shape& a_batch, const Shape& b_batch) {
  BatchPairs bp;
  if (a_batch.empty() && b_batch.empty()) {
    bp.a_index = {0};
    bp.b_index = {0};
    return bp;
  }
  Shape a1 = a_batch.empty() ? Shape{1} : a_batch;
  Shape b1 = b_batch.empty() ? Shape{1} : b_batch;
  auto plan = plan_broadcast(a1, b1);
  bp.batch = plan.out;
  for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t j) {
    bp.a_index.push_back(i);
    bp.b_index.push_back(j);
  });
  return bp;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > T{0} ? v : T{0};
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T{0}) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back(), n = sb.back();
  Shape a_batch(sa.begin(), sa.end() - 2), b_batch(sb.begin(), sb.end() - 2);
  BatchPairs pairs;
  Shape out_shape;
  if (b_batch.empty()) {
    // A shared right operand: fold every leading extent of `a` into rows.
    m = a.numel() / k;
    pairs.a_index = {0};
    pairs.b_index = {0};
    out_shape.assign(sa.begin(), sa.end() - 1);
  } else {
    try {
      pairs = pair_batches(a_batch, b_batch);
    } catch (const ShapeError&) {
      throw ShapeError("matmul batch mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    }
    out_shape = pairs.batch;
    out_shape.push_back(m);
  }
  out_shape.push_back(n);
  const std::size_t nb = pairs.a_index.size();
  std::vector<T> out(nb * m * n, T{0});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t t = 0; t < nb; ++t) {
    gemm_acc(pa + pairs.a_index[t] * m * k, pb + pairs.b_index[t] * k * n, out.data() + t * m * n, m, k, n);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b},
                        [pairs, m, k, n](Node<T>& self) {
    const std::size_t nb = pairs.a_index.size();
    const T* g = self.grad.data();
    auto& na = *self.parents[0];
    auto& nbn = *self.parents[1];
    if (wants(self, 0)) {
      T* ga = na.grad_buffer().data();
      std::vector<T> bt(k * n);
      std::size_t cached = static_cast<std::size_t>(-1);
      for (std::size_t t = 0; t < nb; ++t) {
        if (pairs.b_index[t] != cached) {
          transpose_2d(nbn.data.data() + pairs.b_index[t] * k * n, bt.data(), k, n);
          cached = pairs.b_index[t];
        }
        gemm_acc(g + t * m * n, bt.data(), ga + pairs.a_index[t] * m * k, m, n, k);
      }
    }
    if (wants(self, 1)) {
      T* gb = nbn.grad_buffer().data();
      for (std::size_t t = 0; t < nb; ++t) {
        gemm_tn_acc(na.data.data() + pairs.a_index[t] * m * k, g + t * m * n,
                    gb + pairs.b_index[t] * k * n, m, k, n);
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < sp.len; ++t) mx = std::max(mx, px[base + t * sp.inner]);
      T total{0};
      for (std::size_t t = 0; t < sp.len; ++t) {
        const T e = std::exp(px[base + t * sp.inner] - mx);
        out[base + t * sp.inner] = e;
        total += e;
      }
      for (std::size_t t = 0; t < sp.len; ++t) out[base + t * sp.inner] /= total;
      if (std::isnan(mx)) {
        for (std::size_t t = 0; t < sp.len; ++t) out[base + t * sp.inner] = mx;
      }
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [sp](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        T dot{0};
        for (std::size_t t = 0; t < sp.len; ++t) dot += g[base + t * sp.inner] * y[base + t * sp.inner];
        for (std::size_t t = 0; t < sp.len; ++t) {
          const std::size_t j = base + t * sp.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t len = x.dim(-1);
  const std::size_t rows = x.numel() / len;
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * len;
    const T mx = *std::max_element(xr, xr + len);
    T total{0};
    for (std::size_t t = 0; t < len; ++t) total += std::exp(xr[t] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t t = 0; t < len; ++t) out[r * len + t] = xr[t] - lse;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, len](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      T gsum{0};
      for (std::size_t t = 0; t < len; ++t) gsum += self.grad[r * len + t];
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t j = r * len + t;
        gx[j] += self.grad[j] - std::exp(self.data[j]) * gsum;
      }
    }
  });
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, T eps) {
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(rows);
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T mu{0};
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (xr[i] - mu) * inv;
  }
  return make_result<T>(x.shape(), std::move(out), {x},
                        [rows, d, inv_std = std::move(inv_std)](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      T g_mean{0}, gy_mean{0};
      for (std::size_t i = 0; i < d; ++i) {
        g_mean += g[r * d + i];
        gy_mean += g[r * d + i] * y[r * d + i];
      }
      g_mean /= static_cast<T>(d);
      gy_mean /= static_cast<T>(d);
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t j = r * d + i;
        gx[j] += inv_std[r] * (g[j] - g_mean - y[j] * gy_mean);
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, T eps) {
  if (beta.shape() != Shape{x.dim(-1)} || gamma.shape() != Shape{x.dim(-1)}) {
    throw ShapeError("layer_norm affine extents " + shape_str(beta.shape()) + "/" +
                     shape_str(gamma.shape()) + " do not match input " + shape_str(x.shape()));
  }
  return add(mul(normalize(x, eps), beta), gamma);
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> indices,
                    const Shape& index_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(index_shape) != indices.size()) {
    throw ShapeError("index count does not match index shape " + shape_str(index_shape));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  std::vector<T> out(idx.size() * d);
  const T* pt = table.data().data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      throw VocabularyError("index " + std::to_string(idx[r]) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
    std::copy_n(pt + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  }
  Shape shape = index_shape;
  shape.push_back(d);
  return make_result<T>(std::move(shape), std::move(out), {table},
                        [idx = std::move(idx), d](Node<T>& self) {
    auto& gt = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* row = gt.data() + static_cast<std::size_t>(idx[r]) * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += self.grad[r * d + i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{1}, {total}, {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (auto& v : gx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> gather_nll(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  const std::size_t v = logits.dim(-1);
  const std::size_t rows = logits.numel() / v;
  if (targets.size() != rows) {
    throw ShapeError("gather_nll: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " logit rows of " + shape_str(logits.shape()));
  }
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<T> lse(rows);
  const T* px = logits.data().data();
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw VocabularyError("target " + std::to_string(tgt[r]) + " outside vocabulary of " +
                            std::to_string(v));
    }
    const T* xr = px + r * v;
    const T mx = *std::max_element(xr, xr + v);
    T s{0};
    for (std::size_t t = 0; t < v; ++t) s += std::exp(xr[t] - mx);
    lse[r] = mx + std::log(s);
    total += lse[r] - xr[tgt[r]];
  }
  const T loss = total / static_cast<T>(rows);
  return make_result<T>(Shape{1}, {loss}, {logits},
                        [tgt = std::move(tgt), lse = std::move(lse), rows, v](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& x = self.parents[0]->data;
    const T g = self.grad[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < v; ++t) {
        const std::size_t j = r * v + t;
        gx[j] += g * std::exp(x[j] - lse[r]);
      }
      gx[r * v + static_cast<std::size_t>(tgt[r])] -= g;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace {

// dst (shape with axes a,b swapped) = src permuted; accumulates when asked.
template <typename T>
void swap_axes_copy(const T* src, const Shape& src_shape, std::size_t a, std::size_t b, T* dst,
                    bool accumulate) {
  Shape out_shape = src_shape;
  std::swap(out_shape[a], out_shape[b]);
  auto in_strides = contiguous_strides(src_shape);
  std::swap(in_strides[a], in_strides[b]);
  const std::size_t r = out_shape.size();
  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_stride = in_strides[r - 1];
  const std::size_t total = shape_numel(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    if (accumulate) {
      for (std::size_t i = 0; i < inner; ++i) dst[o + i] += src[off + i * inner_stride];
    } else {
      for (std::size_t i = 0; i < inner; ++i) dst[o + i] = src[off + i * inner_stride];
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      off += in_strides[d];
      if (idx[d] < out_shape[d]) break;
      off -= in_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b) {
  if (axis_a >= x.rank() || axis_b >= x.rank()) {
    throw ShapeError("transpose axes out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  std::vector<T> out(x.numel());
  swap_axes_copy(x.data().data(), x.shape(), axis_a, axis_b, out.data(), false);
  return make_result<T>(out_shape, std::move(out), {x}, [out_shape, axis_a, axis_b](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    swap_axes_copy(self.grad.data(), out_shape, axis_a, axis_b, gx.data(), true);
  });
}

template <typename T>
Tensor<T> shift(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("shift axis out of range for " + shape_str(x.shape()));
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> out(x.numel(), T{0});
  const T* px = x.data().data();
  const std::size_t block = sp.len * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(px + o * block, (sp.len - 1) * sp.inner, out.data() + o * block + sp.inner);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [sp, block](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* g = self.grad.data() + o * block + sp.inner;
      T* dst = gx.data() + o * block;
      for (std::size_t i = 0; i < (sp.len - 1) * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(static_cast<std::ptrdiff_t>(axis))) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(shape_numel(out_shape));
  const T* px = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(px + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [sp, start, length](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* g = self.grad.data() + o * length * sp.inner;
      T* dst = gx.data() + (o * sp.len + start) * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

namespace {

struct AttentionGeometry {
  std::size_t rows = 0;  // B * L
  std::size_t seq = 0;   // S
  std::size_t width = 0; // heads * Dh
  std::size_t heads = 0;
  std::size_t head_dim = 0;
};

template <typename T>
AttentionGeometry attention_geometry(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
  if (q.rank() != 4) throw ShapeError("attention expects [B, L, S, D], got " + shape_str(q.shape()));
  if (k.shape() != q.shape()) {
    throw ShapeError("attention operand mismatch: " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  }
  AttentionGeometry g;
  g.width = q.dim(3);
  if (heads == 0 || g.width % heads != 0) {
    throw ShapeError("width " + std::to_string(g.width) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  g.rows = q.dim(0) * q.dim(1);
  g.seq = q.dim(2);
  g.heads = heads;
  g.head_dim = g.width / heads;
  return g;
}

// Fills probs [rows, heads, S, S]; masked entries get an additive -inf score.
template <typename T>
void attention_probs(const T* q, const T* k, const AttentionGeometry& g, bool causal, T* probs) {
  const T scale = T{1} / std::sqrt(static_cast<T>(g.head_dim));
  const T neg_inf = -std::numeric_limits<T>::infinity();
  const std::size_t S = g.seq;
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      T* p = probs + (r * g.heads + h) * S * S;
      for (std::size_t s = 0; s < S; ++s) {
        const T* qs = q + (r * S + s) * g.width + h * g.head_dim;
        T* ps = p + s * S;
        T mx = neg_inf;
        for (std::size_t t = 0; t < S; ++t) {
          const T* kt = k + (r * S + t) * g.width + h * g.head_dim;
          T dot{0};
          for (std::size_t i = 0; i < g.head_dim; ++i) dot += qs[i] * kt[i];
          T score = dot * scale;
          if (causal && t > s) score += neg_inf;
          ps[t] = score;
          mx = std::max(mx, score);
        }
        T total{0};
        for (std::size_t t = 0; t < S; ++t) {
          ps[t] = std::exp(ps[t] - mx);
          total += ps[t];
        }
        for (std::size_t t = 0; t < S; ++t) ps[t] /= total;
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> axial_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t heads, bool causal) {
  const auto g = attention_geometry(q, k, heads);
  if (v.shape() != q.shape()) {
    throw ShapeError("attention operand mismatch: " + shape_str(q.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t S = g.seq;
  const std::size_t score_entries = g.rows * g.heads * S * S;
  g_attention_stats.calls += 1;
  g_attention_stats.last_score_entries = score_entries;
  g_attention_stats.max_score_entries = std::max(g_attention_stats.max_score_entries, score_entries);

  std::vector<T> probs(score_entries);
  attention_probs(q.data().data(), k.data().data(), g, causal, probs.data());

  std::vector<T> out(q.numel(), T{0});
  const T* pv = v.data().data();
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      const T* p = probs.data() + (r * g.heads + h) * S * S;
      for (std::size_t s = 0; s < S; ++s) {
        T* os = out.data() + (r * S + s) * g.width + h * g.head_dim;
        for (std::size_t t = 0; t < S; ++t) {
          const T w = p[s * S + t];
          const T* vt = pv + (r * S + t) * g.width + h * g.head_dim;
          for (std::size_t i = 0; i < g.head_dim; ++i) os[i] += w * vt[i];
        }
      }
    }
  }

  return make_result<T>(q.shape(), std::move(out), {q, k, v},
                        [g, probs = std::move(probs)](Node<T>& self) {
    const std::size_t S = g.seq;
    const T scale = T{1} / std::sqrt(static_cast<T>(g.head_dim));
    const T* dq_src = self.parents[0]->data.data();
    const T* dk_src = self.parents[1]->data.data();
    const T* dv_src = self.parents[2]->data.data();
    T* gq = wants(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
    T* gk = wants(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
    T* gv = wants(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
    const T* go = self.grad.data();
    std::vector<T> dscore(S * S);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t h = 0; h < g.heads; ++h) {
        const T* p = probs.data() + (r * g.heads + h) * S * S;
        const std::size_t col = h * g.head_dim;
        for (std::size_t s = 0; s < S; ++s) {
          const T* gos = go + (r * S + s) * g.width + col;
          T row_dot{0};
          for (std::size_t t = 0; t < S; ++t) {
            const T* vt = dv_src + (r * S + t) * g.width + col;
            T dp{0};
            for (std::size_t i = 0; i < g.head_dim; ++i) dp += gos[i] * vt[i];
            dscore[s * S + t] = dp;
            row_dot += p[s * S + t] * dp;
            if (gv) {
              T* gvt = gv + (r * S + t) * g.width + col;
              const T w = p[s * S + t];
              for (std::size_t i = 0; i < g.head_dim; ++i) gvt[i] += w * gos[i];
            }
          }
          for (std::size_t t = 0; t < S; ++t) {
            dscore[s * S + t] = p[s * S + t] * (dscore[s * S + t] - row_dot) * scale;
          }
        }
        for (std::size_t s = 0; s < S; ++s) {
          const T* qs = dq_src + (r * S + s) * g.width + col;
          T* gqs = gq ? gq + (r * S + s) * g.width + col : nullptr;
          for (std::size_t t = 0; t < S; ++t) {
            const T ds = dscore[s * S + t];
            if (ds == T{0}) continue;
            const T* kt = dk_src + (r * S + t) * g.width + col;
            if (gqs) {
              for (std::size_t i = 0; i < g.head_dim; ++i) gqs[i] += ds * kt[i];
            }
            if (gk) {
              T* gkt = gk + (r * S + t) * g.width + col;
              for (std::size_t i = 0; i < g.head_dim; ++i) gkt[i] += ds * qs[i];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, bool causal) {
  const auto g = attention_geometry(q, k, heads);
  std::vector<T> probs(g.rows * g.heads * g.seq * g.seq);
  attention_probs(q.data().data(), k.data().data(), g, causal, probs.data());
  return Tensor<T>(Shape{q.dim(0), q.dim(1), g.heads, g.seq, g.seq}, std::move(probs));
}

AttentionStats attention_stats() { return g_attention_stats; }
void reset_attention_stats() { g_attention_stats = {}; }

#define COLTRAN_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> softmax(const Tensor<T>&, std::ptrdiff_t);                                 \
  template Tensor<T> log_softmax(const Tensor<T>&);                                             \
  template Tensor<T> normalize(const Tensor<T>&, T);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);  \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> gather_nll(const Tensor<T>&, std::span<const std::int32_t>);               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> shift(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> axial_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                     std::size_t, bool);                                        \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, std::size_t, bool);

COLTRAN_INSTANTIATE_OPS(float)
COLTRAN_INSTANTIATE_OPS(double)

}  // namespace coltran
