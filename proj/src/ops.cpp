#include "depthformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "depthformer/error.hpp"
#include "depthformer/kernels.hpp"
#include "depthformer/threading.hpp"

namespace df::ops {

namespace {

template <typename T>
void vaxpy(int64_t n, T alpha, const T* x, T* y) {
  if constexpr (std::is_same_v<T, float>) {
    kern::active().saxpy(n, alpha, x, y);
  } else {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  }
}

template <typename T>
void vadd_into(int64_t n, const T* x, T* y) {
  vaxpy(n, T(1), x, y);
}

uint64_t fnv_mix(uint64_t h, uint64_t v) { return (h ^ v) * 0x100000001b3ull; }

// Digest of a boolean activation pattern, for kink-crossing detection.
template <typename T, typename Pred>
uint64_t sign_digest(const Tensor<T>& x, Pred pred) {
  uint64_t h = 0xcbf29ce484222325ull;
  uint64_t word = 0;
  int bit = 0;
  for (const T& v : x.data) {
    word = (word << 1) | (pred(v) ? 1u : 0u);
    if (++bit == 64) {
      h = fnv_mix(h, word);
      word = 0;
      bit = 0;
    }
  }
  if (bit) h = fnv_mix(h, word);
  return h;
}

// Creates a node whose backward closure receives the node's own id, so it can
// read the incoming gradient with g.grad(self).
template <typename T, typename F>
VarId make_node(Graph<T>& g, Tensor<T> value, bool rg, F back) {
  if (!rg) return g.node(std::move(value), false, nullptr);
  struct Thunk {
    F fn;
    VarId id;
  };
  auto thunk = std::make_shared<Thunk>(Thunk{std::move(back), kNoVar});
  VarId id = g.node(std::move(value), true, [thunk](Graph<T>& gg) { thunk->fn(gg, thunk->id); });
  thunk->id = id;
  return id;
}

template <typename T>
int64_t last_dim(const Tensor<T>& t) {
  if (t.ndim() == 0) throw ShapeError("expected at least 1-d tensor");
  return t.shape.back();
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
VarId add(Graph<T>& g, VarId a, VarId b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out(av.shape);
  if constexpr (std::is_same_v<T, float>) {
    kern::active().sadd(av.numel(), av.ptr(), bv.ptr(), out.ptr());
  } else {
    for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
  }
  return make_node(g, std::move(out), g.rg(a) || g.rg(b), [a, b](Graph<T>& gg, VarId self) {
    const Tensor<T>& go = gg.grad(self);
    if (gg.rg(a)) vadd_into(go.numel(), go.ptr(), gg.grad(a).ptr());
    if (gg.rg(b)) vadd_into(go.numel(), go.ptr(), gg.grad(b).ptr());
  });
}

template <typename T>
VarId add_scaled(Graph<T>& g, VarId a, VarId b, T cb) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (!av.same_shape(bv)) throw ShapeError("add_scaled: shape mismatch");
  Tensor<T> out = av;
  vaxpy(out.numel(), cb, bv.ptr(), out.ptr());
  return make_node(g, std::move(out), g.rg(a) || g.rg(b), [a, b, cb](Graph<T>& gg, VarId self) {
    const Tensor<T>& go = gg.grad(self);
    if (gg.rg(a)) vadd_into(go.numel(), go.ptr(), gg.grad(a).ptr());
    if (gg.rg(b)) vaxpy(go.numel(), cb, go.ptr(), gg.grad(b).ptr());
  });
}

template <typename T>
VarId scale(Graph<T>& g, VarId a, T c) {
  const Tensor<T>& av = g.val(a);
  Tensor<T> out(av.shape);
  if constexpr (std::is_same_v<T, float>) {
    kern::active().sscale(av.numel(), c, av.ptr(), out.ptr());
  } else {
    for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = c * av.data[i];
  }
  return make_node(g, std::move(out), g.rg(a), [a, c](Graph<T>& gg, VarId self) {
    const Tensor<T>& go = gg.grad(self);
    if (gg.rg(a)) vaxpy(go.numel(), c, go.ptr(), gg.grad(a).ptr());
  });
}

template <typename T>
VarId mul(Graph<T>& g, VarId a, VarId b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
  Tensor<T> out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
  return make_node(g, std::move(out), g.rg(a) || g.rg(b), [a, b](Graph<T>& gg, VarId self) {
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& av2 = gg.val(a);
    const Tensor<T>& bv2 = gg.val(b);
    if (gg.rg(a)) {
      Tensor<T>& ga = gg.grad(a);
      for (int64_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i] * bv2.data[i];
    }
    if (gg.rg(b)) {
      Tensor<T>& gb = gg.grad(b);
      for (int64_t i = 0; i < go.numel(); ++i) gb.data[i] += go.data[i] * av2.data[i];
    }
  });
}

template <typename T>
VarId add_row_bias(Graph<T>& g, VarId x, VarId bias) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& bv = g.val(bias);
  const int64_t n = last_dim(xv);
  if (bv.ndim() != 1 || bv.shape[0] != n)
    throw ShapeError("add_row_bias: bias must be [last_dim]");
  Tensor<T> out = xv;
  const int64_t rows = out.numel() / n;
  for (int64_t r = 0; r < rows; ++r) vadd_into(n, bv.ptr(), out.ptr() + r * n);
  return make_node(g, std::move(out), g.rg(x) || g.rg(bias),
                   [x, bias, n](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     const int64_t rows = go.numel() / n;
                     if (gg.rg(x)) vadd_into(go.numel(), go.ptr(), gg.grad(x).ptr());
                     if (gg.rg(bias)) {
                       Tensor<T>& gb = gg.grad(bias);
                       for (int64_t r = 0; r < rows; ++r)
                         vadd_into(n, go.ptr() + r * n, gb.ptr());
                     }
                   });
}

template <typename T>
VarId add_channel_bias(Graph<T>& g, VarId x, VarId bias) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& bv = g.val(bias);
  if (xv.ndim() != 4) throw ShapeError("add_channel_bias: expected [B,C,H,W]");
  const int64_t B = xv.shape[0], C = xv.shape[1], S = xv.shape[2] * xv.shape[3];
  if (bv.ndim() != 1 || bv.shape[0] != C) throw ShapeError("add_channel_bias: bias must be [C]");
  Tensor<T> out = xv;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      T* row = out.ptr() + (b * C + c) * S;
      const T bc = bv.data[static_cast<size_t>(c)];
      for (int64_t i = 0; i < S; ++i) row[i] += bc;
    }
  return make_node(g, std::move(out), g.rg(x) || g.rg(bias),
                   [x, bias, B, C, S](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     if (gg.rg(x)) vadd_into(go.numel(), go.ptr(), gg.grad(x).ptr());
                     if (gg.rg(bias)) {
                       Tensor<T>& gb = gg.grad(bias);
                       for (int64_t b = 0; b < B; ++b)
                         for (int64_t c = 0; c < C; ++c) {
                           const T* row = go.ptr() + (b * C + c) * S;
                           T s = T(0);
                           for (int64_t i = 0; i < S; ++i) s += row[i];
                           gb.data[static_cast<size_t>(c)] += s;
                         }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
VarId relu(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  g.note_kink(sign_digest(xv, [](T v) { return v > T(0); }));
  Tensor<T> out(xv.shape);
  if constexpr (std::is_same_v<T, float>) {
    kern::active().srelu(xv.numel(), xv.ptr(), out.ptr());
  } else {
    for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
  }
  return make_node(g, std::move(out), g.rg(x), [x](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& xv2 = gg.val(x);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t i = 0; i < go.numel(); ++i)
      if (xv2.data[i] > T(0)) gx.data[i] += go.data[i];
  });
}

template <typename T>
VarId leaky_relu(Graph<T>& g, VarId x, T slope) {
  const Tensor<T>& xv = g.val(x);
  g.note_kink(sign_digest(xv, [](T v) { return v > T(0); }));
  Tensor<T> out(xv.shape);
  if constexpr (std::is_same_v<T, float>) {
    kern::active().sleaky(xv.numel(), slope, xv.ptr(), out.ptr());
  } else {
    for (int64_t i = 0; i < xv.numel(); ++i)
      out.data[i] = xv.data[i] > T(0) ? xv.data[i] : slope * xv.data[i];
  }
  return make_node(g, std::move(out), g.rg(x), [x, slope](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& xv2 = gg.val(x);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t i = 0; i < go.numel(); ++i)
      gx.data[i] += go.data[i] * (xv2.data[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
VarId gelu(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  Tensor<T> out(xv.shape);
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const double v = static_cast<double>(xv.data[i]);
    out.data[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_node(g, std::move(out), g.rg(x), [x](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& xv2 = gg.val(x);
    Tensor<T>& gx = gg.grad(x);
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (int64_t i = 0; i < go.numel(); ++i) {
      const double v = static_cast<double>(xv2.data[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx.data[i] += go.data[i] * static_cast<T>(cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
VarId matmul(Graph<T>& g, VarId a, VarId b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
    throw ShapeError("matmul: incompatible " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<T> out({m, n});
  kern::gemm_nn<T>(m, n, k, av.ptr(), k, bv.ptr(), n, out.ptr(), n, false);
  return make_node(g, std::move(out), g.rg(a) || g.rg(b),
                   [a, b, m, k, n](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     if (gg.rg(a))
                       kern::gemm_nt<T>(m, k, n, go.ptr(), n, gg.val(b).ptr(), n,
                                        gg.grad(a).ptr(), k, true);
                     if (gg.rg(b))
                       kern::gemm_tn<T>(k, n, m, gg.val(a).ptr(), k, go.ptr(), n,
                                        gg.grad(b).ptr(), n, true);
                   });
}

template <typename T>
VarId linear(Graph<T>& g, VarId x, VarId w, VarId bias) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& wv = g.val(w);
  if (wv.ndim() != 2) throw ShapeError("linear: weight must be [in,out]");
  const int64_t in = wv.shape[0], out_dim = wv.shape[1];
  if (last_dim(xv) != in)
    throw ShapeError("linear: input last dim " + std::to_string(last_dim(xv)) +
                     " != weight in dim " + std::to_string(in));
  const int64_t rows = xv.numel() / in;
  std::vector<int64_t> oshape = xv.shape;
  oshape.back() = out_dim;
  Tensor<T> out(oshape);
  kern::gemm_nn<T>(rows, out_dim, in, xv.ptr(), in, wv.ptr(), out_dim, out.ptr(), out_dim, false);
  if (bias != kNoVar) {
    const Tensor<T>& bv = g.val(bias);
    if (bv.ndim() != 1 || bv.shape[0] != out_dim) throw ShapeError("linear: bias must be [out]");
    for (int64_t r = 0; r < rows; ++r) vadd_into(out_dim, bv.ptr(), out.ptr() + r * out_dim);
  }
  const bool rg = g.rg(x) || g.rg(w) || (bias != kNoVar && g.rg(bias));
  return make_node(g, std::move(out), rg,
                   [x, w, bias, rows, in, out_dim](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     if (gg.rg(x))
                       kern::gemm_nt<T>(rows, in, out_dim, go.ptr(), out_dim, gg.val(w).ptr(),
                                        out_dim, gg.grad(x).ptr(), in, true);
                     if (gg.rg(w))
                       kern::gemm_tn<T>(in, out_dim, rows, gg.val(x).ptr(), in, go.ptr(), out_dim,
                                        gg.grad(w).ptr(), out_dim, true);
                     if (bias != kNoVar && gg.rg(bias)) {
                       Tensor<T>& gb = gg.grad(bias);
                       for (int64_t r = 0; r < rows; ++r)
                         vadd_into(out_dim, go.ptr() + r * out_dim, gb.ptr());
                     }
                   });
}

template <typename T>
VarId bmm(Graph<T>& g, VarId a, VarId b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (av.ndim() != 3 || bv.ndim() != 3 || av.shape[0] != bv.shape[0] ||
      av.shape[2] != bv.shape[1])
    throw ShapeError("bmm: incompatible " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t B = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
  Tensor<T> out({B, m, n});
  for (int64_t i = 0; i < B; ++i)
    kern::gemm_nn<T>(m, n, k, av.ptr() + i * m * k, k, bv.ptr() + i * k * n, n,
                     out.ptr() + i * m * n, n, false);
  return make_node(g, std::move(out), g.rg(a) || g.rg(b),
                   [a, b, B, m, k, n](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     for (int64_t i = 0; i < B; ++i) {
                       const T* gop = go.ptr() + i * m * n;
                       if (gg.rg(a))
                         kern::gemm_nt<T>(m, k, n, gop, n, gg.val(b).ptr() + i * k * n, n,
                                          gg.grad(a).ptr() + i * m * k, k, true);
                       if (gg.rg(b))
                         kern::gemm_tn<T>(k, n, m, gg.val(a).ptr() + i * m * k, k, gop, n,
                                          gg.grad(b).ptr() + i * k * n, n, true);
                     }
                   });
}

template <typename T>
VarId bmm_nt(Graph<T>& g, VarId a, VarId b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  if (av.ndim() != 3 || bv.ndim() != 3 || av.shape[0] != bv.shape[0] ||
      av.shape[2] != bv.shape[2])
    throw ShapeError("bmm_nt: incompatible " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int64_t B = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[1];
  Tensor<T> out({B, m, n});
  for (int64_t i = 0; i < B; ++i)
    kern::gemm_nt<T>(m, n, k, av.ptr() + i * m * k, k, bv.ptr() + i * n * k, k,
                     out.ptr() + i * m * n, n, false);
  return make_node(g, std::move(out), g.rg(a) || g.rg(b),
                   [a, b, B, m, k, n](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     for (int64_t i = 0; i < B; ++i) {
                       const T* gop = go.ptr() + i * m * n;
                       if (gg.rg(a))
                         kern::gemm_nn<T>(m, k, n, gop, n, gg.val(b).ptr() + i * n * k, k,
                                          gg.grad(a).ptr() + i * m * k, k, true);
                       if (gg.rg(b))
                         kern::gemm_tn<T>(n, k, m, gop, n, gg.val(a).ptr() + i * m * k, k,
                                          gg.grad(b).ptr() + i * n * k, k, true);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Layout moves
// ---------------------------------------------------------------------------

template <typename T>
VarId split_heads(Graph<T>& g, VarId x, int heads) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 3) throw ShapeError("split_heads: expected [B,N,D]");
  const int64_t B = xv.shape[0], N = xv.shape[1], D = xv.shape[2];
  if (D % heads != 0) throw ShapeError("split_heads: dim not divisible by heads");
  const int64_t dh = D / heads;
  Tensor<T> out({B * heads, N, dh});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n) {
      const T* src = xv.ptr() + (b * N + n) * D;
      for (int64_t h = 0; h < heads; ++h)
        std::memcpy(out.ptr() + ((b * heads + h) * N + n) * dh, src + h * dh,
                    sizeof(T) * static_cast<size_t>(dh));
    }
  return make_node(g, std::move(out), g.rg(x), [x, B, N, D, heads, dh](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t n = 0; n < N; ++n) {
        T* dst = gx.ptr() + (b * N + n) * D;
        for (int64_t h = 0; h < heads; ++h)
          vadd_into(dh, go.ptr() + ((b * heads + h) * N + n) * dh, dst + h * dh);
      }
  });
}

template <typename T>
VarId merge_heads(Graph<T>& g, VarId x, int heads) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 3) throw ShapeError("merge_heads: expected [B*h,N,d]");
  if (xv.shape[0] % heads != 0) throw ShapeError("merge_heads: batch not divisible by heads");
  const int64_t B = xv.shape[0] / heads, N = xv.shape[1], dh = xv.shape[2];
  const int64_t D = dh * heads;
  Tensor<T> out({B, N, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n) {
      T* dst = out.ptr() + (b * N + n) * D;
      for (int64_t h = 0; h < heads; ++h)
        std::memcpy(dst + h * dh, xv.ptr() + ((b * heads + h) * N + n) * dh,
                    sizeof(T) * static_cast<size_t>(dh));
    }
  return make_node(g, std::move(out), g.rg(x), [x, B, N, D, heads, dh](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t n = 0; n < N; ++n) {
        const T* src = go.ptr() + (b * N + n) * D;
        for (int64_t h = 0; h < heads; ++h)
          vadd_into(dh, src + h * dh, gx.ptr() + ((b * heads + h) * N + n) * dh);
      }
  });
}

template <typename T>
VarId tokens_to_map(Graph<T>& g, VarId x, int h, int w) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 3) throw ShapeError("tokens_to_map: expected [B,N,C]");
  const int64_t B = xv.shape[0], N = xv.shape[1], C = xv.shape[2];
  if (N != static_cast<int64_t>(h) * w)
    throw ShapeError("tokens_to_map: token count " + std::to_string(N) + " != " +
                     std::to_string(h) + "x" + std::to_string(w));
  Tensor<T> out({B, C, h, w});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n) {
      const T* src = xv.ptr() + (b * N + n) * C;
      T* base = out.ptr() + b * C * N + n;
      for (int64_t c = 0; c < C; ++c) base[c * N] = src[c];
    }
  return make_node(g, std::move(out), g.rg(x), [x, B, N, C](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t n = 0; n < N; ++n) {
        T* dst = gx.ptr() + (b * N + n) * C;
        const T* base = go.ptr() + b * C * N + n;
        for (int64_t c = 0; c < C; ++c) dst[c] += base[c * N];
      }
  });
}

template <typename T>
VarId map_to_tokens(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 4) throw ShapeError("map_to_tokens: expected [B,C,H,W]");
  const int64_t B = xv.shape[0], C = xv.shape[1], N = xv.shape[2] * xv.shape[3];
  Tensor<T> out({B, N, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n) {
      T* dst = out.ptr() + (b * N + n) * C;
      const T* base = xv.ptr() + b * C * N + n;
      for (int64_t c = 0; c < C; ++c) dst[c] = base[c * N];
    }
  return make_node(g, std::move(out), g.rg(x), [x, B, N, C](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t n = 0; n < N; ++n) {
        const T* src = go.ptr() + (b * N + n) * C;
        T* base = gx.ptr() + b * C * N + n;
        for (int64_t c = 0; c < C; ++c) base[c * N] += src[c];
      }
  });
}

template <typename T>
VarId concat_channels(Graph<T>& g, std::span<const VarId> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor<T>& first = g.val(parts[0]);
  if (first.ndim() != 4) throw ShapeError("concat_channels: expected [B,C,H,W]");
  const int64_t B = first.shape[0], H = first.shape[2], W = first.shape[3];
  int64_t Ctot = 0;
  bool rg = false;
  for (VarId p : parts) {
    const Tensor<T>& pv = g.val(p);
    if (pv.ndim() != 4 || pv.shape[0] != B || pv.shape[2] != H || pv.shape[3] != W)
      throw ShapeError("concat_channels: mismatched spatial dims");
    Ctot += pv.shape[1];
    rg = rg || g.rg(p);
  }
  const int64_t S = H * W;
  Tensor<T> out({B, Ctot, H, W});
  std::vector<VarId> ids(parts.begin(), parts.end());
  for (int64_t b = 0; b < B; ++b) {
    int64_t coff = 0;
    for (VarId p : ids) {
      const Tensor<T>& pv = g.val(p);
      const int64_t Cp = pv.shape[1];
      std::memcpy(out.ptr() + (b * Ctot + coff) * S, pv.ptr() + b * Cp * S,
                  sizeof(T) * static_cast<size_t>(Cp * S));
      coff += Cp;
    }
  }
  return make_node(g, std::move(out), rg, [ids, B, Ctot, S](Graph<T>& gg, VarId self) {
    const Tensor<T>& go = gg.grad(self);
    for (int64_t b = 0; b < B; ++b) {
      int64_t coff = 0;
      for (VarId p : ids) {
        const int64_t Cp = gg.val(p).shape[1];
        if (gg.rg(p))
          vadd_into(Cp * S, go.ptr() + (b * Ctot + coff) * S, gg.grad(p).ptr() + b * Cp * S);
        coff += Cp;
      }
    }
  });
}

template <typename T>
VarId take_token(Graph<T>& g, VarId x, int64_t index) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 3) throw ShapeError("take_token: expected [B,N,D]");
  const int64_t B = xv.shape[0], N = xv.shape[1], D = xv.shape[2];
  if (index < 0 || index >= N) throw ShapeError("take_token: index out of range");
  Tensor<T> out({B, D});
  for (int64_t b = 0; b < B; ++b)
    std::memcpy(out.ptr() + b * D, xv.ptr() + (b * N + index) * D,
                sizeof(T) * static_cast<size_t>(D));
  return make_node(g, std::move(out), g.rg(x), [x, B, N, D, index](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      vadd_into(D, go.ptr() + b * D, gx.ptr() + (b * N + index) * D);
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t K, int64_t S, int64_t P,
            int64_t OH, int64_t OW, T* cols) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < K; ++ky)
      for (int64_t kx = 0; kx < K; ++kx) {
        T* crow = cols + ((c * K + ky) * K + kx) * (OH * OW);
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * S - P + ky;
          T* dst = crow + oy * OW;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* xrow = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * S - P + kx;
            dst[ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int64_t C, int64_t H, int64_t W, int64_t K, int64_t S, int64_t P,
                int64_t OH, int64_t OW, T* x) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < K; ++ky)
      for (int64_t kx = 0; kx < K; ++kx) {
        const T* crow = cols + ((c * K + ky) * K + kx) * (OH * OW);
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * S - P + ky;
          if (iy < 0 || iy >= H) continue;
          T* xrow = x + (c * H + iy) * W;
          const T* src = crow + oy * OW;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * S - P + kx;
            if (ix >= 0 && ix < W) xrow[ix] += src[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
VarId conv2d(Graph<T>& g, VarId x, VarId w, VarId bias, int stride, int pad) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& wv = g.val(w);
  if (xv.ndim() != 4) throw ShapeError("conv2d: input must be [B,C,H,W]");
  if (wv.ndim() != 4) throw ShapeError("conv2d: weight must be [Co,Ci,K,K]");
  const int64_t B = xv.shape[0], Ci = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  const int64_t Co = wv.shape[0], K = wv.shape[2];
  if (wv.shape[1] != Ci || wv.shape[3] != K)
    throw ShapeError("conv2d: weight " + shape_str(wv.shape) + " does not match input channels " +
                     std::to_string(Ci));
  const int64_t S = stride, P = pad;
  const int64_t OH = (H + 2 * P - K) / S + 1;
  const int64_t OW = (W + 2 * P - K) / S + 1;
  if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: output would be empty");
  const int64_t CK = Ci * K * K, OS = OH * OW;

  Tensor<T> out({B, Co, OH, OW});
  std::vector<T> cols(static_cast<size_t>(CK * OS));
  for (int64_t b = 0; b < B; ++b) {
    im2col(xv.ptr() + b * Ci * H * W, Ci, H, W, K, S, P, OH, OW, cols.data());
    kern::gemm_nn<T>(Co, OS, CK, wv.ptr(), CK, cols.data(), OS, out.ptr() + b * Co * OS, OS,
                     false);
  }
  if (bias != kNoVar) {
    const Tensor<T>& bv = g.val(bias);
    if (bv.ndim() != 1 || bv.shape[0] != Co) throw ShapeError("conv2d: bias must be [Co]");
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < Co; ++c) {
        T* row = out.ptr() + (b * Co + c) * OS;
        const T bc = bv.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < OS; ++i) row[i] += bc;
      }
  }
  const bool rg = g.rg(x) || g.rg(w) || (bias != kNoVar && g.rg(bias));
  return make_node(
      g, std::move(out), rg,
      [x, w, bias, B, Ci, H, W, Co, K, S, P, OH, OW, CK, OS](Graph<T>& gg, VarId self) {
        const Tensor<T>& go = gg.grad(self);
        const Tensor<T>& xv2 = gg.val(x);
        const Tensor<T>& wv2 = gg.val(w);
        std::vector<T> cols(static_cast<size_t>(CK * OS));
        std::vector<T> gcols;
        if (gg.rg(x)) gcols.resize(static_cast<size_t>(CK * OS));
        for (int64_t b = 0; b < B; ++b) {
          const T* gop = go.ptr() + b * Co * OS;
          if (gg.rg(w) || gg.rg(x))
            im2col(xv2.ptr() + b * Ci * H * W, Ci, H, W, K, S, P, OH, OW, cols.data());
          if (gg.rg(w))
            kern::gemm_nt<T>(Co, CK, OS, gop, OS, cols.data(), OS, gg.grad(w).ptr(), CK, true);
          if (gg.rg(x)) {
            kern::gemm_tn<T>(CK, OS, Co, wv2.ptr(), CK, gop, OS, gcols.data(), OS, false);
            col2im_add(gcols.data(), Ci, H, W, K, S, P, OH, OW,
                       gg.grad(x).ptr() + b * Ci * H * W);
          }
          if (bias != kNoVar && gg.rg(bias)) {
            Tensor<T>& gb = gg.grad(bias);
            for (int64_t c = 0; c < Co; ++c) {
              const T* row = gop + c * OS;
              T s = T(0);
              for (int64_t i = 0; i < OS; ++i) s += row[i];
              gb.data[static_cast<size_t>(c)] += s;
            }
          }
        }
      });
}

template <typename T>
VarId conv_transpose2x2(Graph<T>& g, VarId x, VarId w, VarId bias) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& wv = g.val(w);
  if (xv.ndim() != 4) throw ShapeError("conv_transpose2x2: input must be [B,C,H,W]");
  if (wv.ndim() != 4 || wv.shape[2] != 2 || wv.shape[3] != 2)
    throw ShapeError("conv_transpose2x2: weight must be [Ci,Co,2,2]");
  const int64_t B = xv.shape[0], Ci = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  if (wv.shape[0] != Ci) throw ShapeError("conv_transpose2x2: channel mismatch");
  const int64_t Co = wv.shape[1];
  const int64_t HW = H * W, C4 = Co * 4;

  Tensor<T> out({B, Co, 2 * H, 2 * W});
  std::vector<T> blocks(static_cast<size_t>(HW * C4));
  for (int64_t b = 0; b < B; ++b) {
    // blocks[p, co*4 + 2*di + dj] = sum_ci x[ci,p] * w[ci, co*4 + ...]
    kern::gemm_tn<T>(HW, C4, Ci, xv.ptr() + b * Ci * HW, HW, wv.ptr(), C4, blocks.data(), C4,
                     false);
    for (int64_t co = 0; co < Co; ++co) {
      T* oc = out.ptr() + (b * Co + co) * 4 * HW;
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
          const T* blk = blocks.data() + (i * W + j) * C4 + co * 4;
          T* o0 = oc + (2 * i) * (2 * W) + 2 * j;
          T* o1 = oc + (2 * i + 1) * (2 * W) + 2 * j;
          o0[0] = blk[0];
          o0[1] = blk[1];
          o1[0] = blk[2];
          o1[1] = blk[3];
        }
    }
  }
  if (bias != kNoVar) {
    const Tensor<T>& bv = g.val(bias);
    if (bv.ndim() != 1 || bv.shape[0] != Co) throw ShapeError("conv_transpose2x2: bias");
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < Co; ++c) {
        T* row = out.ptr() + (b * Co + c) * 4 * HW;
        const T bc = bv.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < 4 * HW; ++i) row[i] += bc;
      }
  }
  const bool rg = g.rg(x) || g.rg(w) || (bias != kNoVar && g.rg(bias));
  return make_node(
      g, std::move(out), rg, [x, w, bias, B, Ci, H, W, Co, HW, C4](Graph<T>& gg, VarId self) {
        const Tensor<T>& go = gg.grad(self);
        std::vector<T> gblocks(static_cast<size_t>(HW * C4));
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < Co; ++co) {
            const T* oc = go.ptr() + (b * Co + co) * 4 * HW;
            for (int64_t i = 0; i < H; ++i)
              for (int64_t j = 0; j < W; ++j) {
                T* blk = gblocks.data() + (i * W + j) * C4 + co * 4;
                const T* o0 = oc + (2 * i) * (2 * W) + 2 * j;
                const T* o1 = oc + (2 * i + 1) * (2 * W) + 2 * j;
                blk[0] = o0[0];
                blk[1] = o0[1];
                blk[2] = o1[0];
                blk[3] = o1[1];
              }
          }
          if (gg.rg(x))
            kern::gemm_nt<T>(Ci, HW, C4, gg.val(w).ptr(), C4, gblocks.data(), C4,
                             gg.grad(x).ptr() + b * Ci * HW, HW, true);
          if (gg.rg(w))
            kern::gemm_nn<T>(Ci, C4, HW, gg.val(x).ptr() + b * Ci * HW, HW, gblocks.data(), C4,
                             gg.grad(w).ptr(), C4, true);
          if (bias != kNoVar && gg.rg(bias)) {
            Tensor<T>& gb = gg.grad(bias);
            for (int64_t c = 0; c < Co; ++c) {
              const T* row = go.ptr() + (b * Co + c) * 4 * HW;
              T s = T(0);
              for (int64_t i = 0; i < 4 * HW; ++i) s += row[i];
              gb.data[static_cast<size_t>(c)] += s;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and softmax
// ---------------------------------------------------------------------------

template <typename T>
VarId layernorm(Graph<T>& g, VarId x, VarId gamma, VarId beta) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& gv = g.val(gamma);
  const Tensor<T>& bv = g.val(beta);
  const int64_t D = last_dim(xv);
  if (gv.ndim() != 1 || gv.shape[0] != D || bv.ndim() != 1 || bv.shape[0] != D)
    throw ShapeError("layernorm: gamma/beta must be [D]");
  const int64_t rows = xv.numel() / D;
  constexpr T kEps = T(1e-5);

  Tensor<T> out(xv.shape);
  std::vector<T> mu(static_cast<size_t>(rows)), inv(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * D;
    T m = T(0);
    for (int64_t i = 0; i < D; ++i) m += xr[i];
    m /= static_cast<T>(D);
    T var = T(0);
    for (int64_t i = 0; i < D; ++i) {
      const T d = xr[i] - m;
      var += d * d;
    }
    var /= static_cast<T>(D);
    const T iv = T(1) / std::sqrt(var + kEps);
    mu[static_cast<size_t>(r)] = m;
    inv[static_cast<size_t>(r)] = iv;
    T* yr = out.ptr() + r * D;
    for (int64_t i = 0; i < D; ++i) yr[i] = (xr[i] - m) * iv * gv.data[i] + bv.data[i];
  }
  const bool rg = g.rg(x) || g.rg(gamma) || g.rg(beta);
  return make_node(g, std::move(out), rg,
                   [x, gamma, beta, rows, D, mu = std::move(mu),
                    inv = std::move(inv)](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     const Tensor<T>& xv2 = gg.val(x);
                     const Tensor<T>& gv2 = gg.val(gamma);
                     for (int64_t r = 0; r < rows; ++r) {
                       const T* xr = xv2.ptr() + r * D;
                       const T* gor = go.ptr() + r * D;
                       const T m = mu[static_cast<size_t>(r)];
                       const T iv = inv[static_cast<size_t>(r)];
                       if (gg.rg(gamma)) {
                         Tensor<T>& gga = gg.grad(gamma);
                         for (int64_t i = 0; i < D; ++i)
                           gga.data[i] += gor[i] * (xr[i] - m) * iv;
                       }
                       if (gg.rg(beta)) {
                         Tensor<T>& gb = gg.grad(beta);
                         for (int64_t i = 0; i < D; ++i) gb.data[i] += gor[i];
                       }
                       if (gg.rg(x)) {
                         T h1 = T(0), h2 = T(0);
                         for (int64_t i = 0; i < D; ++i) {
                           const T dxh = gor[i] * gv2.data[i];
                           const T xh = (xr[i] - m) * iv;
                           h1 += dxh;
                           h2 += dxh * xh;
                         }
                         h1 /= static_cast<T>(D);
                         h2 /= static_cast<T>(D);
                         T* gx = gg.grad(x).ptr() + r * D;
                         for (int64_t i = 0; i < D; ++i) {
                           const T dxh = gor[i] * gv2.data[i];
                           const T xh = (xr[i] - m) * iv;
                           gx[i] += (dxh - h1 - xh * h2) * iv;
                         }
                       }
                     }
                   });
}

namespace {

// Softmax over a strided slice: n entries, stride s.
template <typename T>
void softmax_slice(const T* x, T* y, int64_t n, int64_t s) {
  T mx = x[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i * s]);
  T sum = T(0);
  for (int64_t i = 0; i < n; ++i) {
    const T e = std::exp(x[i * s] - mx);
    y[i * s] = e;
    sum += e;
  }
  const T invsum = T(1) / sum;
  for (int64_t i = 0; i < n; ++i) y[i * s] *= invsum;
}

template <typename T>
void softmax_slice_back(const T* y, const T* go, T* gx, int64_t n, int64_t s) {
  T dot = T(0);
  for (int64_t i = 0; i < n; ++i) dot += go[i * s] * y[i * s];
  for (int64_t i = 0; i < n; ++i) gx[i * s] += y[i * s] * (go[i * s] - dot);
}

}  // namespace

template <typename T>
VarId softmax_lastdim(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  const int64_t D = last_dim(xv);
  const int64_t rows = xv.numel() / D;
  Tensor<T> out(xv.shape);
  parallel_for(rows, 64, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) softmax_slice(xv.ptr() + r * D, out.ptr() + r * D, D, 1);
  });
  return make_node(g, std::move(out), g.rg(x), [x, rows, D](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& yv = gg.val(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t r = 0; r < rows; ++r)
      softmax_slice_back(yv.ptr() + r * D, go.ptr() + r * D, gx.ptr() + r * D, D, 1);
  });
}

template <typename T>
VarId softmax_channels(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 4) throw ShapeError("softmax_channels: expected [B,C,H,W]");
  const int64_t B = xv.shape[0], C = xv.shape[1], S = xv.shape[2] * xv.shape[3];
  Tensor<T> out(xv.shape);
  parallel_for(B * S, 1024, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const int64_t b = p / S, i = p % S;
      softmax_slice(xv.ptr() + b * C * S + i, out.ptr() + b * C * S + i, C, S);
    }
  });
  return make_node(g, std::move(out), g.rg(x), [x, B, C, S](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    const Tensor<T>& yv = gg.val(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < S; ++i)
        softmax_slice_back(yv.ptr() + b * C * S + i, go.ptr() + b * C * S + i,
                           gx.ptr() + b * C * S + i, C, S);
  });
}

// ---------------------------------------------------------------------------
// Resampling and pooling
// ---------------------------------------------------------------------------

namespace {

struct LerpIndex {
  int64_t lo, hi;
  double w;  // weight of hi
};

// Half-pixel-center source coordinates (align_corners=false).
std::vector<LerpIndex> bilinear_axis(int64_t in, int64_t out) {
  std::vector<LerpIndex> v(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    const double cap = static_cast<double>(in - 1);
    if (src > cap) src = cap;
    const int64_t lo = static_cast<int64_t>(src);
    const int64_t hi = std::min(lo + 1, in - 1);
    v[static_cast<size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return v;
}

}  // namespace

template <typename T>
VarId bilinear_upsample(Graph<T>& g, VarId x, int64_t oh, int64_t ow) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 4) throw ShapeError("bilinear_upsample: expected [B,C,H,W]");
  const int64_t B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  if (oh <= 0 || ow <= 0) throw ShapeError("bilinear_upsample: bad target size");
  const auto ys = bilinear_axis(H, oh);
  const auto xs = bilinear_axis(W, ow);
  Tensor<T> out({B, C, oh, ow});
  parallel_for(B * C, 4, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const T* src = xv.ptr() + p * H * W;
      T* dst = out.ptr() + p * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        const auto& iy = ys[static_cast<size_t>(oy)];
        const T* r0 = src + iy.lo * W;
        const T* r1 = src + iy.hi * W;
        const T wy = static_cast<T>(iy.w);
        T* drow = dst + oy * ow;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const auto& ix = xs[static_cast<size_t>(ox)];
          const T wx = static_cast<T>(ix.w);
          const T top = r0[ix.lo] + wx * (r0[ix.hi] - r0[ix.lo]);
          const T bot = r1[ix.lo] + wx * (r1[ix.hi] - r1[ix.lo]);
          drow[ox] = top + wy * (bot - top);
        }
      }
    }
  });
  return make_node(g, std::move(out), g.rg(x),
                   [x, B, C, H, W, oh, ow, ys, xs](Graph<T>& gg, VarId self) {
                     if (!gg.rg(x)) return;
                     const Tensor<T>& go = gg.grad(self);
                     Tensor<T>& gx = gg.grad(x);
                     for (int64_t p = 0; p < B * C; ++p) {
                       T* dst = gx.ptr() + p * H * W;
                       const T* src = go.ptr() + p * oh * ow;
                       for (int64_t oy = 0; oy < oh; ++oy) {
                         const auto& iy = ys[static_cast<size_t>(oy)];
                         const T wy = static_cast<T>(iy.w);
                         const T* srow = src + oy * ow;
                         for (int64_t ox = 0; ox < ow; ++ox) {
                           const auto& ix = xs[static_cast<size_t>(ox)];
                           const T wx = static_cast<T>(ix.w);
                           const T v = srow[ox];
                           dst[iy.lo * W + ix.lo] += (T(1) - wy) * (T(1) - wx) * v;
                           dst[iy.lo * W + ix.hi] += (T(1) - wy) * wx * v;
                           dst[iy.hi * W + ix.lo] += wy * (T(1) - wx) * v;
                           dst[iy.hi * W + ix.hi] += wy * wx * v;
                         }
                       }
                     }
                   });
}

template <typename T>
VarId global_avg_pool(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 4) throw ShapeError("global_avg_pool: expected [B,C,H,W]");
  const int64_t B = xv.shape[0], C = xv.shape[1], S = xv.shape[2] * xv.shape[3];
  Tensor<T> out({B, C});
  for (int64_t p = 0; p < B * C; ++p) {
    const T* row = xv.ptr() + p * S;
    T s = T(0);
    for (int64_t i = 0; i < S; ++i) s += row[i];
    out.data[static_cast<size_t>(p)] = s / static_cast<T>(S);
  }
  return make_node(g, std::move(out), g.rg(x), [x, B, C, S](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const Tensor<T>& go = gg.grad(self);
    Tensor<T>& gx = gg.grad(x);
    for (int64_t p = 0; p < B * C; ++p) {
      const T v = go.data[static_cast<size_t>(p)] / static_cast<T>(S);
      T* row = gx.ptr() + p * S;
      for (int64_t i = 0; i < S; ++i) row[i] += v;
    }
  });
}

template <typename T>
VarId mean_all(Graph<T>& g, VarId x) {
  const Tensor<T>& xv = g.val(x);
  const int64_t n = xv.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(xv.data[i]);
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(s / static_cast<double>(n));
  return make_node(g, std::move(out), g.rg(x), [x, n](Graph<T>& gg, VarId self) {
    if (!gg.rg(x)) return;
    const T go = gg.grad(self).data[0];
    Tensor<T>& gx = gg.grad(x);
    const T v = go / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) gx.data[i] += v;
  });
}

// ---------------------------------------------------------------------------
// Depth-bin math
// ---------------------------------------------------------------------------

template <typename T>
VarId normalize_widths(Graph<T>& g, VarId raw, T eps) {
  const Tensor<T>& rv = g.val(raw);
  if (rv.ndim() != 2) throw ShapeError("normalize_widths: expected [B,K]");
  if (eps <= T(0)) throw DomainError("normalize_widths: eps must be positive");
  const int64_t B = rv.shape[0], K = rv.shape[1];
  Tensor<T> out(rv.shape);
  std::vector<T> sums(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const T* r = rv.ptr() + b * K;
    T s = T(0);
    for (int64_t k = 0; k < K; ++k) {
      if (r[k] < T(0)) throw DomainError("normalize_widths: negative raw width");
      s += r[k] + eps;
    }
    sums[static_cast<size_t>(b)] = s;
    T* o = out.ptr() + b * K;
    for (int64_t k = 0; k < K; ++k) o[k] = (r[k] + eps) / s;
  }
  return make_node(g, std::move(out), g.rg(raw),
                   [raw, B, K, sums = std::move(sums)](Graph<T>& gg, VarId self) {
                     if (!gg.rg(raw)) return;
                     const Tensor<T>& go = gg.grad(self);
                     const Tensor<T>& yv = gg.val(self);
                     Tensor<T>& gr = gg.grad(raw);
                     for (int64_t b = 0; b < B; ++b) {
                       const T* gor = go.ptr() + b * K;
                       const T* y = yv.ptr() + b * K;
                       T dot = T(0);
                       for (int64_t k = 0; k < K; ++k) dot += gor[k] * y[k];
                       const T invs = T(1) / sums[static_cast<size_t>(b)];
                       T* grr = gr.ptr() + b * K;
                       for (int64_t k = 0; k < K; ++k) grr[k] += (gor[k] - dot) * invs;
                     }
                   });
}

template <typename T>
VarId bin_centers(Graph<T>& g, VarId widths, T d_min, T d_max) {
  const Tensor<T>& wv = g.val(widths);
  if (wv.ndim() != 2) throw ShapeError("bin_centers: expected [B,K]");
  const int64_t B = wv.shape[0], K = wv.shape[1];
  const T span = d_max - d_min;
  Tensor<T> out(wv.shape);
  for (int64_t b = 0; b < B; ++b) {
    const T* w = wv.ptr() + b * K;
    T* c = out.ptr() + b * K;
    T cum = T(0);
    for (int64_t k = 0; k < K; ++k) {
      c[k] = d_min + span * (w[k] / T(2) + cum);
      cum += w[k];
    }
  }
  return make_node(g, std::move(out), g.rg(widths),
                   [widths, B, K, span](Graph<T>& gg, VarId self) {
                     if (!gg.rg(widths)) return;
                     const Tensor<T>& go = gg.grad(self);
                     Tensor<T>& gw = gg.grad(widths);
                     for (int64_t b = 0; b < B; ++b) {
                       const T* gc = go.ptr() + b * K;
                       T* gwr = gw.ptr() + b * K;
                       T suffix = T(0);  // sum of gc over bins strictly after k
                       for (int64_t k = K - 1; k >= 0; --k) {
                         gwr[k] += span * (gc[k] / T(2) + suffix);
                         suffix += gc[k];
                       }
                     }
                   });
}

template <typename T>
VarId bin_expectation(Graph<T>& g, VarId probs, VarId centers) {
  const Tensor<T>& pv = g.val(probs);
  const Tensor<T>& cv = g.val(centers);
  if (pv.ndim() != 4) throw ShapeError("bin_expectation: probs must be [B,K,H,W]");
  if (cv.ndim() != 2 || cv.shape[0] != pv.shape[0] || cv.shape[1] != pv.shape[1])
    throw ShapeError("bin_expectation: centers must be [B,K] matching probs");
  const int64_t B = pv.shape[0], K = pv.shape[1], S = pv.shape[2] * pv.shape[3];
  Tensor<T> out({B, 1, pv.shape[2], pv.shape[3]});
  for (int64_t b = 0; b < B; ++b) {
    T* o = out.ptr() + b * S;
    std::fill(o, o + S, T(0));
    for (int64_t k = 0; k < K; ++k)
      vaxpy(S, cv.at(b, k), pv.ptr() + (b * K + k) * S, o);
  }
  return make_node(g, std::move(out), g.rg(probs) || g.rg(centers),
                   [probs, centers, B, K, S](Graph<T>& gg, VarId self) {
                     const Tensor<T>& go = gg.grad(self);
                     const Tensor<T>& pv2 = gg.val(probs);
                     const Tensor<T>& cv2 = gg.val(centers);
                     for (int64_t b = 0; b < B; ++b) {
                       const T* gor = go.ptr() + b * S;
                       if (gg.rg(probs)) {
                         Tensor<T>& gp = gg.grad(probs);
                         for (int64_t k = 0; k < K; ++k)
                           vaxpy(S, cv2.at(b, k), gor, gp.ptr() + (b * K + k) * S);
                       }
                       if (gg.rg(centers)) {
                         Tensor<T>& gc = gg.grad(centers);
                         for (int64_t k = 0; k < K; ++k) {
                           const T* p = pv2.ptr() + (b * K + k) * S;
                           T s = T(0);
                           for (int64_t i = 0; i < S; ++i) s += gor[i] * p[i];
                           gc.at(b, k) += s;
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
SilogResult<T> silog(Graph<T>& g, VarId pred, const Tensor<T>& gt,
                     const std::vector<uint8_t>& valid, T alpha, T lambda) {
  const Tensor<T>& pv = g.val(pred);
  if (pv.numel() != gt.numel())
    throw ShapeError("silog: pred/gt element counts differ");
  if (static_cast<int64_t>(valid.size()) != gt.numel())
    throw ShapeError("silog: mask size mismatch");
  const int64_t n_total = gt.numel();

  double s1 = 0.0, s2 = 0.0;
  int64_t n = 0;
  std::vector<T> gvals(static_cast<size_t>(n_total), T(0));
  for (int64_t i = 0; i < n_total; ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    const double p = static_cast<double>(pv.data[i]);
    if (p <= 0.0) throw DomainError("silog: nonpositive prediction at a valid pixel");
    const double d = std::log(p) - std::log(static_cast<double>(gt.data[i]));
    gvals[static_cast<size_t>(i)] = static_cast<T>(d);
    s1 += d;
    s2 += d * d;
    ++n;
  }
  if (n == 0) throw DomainError("silog: no valid pixels");
  const double mean1 = s1 / static_cast<double>(n);
  const double mean2 = s2 / static_cast<double>(n);
  double rad = mean2 - static_cast<double>(lambda) * mean1 * mean1;
  const bool clamped = rad < 0.0;
  g.note_kink(clamped ? 0x9e3779b97f4a7c15ull : 0x7f4a7c159e3779b9ull);
  if (clamped) rad = 0.0;
  const double loss = static_cast<double>(alpha) * std::sqrt(rad);

  Tensor<T> out({1});
  out.data[0] = static_cast<T>(loss);
  // dL/dg_i = alpha/sqrt(rad) * (g_i - lambda*mean(g)) / n, dg_i/dp_i = 1/p_i.
  // At rad == 0 the sqrt kink gets the zero subgradient.
  VarId id = make_node(
      g, std::move(out), g.rg(pred),
      [pred, alpha, lambda, n, rad, mean1, clamped, valid,
       gvals = std::move(gvals)](Graph<T>& gg, VarId self) {
        if (!gg.rg(pred) || clamped || rad <= 0.0) return;
        const double go = static_cast<double>(gg.grad(self).data[0]);
        const Tensor<T>& pv2 = gg.val(pred);
        Tensor<T>& gp = gg.grad(pred);
        const double coef =
            go * static_cast<double>(alpha) / std::sqrt(rad) / static_cast<double>(n);
        const double lm = static_cast<double>(lambda) * mean1;
        for (int64_t i = 0; i < pv2.numel(); ++i) {
          if (!valid[static_cast<size_t>(i)]) continue;
          const double gv = static_cast<double>(gvals[static_cast<size_t>(i)]);
          gp.data[i] += static_cast<T>(coef * (gv - lm) / static_cast<double>(pv2.data[i]));
        }
      });
  return {id, n};
}

template <typename T>
VarId chamfer(Graph<T>& g, VarId centers, const std::vector<std::vector<T>>& gt_sets) {
  const Tensor<T>& cv = g.val(centers);
  if (cv.ndim() != 2) throw ShapeError("chamfer: centers must be [B,K]");
  const int64_t B = cv.shape[0], K = cv.shape[1];
  if (static_cast<int64_t>(gt_sets.size()) != B)
    throw ShapeError("chamfer: need one gt set per batch element");

  double total = 0.0;
  std::vector<std::vector<int32_t>> x_argmin(static_cast<size_t>(B));
  std::vector<std::vector<int32_t>> c_argmin(static_cast<size_t>(B));
  uint64_t kink = 0xcbf29ce484222325ull;
  for (int64_t b = 0; b < B; ++b) {
    const auto& xs = gt_sets[static_cast<size_t>(b)];
    if (xs.empty()) throw DomainError("chamfer: empty ground-truth set");
    const T* c = cv.ptr() + b * K;
    auto& xa = x_argmin[static_cast<size_t>(b)];
    auto& ca = c_argmin[static_cast<size_t>(b)];
    xa.resize(xs.size());
    ca.resize(static_cast<size_t>(K));
    double fwd = 0.0;
    for (size_t xi = 0; xi < xs.size(); ++xi) {
      const double x = static_cast<double>(xs[xi]);
      double best = std::numeric_limits<double>::infinity();
      int32_t arg = 0;
      for (int64_t k = 0; k < K; ++k) {
        const double d = x - static_cast<double>(c[k]);
        const double d2 = d * d;
        if (d2 < best) {
          best = d2;
          arg = static_cast<int32_t>(k);
        }
      }
      xa[xi] = arg;
      fwd += best;
      kink = fnv_mix(kink, static_cast<uint64_t>(arg));
    }
    fwd /= static_cast<double>(xs.size());
    double bwd = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      const double ck = static_cast<double>(c[k]);
      double best = std::numeric_limits<double>::infinity();
      int32_t arg = 0;
      for (size_t xi = 0; xi < xs.size(); ++xi) {
        const double d = ck - static_cast<double>(xs[xi]);
        const double d2 = d * d;
        if (d2 < best) {
          best = d2;
          arg = static_cast<int32_t>(xi);
        }
      }
      ca[static_cast<size_t>(k)] = arg;
      bwd += best;
      kink = fnv_mix(kink, static_cast<uint64_t>(arg));
    }
    bwd /= static_cast<double>(K);
    total += fwd + bwd;
  }
  g.note_kink(kink);
  total /= static_cast<double>(B);

  Tensor<T> out({1});
  out.data[0] = static_cast<T>(total);
  return make_node(g, std::move(out), g.rg(centers),
                   [centers, B, K, gt_sets, x_argmin = std::move(x_argmin),
                    c_argmin = std::move(c_argmin)](Graph<T>& gg, VarId self) {
                     if (!gg.rg(centers)) return;
                     const T go = gg.grad(self).data[0];
                     const Tensor<T>& cv2 = gg.val(centers);
                     Tensor<T>& gc = gg.grad(centers);
                     for (int64_t b = 0; b < B; ++b) {
                       const auto& xs = gt_sets[static_cast<size_t>(b)];
                       const auto& xa = x_argmin[static_cast<size_t>(b)];
                       const auto& ca = c_argmin[static_cast<size_t>(b)];
                       const T* c = cv2.ptr() + b * K;
                       T* gcr = gc.ptr() + b * K;
                       const double wf = 2.0 / (static_cast<double>(xs.size()) * B);
                       const double wb = 2.0 / (static_cast<double>(K) * B);
                       for (size_t xi = 0; xi < xs.size(); ++xi) {
                         const int32_t k = xa[xi];
                         gcr[k] += static_cast<T>(go * wf *
                                                  (static_cast<double>(c[k]) -
                                                   static_cast<double>(xs[xi])));
                       }
                       for (int64_t k = 0; k < K; ++k) {
                         const T x = xs[static_cast<size_t>(ca[static_cast<size_t>(k)])];
                         gcr[k] += static_cast<T>(go * wb *
                                                  (static_cast<double>(c[k]) -
                                                   static_cast<double>(x)));
                       }
                     }
                   });
}

#define DF_INSTANTIATE_OPS(T)                                                              \
  template VarId add<T>(Graph<T>&, VarId, VarId);                                         \
  template VarId add_scaled<T>(Graph<T>&, VarId, VarId, T);                               \
  template VarId scale<T>(Graph<T>&, VarId, T);                                           \
  template VarId mul<T>(Graph<T>&, VarId, VarId);                                         \
  template VarId add_row_bias<T>(Graph<T>&, VarId, VarId);                                \
  template VarId add_channel_bias<T>(Graph<T>&, VarId, VarId);                            \
  template VarId relu<T>(Graph<T>&, VarId);                                               \
  template VarId leaky_relu<T>(Graph<T>&, VarId, T);                                      \
  template VarId gelu<T>(Graph<T>&, VarId);                                               \
  template VarId matmul<T>(Graph<T>&, VarId, VarId);                                      \
  template VarId linear<T>(Graph<T>&, VarId, VarId, VarId);                               \
  template VarId bmm<T>(Graph<T>&, VarId, VarId);                                         \
  template VarId bmm_nt<T>(Graph<T>&, VarId, VarId);                                      \
  template VarId split_heads<T>(Graph<T>&, VarId, int);                                   \
  template VarId merge_heads<T>(Graph<T>&, VarId, int);                                   \
  template VarId tokens_to_map<T>(Graph<T>&, VarId, int, int);                            \
  template VarId map_to_tokens<T>(Graph<T>&, VarId);                                      \
  template VarId concat_channels<T>(Graph<T>&, std::span<const VarId>);                   \
  template VarId take_token<T>(Graph<T>&, VarId, int64_t);                                \
  template VarId conv2d<T>(Graph<T>&, VarId, VarId, VarId, int, int);                     \
  template VarId conv_transpose2x2<T>(Graph<T>&, VarId, VarId, VarId);                    \
  template VarId layernorm<T>(Graph<T>&, VarId, VarId, VarId);                            \
  template VarId softmax_lastdim<T>(Graph<T>&, VarId);                                    \
  template VarId softmax_channels<T>(Graph<T>&, VarId);                                   \
  template VarId bilinear_upsample<T>(Graph<T>&, VarId, int64_t, int64_t);                \
  template VarId global_avg_pool<T>(Graph<T>&, VarId);                                    \
  template VarId mean_all<T>(Graph<T>&, VarId);                                           \
  template VarId normalize_widths<T>(Graph<T>&, VarId, T);                                \
  template VarId bin_centers<T>(Graph<T>&, VarId, T, T);                                  \
  template VarId bin_expectation<T>(Graph<T>&, VarId, VarId);                             \
  template SilogResult<T> silog<T>(Graph<T>&, VarId, const Tensor<T>&,                    \
                                   const std::vector<uint8_t>&, T, T);                    \
  template VarId chamfer<T>(Graph<T>&, VarId, const std::vector<std::vector<T>>&);

DF_INSTANTIATE_OPS(float)
DF_INSTANTIATE_OPS(double)

}  // namespace df::ops
