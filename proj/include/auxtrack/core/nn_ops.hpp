#pragma once

#include "auxtrack/core/graph.hpp"

namespace auxtrack::ad {

// Plain-loop GEMM kernels. Packed SIMD libraries pick accumulation orders
// based on buffer alignment, which makes identical inputs round differently
// across runs; these keep a fixed per-element order so forward and backward
// passes are bit-reproducible. Row-major throughout.
namespace detail_gemm {

// c (m,n) =/+= a (m,k) * b (k,n)
template <typename T>
void nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<std::size_t>(i) * n;
    if (!acc)
      for (int j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const T al = ai[l];
      const T* bl = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

// c (m,n) =/+= a (m,k) * b (n,k)^T
template <typename T>
void nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<std::size_t>(j) * k;
      T s = T(0);
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

// c (k,n) += a (m,k)^T * b (m,n)
template <typename T>
void tn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    const T* bi = b + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T al = ai[l];
      T* cl = c + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) cl[j] += al * bi[j];
    }
  }
}

}  // namespace detail_gemm

// ---- small elementwise extensions ----

template <typename T>
Var<T> vmax(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("vmax: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(out[i], b.value()[i]);
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& av = g.value(a.id);
        const Tensor<T>& bv = g.value(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (av[i] >= bv[i]) {
            if (g.node(a.id).needs_grad) g.ensure_grad(a.id)[i] += go[i];
          } else if (g.node(b.id).needs_grad) {
            g.ensure_grad(b.id)[i] += go[i];
          }
        }
      });
  return {a.g, id};
}

template <typename T>
Var<T> vmin(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("vmin: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(out[i], b.value()[i]);
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& av = g.value(a.id);
        const Tensor<T>& bv = g.value(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (av[i] <= bv[i]) {
            if (g.node(a.id).needs_grad) g.ensure_grad(a.id)[i] += go[i];
          } else if (g.node(b.id).needs_grad) {
            g.ensure_grad(b.id)[i] += go[i];
          }
        }
      });
  return {a.g, id};
}

template <typename T>
Var<T> vmax_const(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], c);
  int id = a.g->add_node(std::move(out), {a.id}, [a, c](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& av = g.value(a.id);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (av[i] >= c) ga[i] += go[i];
  });
  return {a.g, id};
}

template <typename T>
Var<T> vexp(Var<T> a) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& ov = g.value(self);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ov[i];
  });
  return {a.g, id};
}

// (H, W, C) -> (H, W, 1) channel mean.
template <typename T>
Var<T> mean_channels(Var<T> a) {
  if (a.shape().size() != 3)
    throw std::invalid_argument("mean_channels: need HxWxC");
  const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  Tensor<T> out({h, w, 1});
  const T inv = T(1) / static_cast<T>(c);
  for (int i = 0; i < h * w; ++i) {
    T acc = T(0);
    for (int ch = 0; ch < c; ++ch)
      acc += a.value()[static_cast<std::size_t>(i) * c + ch];
    out[i] = acc * inv;
  }
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, h, w, c, inv](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (int i = 0; i < h * w; ++i)
                             for (int ch = 0; ch < c; ++ch)
                               ga[static_cast<std::size_t>(i) * c + ch] +=
                                   go[i] * inv;
                         });
  return {a.g, id};
}

// Forward difference along x: out(v,u,c) = x(v,u+1,c) - x(v,u,c).
template <typename T>
Var<T> shift_diff_x(Var<T> a) {
  if (a.shape().size() != 3)
    throw std::invalid_argument("shift_diff_x: need HxWxC");
  const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  Tensor<T> out({h, w - 1, c});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u + 1 < w; ++u)
      for (int ch = 0; ch < c; ++ch)
        out.at(v, u, ch) = a.value().at(v, u + 1, ch) - a.value().at(v, u, ch);
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, h, w, c](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (int v = 0; v < h; ++v)
                             for (int u = 0; u + 1 < w; ++u)
                               for (int ch = 0; ch < c; ++ch) {
                                 ga.at(v, u + 1, ch) += go.at(v, u, ch);
                                 ga.at(v, u, ch) -= go.at(v, u, ch);
                               }
                         });
  return {a.g, id};
}

template <typename T>
Var<T> shift_diff_y(Var<T> a) {
  if (a.shape().size() != 3)
    throw std::invalid_argument("shift_diff_y: need HxWxC");
  const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  Tensor<T> out({h - 1, w, c});
  for (int v = 0; v + 1 < h; ++v)
    for (int u = 0; u < w; ++u)
      for (int ch = 0; ch < c; ++ch)
        out.at(v, u, ch) = a.value().at(v + 1, u, ch) - a.value().at(v, u, ch);
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, h, w, c](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (int v = 0; v + 1 < h; ++v)
                             for (int u = 0; u < w; ++u)
                               for (int ch = 0; ch < c; ++ch) {
                                 ga.at(v + 1, u, ch) += go.at(v, u, ch);
                                 ga.at(v, u, ch) -= go.at(v, u, ch);
                               }
                         });
  return {a.g, id};
}

template <typename T>
Var<T> pick(Var<T> a, int index) {
  Tensor<T> out({1}, {a.value()[static_cast<std::size_t>(index)]});
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, index](Graph<T>& g, int self) {
                           g.ensure_grad(a.id)[static_cast<std::size_t>(index)] +=
                               g.grad(self)[0];
                         });
  return {a.g, id};
}

template <typename T>
Var<T> stack_scalars(Graph<T>& g, const std::vector<Var<T>>& xs) {
  Tensor<T> out({static_cast<int>(xs.size())});
  std::vector<int> parents;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().size() != 1)
      throw std::invalid_argument("stack_scalars: inputs must be scalar");
    out[i] = xs[i].value()[0];
    parents.push_back(xs[i].id);
  }
  std::vector<int> ids = parents;
  int id = g.add_node(std::move(out), std::move(parents),
                      [ids](Graph<T>& g2, int self) {
                        const Tensor<T>& go = g2.grad(self);
                        for (std::size_t i = 0; i < ids.size(); ++i)
                          if (g2.node(ids[i]).needs_grad)
                            g2.ensure_grad(ids[i])[0] += go[i];
                      });
  return {&g, id};
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Tensor<T> out = a.value().reshaped(shape);
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    detail::accumulate(g, a.id, g.grad(self));
  });
  return {a.g, id};
}

// ---- concat / slice on the last axis and on rows ----

template <typename T>
Var<T> concat_lastdim(Var<T> a, Var<T> b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size()) throw std::invalid_argument("concat: rank mismatch");
  for (std::size_t i = 0; i + 1 < sa.size(); ++i)
    if (sa[i] != sb[i]) throw std::invalid_argument("concat: dim mismatch");
  int ca = sa.back(), cb = sb.back();
  std::vector<int> shape = sa;
  shape.back() = ca + cb;
  std::size_t rows = a.value().size() / static_cast<std::size_t>(ca);
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int i = 0; i < ca; ++i) out[r * (ca + cb) + i] = a.value()[r * ca + i];
    for (int i = 0; i < cb; ++i)
      out[r * (ca + cb) + ca + i] = b.value()[r * cb + i];
  }
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b, ca, cb, rows](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (int i = 0; i < ca; ++i) ga[r * ca + i] += go[r * (ca + cb) + i];
        }
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (int i = 0; i < cb; ++i)
              gb[r * cb + i] += go[r * (ca + cb) + ca + i];
        }
      });
  return {a.g, id};
}

template <typename T>
Var<T> slice_lastdim(Var<T> a, int start, int len) {
  const auto& sa = a.shape();
  int c = sa.back();
  if (start < 0 || start + len > c) throw std::out_of_range("slice_lastdim");
  std::vector<int> shape = sa;
  shape.back() = len;
  std::size_t rows = a.value().size() / static_cast<std::size_t>(c);
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (int i = 0; i < len; ++i) out[r * len + i] = a.value()[r * c + start + i];
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, start, len, c, rows](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (int i = 0; i < len; ++i)
                               ga[r * c + start + i] += go[r * len + i];
                         });
  return {a.g, id};
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[1])
    throw std::invalid_argument("concat_rows: need (N,C) with equal C");
  int na = a.shape()[0], nb = b.shape()[0], c = a.shape()[1];
  Tensor<T> out({na + nb, c});
  std::copy(a.value().data(), a.value().data() + a.value().size(), out.data());
  std::copy(b.value().data(), b.value().data() + b.value().size(),
            out.data() + a.value().size());
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b, na, nb, c](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          for (std::size_t i = 0; i < static_cast<std::size_t>(na) * c; ++i)
            ga[i] += go[i];
        }
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          std::size_t off = static_cast<std::size_t>(na) * c;
          for (std::size_t i = 0; i < static_cast<std::size_t>(nb) * c; ++i)
            gb[i] += go[off + i];
        }
      });
  return {a.g, id};
}

template <typename T>
Var<T> slice_rows(Var<T> a, int start, int len) {
  if (a.shape().size() != 2) throw std::invalid_argument("slice_rows: need (N,C)");
  int c = a.shape()[1];
  Tensor<T> out({len, c});
  std::copy(a.value().data() + static_cast<std::size_t>(start) * c,
            a.value().data() + static_cast<std::size_t>(start + len) * c,
            out.data());
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, start, len, c](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           std::size_t off = static_cast<std::size_t>(start) * c;
                           for (std::size_t i = 0;
                                i < static_cast<std::size_t>(len) * c; ++i)
                             ga[off + i] += go[i];
                         });
  return {a.g, id};
}

// ---- dense algebra ----

// x: (N, in), w: (in, out), b: (out) -> (N, out)
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.shape().size() != 2 || w.shape().size() != 2)
    throw std::invalid_argument("linear: x and w must be rank 2");
  int n = x.shape()[0], in = x.shape()[1], out_c = w.shape()[1];
  if (w.shape()[0] != in || b.shape() != std::vector<int>{out_c})
    throw std::invalid_argument("linear: shape mismatch");
  Tensor<T> out({n, out_c});
  {
    detail_gemm::nn(x.value().data(), w.value().data(), out.data(), n, in,
                    out_c, false);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < out_c; ++c) out.at(r, c) += b.value()[c];
  }
  int id = x.g->add_node(
      std::move(out), {x.id, w.id, b.id},
      [x, w, b, n, in, out_c](Graph<T>& g, int self) {
        const T* gom = g.grad(self).data();
        if (g.node(x.id).needs_grad)
          detail_gemm::nt(gom, g.value(w.id).data(),
                          g.ensure_grad(x.id).data(), n, out_c, in, true);
        if (g.node(w.id).needs_grad)
          detail_gemm::tn(g.value(x.id).data(), gom,
                          g.ensure_grad(w.id).data(), n, in, out_c);
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < out_c; ++c) gb[c] += g.grad(self).at(r, c);
        }
      });
  return {x.g, id};
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor<T> out({m, n});
  detail_gemm::nn(a.value().data(), b.value().data(), out.data(), m, k, n,
                  false);
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b, m, k, n](Graph<T>& g, int self) {
        const T* gom = g.grad(self).data();
        if (g.node(a.id).needs_grad)
          detail_gemm::nt(gom, g.value(b.id).data(),
                          g.ensure_grad(a.id).data(), m, n, k, true);
        if (g.node(b.id).needs_grad)
          detail_gemm::tn(g.value(a.id).data(), gom,
                          g.ensure_grad(b.id).data(), m, k, n);
      });
  return {a.g, id};
}

// out = a * b^T with a: (M,K), b: (N,K) -> (M,N)
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Tensor<T> out({m, n});
  detail_gemm::nt(a.value().data(), b.value().data(), out.data(), m, k, n,
                  false);
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b, m, k, n](Graph<T>& g, int self) {
        const T* gom = g.grad(self).data();
        if (g.node(a.id).needs_grad)
          detail_gemm::nn(gom, g.value(b.id).data(),
                          g.ensure_grad(a.id).data(), m, n, k, true);
        if (g.node(b.id).needs_grad)
          detail_gemm::tn(gom, g.value(a.id).data(),
                          g.ensure_grad(b.id).data(), m, n, k);
      });
  return {a.g, id};
}

// ---- normalization and softmax ----

// Layer norm over the last axis of an (N, C) tensor.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("layer_norm: x must be (N,C)");
  int n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out({n, c});
  Tensor<T> xhat({n, c});
  Tensor<T> inv_std({n});
  for (int r = 0; r < n; ++r) {
    T mu = T(0);
    for (int j = 0; j < c; ++j) mu += x.value().at(r, j);
    mu /= static_cast<T>(c);
    T var = T(0);
    for (int j = 0; j < c; ++j) {
      T d = x.value().at(r, j) - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int j = 0; j < c; ++j) {
      T h = (x.value().at(r, j) - mu) * is;
      xhat.at(r, j) = h;
      out.at(r, j) = gamma.value()[j] * h + beta.value()[j];
    }
  }
  int id = x.g->add_node(
      std::move(out), {x.id, gamma.id, beta.id},
      [x, gamma, beta, n, c, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        if (g.node(gamma.id).needs_grad) {
          Tensor<T>& gg = g.ensure_grad(gamma.id);
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) gg[j] += go.at(r, j) * xhat.at(r, j);
        }
        if (g.node(beta.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(beta.id);
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) gb[j] += go.at(r, j);
        }
        if (g.node(x.id).needs_grad) {
          Tensor<T>& gx = g.ensure_grad(x.id);
          const Tensor<T>& gv = g.value(gamma.id);
          for (int r = 0; r < n; ++r) {
            T sum_dh = T(0), sum_dh_h = T(0);
            for (int j = 0; j < c; ++j) {
              T dh = go.at(r, j) * gv[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat.at(r, j);
            }
            T inv_c = T(1) / static_cast<T>(c);
            for (int j = 0; j < c; ++j) {
              T dh = go.at(r, j) * gv[j];
              gx.at(r, j) += inv_std[r] *
                             (dh - inv_c * sum_dh - xhat.at(r, j) * inv_c * sum_dh_h);
            }
          }
        }
      });
  return {x.g, id};
}

// Row-wise softmax of an (N, C) tensor.
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("softmax_rows: x must be (N,C)");
  int n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out({n, c});
  for (int r = 0; r < n; ++r) {
    T mx = x.value().at(r, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, x.value().at(r, j));
    T denom = T(0);
    for (int j = 0; j < c; ++j) {
      T e = std::exp(x.value().at(r, j) - mx);
      out.at(r, j) = e;
      denom += e;
    }
    for (int j = 0; j < c; ++j) out.at(r, j) /= denom;
  }
  int id = x.g->add_node(
      std::move(out), {x.id}, [x, n, c](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& y = g.value(self);
        Tensor<T>& gx = g.ensure_grad(x.id);
        for (int r = 0; r < n; ++r) {
          T dot = T(0);
          for (int j = 0; j < c; ++j) dot += go.at(r, j) * y.at(r, j);
          for (int j = 0; j < c; ++j)
            gx.at(r, j) += y.at(r, j) * (go.at(r, j) - dot);
        }
      });
  return {x.g, id};
}

// ---- image-shaped ops ----

// x: (H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout). Zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4)
    throw std::invalid_argument("conv2d: bad ranks");
  const int h = x.shape()[0], wd = x.shape()[1], cin = x.shape()[2];
  const int kh = w.shape()[0], kw = w.shape()[1], cout = w.shape()[3];
  if (w.shape()[2] != cin || b.shape() != std::vector<int>{cout})
    throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  const int K = kh * kw * cin;

  Tensor<T> col({oh * ow, K});
  const T* xd = x.value().data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* crow = col.data() + (static_cast<std::size_t>(oy) * ow + ox) * K;
      int ci = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
            for (int cc = 0; cc < cin; ++cc) crow[ci++] = T(0);
          } else {
            const T* px = xd + (static_cast<std::size_t>(iy) * wd + ix) * cin;
            for (int cc = 0; cc < cin; ++cc) crow[ci++] = px[cc];
          }
        }
      }
    }
  }

  Tensor<T> out({oh, ow, cout});
  {
    detail_gemm::nn(col.data(), w.value().data(), out.data(), oh * ow, K, cout,
                    false);
    for (int r = 0; r < oh * ow; ++r)
      for (int c = 0; c < cout; ++c)
        out[static_cast<std::size_t>(r) * cout + c] += b.value()[c];
  }

  int id = x.g->add_node(
      std::move(out), {x.id, w.id, b.id},
      [x, w, b, h, wd, cin, kh, kw, cout, oh, ow, K, stride, pad,
       col = std::move(col)](Graph<T>& g, int self) {
        const T* gom = g.grad(self).data();
        if (g.node(w.id).needs_grad)
          detail_gemm::tn(col.data(), gom, g.ensure_grad(w.id).data(), oh * ow,
                          K, cout);
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          const Tensor<T>& go = g.grad(self);
          for (int r = 0; r < oh * ow; ++r)
            for (int c = 0; c < cout; ++c)
              gb[c] += go[static_cast<std::size_t>(r) * cout + c];
        }
        if (g.node(x.id).needs_grad) {
          Tensor<T> gcol({oh * ow, K});
          detail_gemm::nt(gom, g.value(w.id).data(), gcol.data(), oh * ow,
                          cout, K, false);
          Tensor<T>& gx = g.ensure_grad(x.id);
          T* gxd = gx.data();
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const T* crow = gcol.data() + (static_cast<std::size_t>(oy) * ow + ox) * K;
              int ci = 0;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride + kx - pad;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
                    ci += cin;
                  } else {
                    T* px = gxd + (static_cast<std::size_t>(iy) * wd + ix) * cin;
                    for (int cc = 0; cc < cin; ++cc) px[cc] += crow[ci++];
                  }
                }
              }
            }
          }
        }
      });
  return {x.g, id};
}

// Bilinear resize of (H, W, C) to (OH, OW, C); half-pixel centers with border
// clamp, so exact 2x upsampling and arbitrary-scale resize share one path.
template <typename T>
Var<T> upsample_bilinear(Var<T> x, int out_h, int out_w) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("upsample_bilinear: x must be HxWxC");
  const int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;

  struct Tap {
    int i0, i1;
    T f;
  };
  std::vector<Tap> ty(static_cast<std::size_t>(out_h)), tx(static_cast<std::size_t>(out_w));
  for (int o = 0; o < out_h; ++o) {
    double s = (o + 0.5) * sy - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(h - 1));
    int i0 = static_cast<int>(std::floor(s));
    ty[o] = {i0, std::min(i0 + 1, h - 1), static_cast<T>(s - i0)};
  }
  for (int o = 0; o < out_w; ++o) {
    double s = (o + 0.5) * sx - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(w - 1));
    int i0 = static_cast<int>(std::floor(s));
    tx[o] = {i0, std::min(i0 + 1, w - 1), static_cast<T>(s - i0)};
  }

  Tensor<T> out({out_h, out_w, c});
  const T* xd = x.value().data();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap& a = ty[oy];
      const Tap& bb = tx[ox];
      const T* p00 = xd + (static_cast<std::size_t>(a.i0) * w + bb.i0) * c;
      const T* p01 = xd + (static_cast<std::size_t>(a.i0) * w + bb.i1) * c;
      const T* p10 = xd + (static_cast<std::size_t>(a.i1) * w + bb.i0) * c;
      const T* p11 = xd + (static_cast<std::size_t>(a.i1) * w + bb.i1) * c;
      T* po = out.data() + (static_cast<std::size_t>(oy) * out_w + ox) * c;
      for (int ch = 0; ch < c; ++ch) {
        T top = p00[ch] + bb.f * (p01[ch] - p00[ch]);
        T bot = p10[ch] + bb.f * (p11[ch] - p10[ch]);
        po[ch] = top + a.f * (bot - top);
      }
    }
  }

  int id = x.g->add_node(
      std::move(out), {x.id},
      [x, h, w, c, out_h, out_w, ty = std::move(ty),
       tx = std::move(tx)](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        Tensor<T>& gx = g.ensure_grad(x.id);
        T* gxd = gx.data();
        for (int oy = 0; oy < out_h; ++oy) {
          for (int ox = 0; ox < out_w; ++ox) {
            const auto& a = ty[oy];
            const auto& bb = tx[ox];
            const T* po = go.data() + (static_cast<std::size_t>(oy) * out_w + ox) * c;
            T* p00 = gxd + (static_cast<std::size_t>(a.i0) * w + bb.i0) * c;
            T* p01 = gxd + (static_cast<std::size_t>(a.i0) * w + bb.i1) * c;
            T* p10 = gxd + (static_cast<std::size_t>(a.i1) * w + bb.i0) * c;
            T* p11 = gxd + (static_cast<std::size_t>(a.i1) * w + bb.i1) * c;
            for (int ch = 0; ch < c; ++ch) {
              T gy = po[ch];
              T w00 = (T(1) - a.f) * (T(1) - bb.f);
              T w01 = (T(1) - a.f) * bb.f;
              T w10 = a.f * (T(1) - bb.f);
              T w11 = a.f * bb.f;
              p00[ch] += gy * w00;
              p01[ch] += gy * w01;
              p10[ch] += gy * w10;
              p11[ch] += gy * w11;
            }
          }
        }
      });
  return {x.g, id};
}

// Global average pool of (H, W, C) to (C).
template <typename T>
Var<T> mean_hw(Var<T> x) {
  if (x.shape().size() != 3) throw std::invalid_argument("mean_hw: x must be HxWxC");
  const int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  Tensor<T> out({c});
  for (int i = 0; i < h * w; ++i)
    for (int ch = 0; ch < c; ++ch)
      out[ch] += x.value()[static_cast<std::size_t>(i) * c + ch];
  const T inv = T(1) / static_cast<T>(h * w);
  for (int ch = 0; ch < c; ++ch) out[ch] *= inv;
  int id = x.g->add_node(std::move(out), {x.id},
                         [x, h, w, c, inv](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& gx = g.ensure_grad(x.id);
                           for (int i = 0; i < h * w; ++i)
                             for (int ch = 0; ch < c; ++ch)
                               gx[static_cast<std::size_t>(i) * c + ch] +=
                                   go[ch] * inv;
                         });
  return {x.g, id};
}

}  // namespace auxtrack::ad
