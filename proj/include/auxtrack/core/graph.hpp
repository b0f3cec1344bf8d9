#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "auxtrack/core/tensor.hpp"

namespace auxtrack::ad {

// Define-by-run reverse-mode tape. Nodes are created in topological order by
// construction, so backward() is a single reverse sweep. Gradients allocate
// lazily; nodes never reached from the loss stay empty and are skipped.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> parents;
    std::function<void(Graph&, int)> backward;
    bool needs_grad = false;
  };

  int add_node(Tensor<T> value, std::vector<int> parents,
               std::function<void(Graph&, int)> bw) {
    bool req = false;
    for (int p : parents) req = req || nodes_[static_cast<std::size_t>(p)].needs_grad;
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = req ? std::move(bw) : nullptr;
    n.needs_grad = req;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  const Tensor<T>& value(int id) const { return node(id).value; }
  const Tensor<T>& grad(int id) const { return node(id).grad; }

  Tensor<T>& ensure_grad(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Seeds d(out)/d(out) = 1 and sweeps the tape in reverse creation order.
  void backward(int out_id) {
    Node& out = node(out_id);
    if (out.value.size() != 1)
      throw std::invalid_argument("backward: output must be scalar");
    ensure_grad(out_id)[0] = T(1);
    for (int i = out_id; i >= 0; --i) {
      Node& n = node(i);
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return g->value(id); }
  const Tensor<T>& grad() const { return g->grad(id); }
  const std::vector<int>& shape() const { return value().shape(); }
};

template <typename T>
Var<T> leaf(Graph<T>& g, Tensor<T> value, bool requires_grad) {
  return {&g, g.add_leaf(std::move(value), requires_grad)};
}

template <typename T>
Var<T> constant(Graph<T>& g, Tensor<T> value) {
  return leaf(g, std::move(value), false);
}

namespace detail {

template <typename T>
void accumulate(Graph<T>& g, int id, const Tensor<T>& delta) {
  if (!g.node(id).needs_grad) return;
  Tensor<T>& grad = g.ensure_grad(id);
  for (std::size_t i = 0; i < delta.size(); ++i) grad[i] += delta[i];
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  int id = a.g->add_node(std::move(out), {a.id, b.id},
                         [a, b](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           detail::accumulate(g, a.id, go);
                           detail::accumulate(g, b.id, go);
                         });
  return {a.g, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  int id = a.g->add_node(std::move(out), {a.id, b.id},
                         [a, b](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           detail::accumulate(g, a.id, go);
                           if (!g.node(b.id).needs_grad) return;
                           Tensor<T>& gb = g.ensure_grad(b.id);
                           for (std::size_t i = 0; i < go.size(); ++i)
                             gb[i] -= go[i];
                         });
  return {a.g, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          const Tensor<T>& bv = g.value(b.id);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
        }
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          const Tensor<T>& av = g.value(a.id);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
        }
      });
  return {a.g, id};
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("div: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  int id = a.g->add_node(
      std::move(out), {a.id, b.id}, [a, b](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& av = g.value(a.id);
        const Tensor<T>& bv = g.value(b.id);
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / bv[i];
        }
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          for (std::size_t i = 0; i < go.size(); ++i)
            gb[i] -= go[i] * av[i] / (bv[i] * bv[i]);
        }
      });
  return {a.g, id};
}

// ---- elementwise with constants ----

template <typename T>
Var<T> mul_const(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  int id = a.g->add_node(std::move(out), {a.id}, [a, c](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
  });
  return {a.g, id};
}

template <typename T>
Var<T> add_const(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    detail::accumulate(g, a.id, g.grad(self));
  });
  return {a.g, id};
}

// Elementwise product with a constant tensor (masks, fixed weights).
template <typename T>
Var<T> mul_mask(Var<T> a, const Tensor<T>& m) {
  if (!a.value().same_shape(m) && a.value().size() != m.size())
    throw std::invalid_argument("mul_mask: size mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  Tensor<T> mc = m;
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, mc = std::move(mc)](Graph<T>& g, int self) {
                           const Tensor<T>& go = g.grad(self);
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (std::size_t i = 0; i < go.size(); ++i)
                             ga[i] += go[i] * mc[i];
                         });
  return {a.g, id};
}

// ---- elementwise unary ----

template <typename T>
Var<T> neg(Var<T> a) { return mul_const(a, T(-1)); }

template <typename T>
Var<T> vabs(Var<T> a) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& av = g.value(a.id);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      T s = av[i] > T(0) ? T(1) : (av[i] < T(0) ? T(-1) : T(0));
      ga[i] += go[i] * s;
    }
  });
  return {a.g, id};
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-out[i]));
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& ov = g.value(self);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i)
      ga[i] += go[i] * ov[i] * (T(1) - ov[i]);
  });
  return {a.g, id};
}

// Exact GELU, x * Phi(x). Smooth everywhere, which keeps finite-difference
// probes well conditioned.
template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(out[i]);
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& av = g.value(a.id);
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      double x = static_cast<double>(av[i]);
      double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] += go[i] * static_cast<T>(phi + x * pdf);
    }
  });
  return {a.g, id};
}

template <typename T>
Var<T> square(Var<T> a) { return mul(a, a); }

// ---- reductions ----

template <typename T>
Var<T> sum_all(Var<T> a) {
  T s = T(0);
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
  Tensor<T> out({1}, {s});
  int id = a.g->add_node(std::move(out), {a.id}, [a](Graph<T>& g, int self) {
    T go = g.grad(self)[0];
    Tensor<T>& ga = g.ensure_grad(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
  });
  return {a.g, id};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return mul_const(sum_all(a), T(1) / static_cast<T>(a.value().size()));
}

// sum(a * w) for a constant weight tensor; the workhorse for masked means
// where the normalizer is a frozen count.
template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& w) {
  if (a.value().size() != w.size())
    throw std::invalid_argument("weighted_sum: size mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < w.size(); ++i) s += a.value()[i] * w[i];
  Tensor<T> out({1}, {s});
  Tensor<T> wc = w;
  int id = a.g->add_node(std::move(out), {a.id},
                         [a, wc = std::move(wc)](Graph<T>& g, int self) {
                           T go = g.grad(self)[0];
                           Tensor<T>& ga = g.ensure_grad(a.id);
                           for (std::size_t i = 0; i < ga.size(); ++i)
                             ga[i] += go * wc[i];
                         });
  return {a.g, id};
}

// Per-element select between two branches with a constant selector in {0,1}:
// out = sel * a + (1 - sel) * b. Used to realize frozen argmin choices.
template <typename T>
Var<T> select_mask(const Tensor<T>& sel, Var<T> a, Var<T> b) {
  if (!a.value().same_shape(b.value()) || a.value().size() != sel.size())
    throw std::invalid_argument("select_mask: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = sel[i] * out[i] + (T(1) - sel[i]) * b.value()[i];
  Tensor<T> sc = sel;
  int id = a.g->add_node(
      std::move(out), {a.id, b.id},
      [a, b, sc = std::move(sc)](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * sc[i];
        }
        if (g.node(b.id).needs_grad) {
          Tensor<T>& gb = g.ensure_grad(b.id);
          for (std::size_t i = 0; i < go.size(); ++i)
            gb[i] += go[i] * (T(1) - sc[i]);
        }
      });
  return {a.g, id};
}

// ---- scalar graph arithmetic (1-element tensors) ----

template <typename T>
Var<T> scalar(Graph<T>& g, T v) {
  return constant(g, Tensor<T>({1}, {v}));
}

template <typename T>
Var<T> div_by_scalar(Var<T> a, Var<T> s) {
  if (s.value().size() != 1)
    throw std::invalid_argument("div_by_scalar: divisor must be scalar");
  Tensor<T> out = a.value();
  T sv = s.value()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sv;
  int id = a.g->add_node(
      std::move(out), {a.id, s.id}, [a, s](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        T sv = g.value(s.id)[0];
        if (g.node(a.id).needs_grad) {
          Tensor<T>& ga = g.ensure_grad(a.id);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / sv;
        }
        if (g.node(s.id).needs_grad) {
          const Tensor<T>& av = g.value(a.id);
          T acc = T(0);
          for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * av[i];
          g.ensure_grad(s.id)[0] -= acc / (sv * sv);
        }
      });
  return {a.g, id};
}

}  // namespace auxtrack::ad
