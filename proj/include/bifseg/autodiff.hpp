#pragma once

// Tape-based reverse-mode differentiation over the tensor kernels.
//
// A Graph records every node produced during a forward pass. Node ids are
// assigned in creation order and a node may only consume earlier ids, so the
// tape is acyclic by construction and backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bifseg/kernels.hpp"
#include "bifseg/tensor.hpp"

namespace bifseg {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value

  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), T(0)); }
};

// Named parameters in insertion order. The order defines checkpoint layout.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Parameter<T> param;
  };

  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    entries_.clear();
    index_.clear();
    for (const auto& e : other.entries_) {
      entries_.push_back(std::make_unique<Entry>(*e));
      index_.emplace(e->name, entries_.size() - 1);
    }
    return *this;
  }

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name) != 0) throw ContractError("duplicate parameter name '" + name + "'");
    entries_.push_back(std::make_unique<Entry>(Entry{name, Parameter<T>(std::move(value))}));
    index_.emplace(name, entries_.size() - 1);
    return entries_.back()->param;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) { return entries_[lookup(name)]->param; }
  const Parameter<T>& at(const std::string& name) const { return entries_[lookup(name)]->param; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Entry& entry(std::size_t i) { return *entries_[i]; }
  const Entry& entry(std::size_t i) const { return *entries_[i]; }

  void zero_grad() {
    for (auto& e : entries_) e->param.zero_grad();
  }

  std::size_t element_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e->param.value.size();
    return total;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e->name, e->param.value.template cast<U>());
    return out;
  }

  // Names and values equal bitwise, in the same order.
  bool same_values(const ParameterSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entry(i).name != other.entry(i).name || !(entry(i).param.value == other.entry(i).param.value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::unique_ptr<Entry>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Graph;

// Handle to a node on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Tensor<T>& grad() const { return graph->grad(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
  bool operator==(const Var& o) const { return graph == o.graph && id == o.id; }
};

template <typename T>
class Graph {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  // With grad_enabled == false nothing requires gradients and no backward
  // closures are kept (inference mode).
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> input(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    n.leaf = true;
    n.op = "input";
    return push(std::move(n));
  }

  Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }

  // Binds a parameter as a leaf. Each parameter gets one node per graph;
  // backward() adds the node gradient into Parameter::grad.
  Var<T> param(Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var<T>{this, it->second};
    Node n;
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    n.leaf = true;
    n.param = &p;
    n.op = "param";
    Var<T> v = push(std::move(n));
    bound_.emplace(&p, v.id);
    return v;
  }

  // Appends an interior node. `inputs` must all precede the new node.
  // A non-differentiable node keeps its provenance but never propagates.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, std::string op,
                bool differentiable = true) {
    Node n;
    n.value = std::move(value);
    n.op = std::move(op);
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw GraphError("node '" + n.op + "' consumes a node that does not precede it");
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    n.requires_grad = n.requires_grad && differentiable;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Discrete state of a piecewise op (ReLU signs, pooling winners, mask
  // bits). Two evaluations with equal signatures lie on the same smooth
  // piece of the function.
  void set_pattern(std::size_t id, std::vector<std::uint32_t> pattern) { nodes_.at(id).pattern = std::move(pattern); }

  std::uint64_t signature() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].pattern.empty()) continue;
      mix(i);
      for (std::uint32_t v : nodes_[i].pattern) mix(v);
    }
    return h;
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  // Gradient of the last backward() loss w.r.t. the node; zeros if the node
  // was not reached.
  const Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Adds `g` into the gradient of node `id` if it requires one.
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw GraphError("gradient shape " + g.shape().str() + " does not match node '" + n.op + "' shape " +
                       n.value.shape().str());
    }
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  // Reverse sweep from a scalar loss. Interior gradients are recomputed on
  // every call; parameter and input-leaf gradients accumulate across calls.
  void backward(Var<T> loss) {
    if (loss.graph != this) throw GraphError("loss belongs to a different graph");
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw ContractError("backward() needs a scalar loss, got " + root.value.shape().str());
    for (auto& n : nodes_) {
      if (!n.leaf || n.param != nullptr) n.grad = Tensor<T>();
    }
    if (!root.requires_grad) return;
    Tensor<T> seed = Tensor<T>::scalar(T(1));
    if (nodes_[loss.id].leaf) {
      accumulate(loss.id, seed);
    } else {
      nodes_[loss.id].grad = seed;
    }
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.param != nullptr) {
        for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
        continue;
      }
      if (n.backward) {
        for (std::size_t in : n.inputs) {
          if (in >= i) throw GraphError("cycle detected at node '" + n.op + "'");
        }
        // The closure only touches gradients of earlier nodes.
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    std::vector<std::uint32_t> pattern;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    std::string op;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
};

namespace detail {

template <typename T>
std::vector<std::uint32_t> positive_bits(const Tensor<T>& t) {
  std::vector<std::uint32_t> bits((t.size() + 31) / 32, 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] > T(0)) bits[i / 32] |= std::uint32_t{1} << (i % 32);
  }
  return bits;
}

}  // namespace detail

namespace ad {

template <typename T>
void check_same_graph(const Var<T>& a, const Var<T>& b) {
  if (a.graph != b.graph) throw GraphError("operands belong to different graphs");
}

// Convolution with optional bias (pass bias.graph == nullptr for none).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvSpec& spec) {
  Graph<T>& g = *x.graph;
  check_same_graph(x, weight);
  const bool has_bias = bias.graph != nullptr;
  if (has_bias) check_same_graph(x, bias);
  std::span<const T> bspan;
  if (has_bias) bspan = bias.value().data();
  Tensor<T> out = bifseg::conv2d(x.value(), weight.value(), bspan, spec);
  std::vector<std::size_t> inputs{x.id, weight.id};
  if (has_bias) inputs.push_back(bias.id);
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return g.record(
      std::move(out), inputs,
      [xi, wi, bi, has_bias, spec](Graph<T>& gr, const Tensor<T>& go) {
        const bool want_b = has_bias && gr.requires_grad(bi);
        auto grads = conv2d_backward(gr.value(xi), gr.value(wi), go, spec, gr.requires_grad(xi),
                                     gr.requires_grad(wi), want_b);
        if (grads.input) gr.accumulate(xi, *grads.input);
        if (grads.weight) gr.accumulate(wi, *grads.weight);
        if (grads.bias) gr.accumulate(bi, grads.bias->reshaped(gr.value(bi).shape()));
      },
      "conv2d");
}

template <typename T>
Var<T> maxpool2d(Var<T> x, std::size_t k, std::size_t stride, bool same_padding) {
  auto r = maxpool2d_with_argmax(x.value(), k, stride, same_padding);
  const std::size_t xi = x.id;
  const Shape in_shape = x.shape();
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(r.argmax));
  Var<T> out = x.graph->record(
      std::move(r.output), {xi},
      [xi, in_shape, argmax](Graph<T>& gr, const Tensor<T>& go) {
        gr.accumulate(xi, maxpool2d_backward(in_shape, *argmax, go));
      },
      "maxpool2d");
  x.graph->set_pattern(out.id, *argmax);
  return out;
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  const std::size_t xi = x.id;
  return x.graph->record(
      bifseg::upsample_nearest(x.value(), factor), {xi},
      [xi, factor](Graph<T>& gr, const Tensor<T>& go) { gr.accumulate(xi, upsample_nearest_backward(go, factor)); },
      "upsample_nearest");
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw SpecError("concat_channels needs at least one part");
  std::vector<const Tensor<T>*> values;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets{0};
  for (const auto& p : parts) {
    check_same_graph(parts.front(), p);
    values.push_back(&p.value());
    ids.push_back(p.id);
    offsets.push_back(offsets.back() + p.value().c());
  }
  return parts.front().graph->record(
      bifseg::concat_channels(values), ids,
      [ids, offsets](Graph<T>& gr, const Tensor<T>& go) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (gr.requires_grad(ids[i])) gr.accumulate(ids[i], slice_channels(go, offsets[i], offsets[i + 1]));
        }
      },
      "concat_channels");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  const bool bcast = detail::channel_broadcast(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  const Shape bshape = b.shape();
  return a.graph->record(
      bifseg::add(a.value(), b.value()), {ai, bi},
      [ai, bi, bcast, bshape](Graph<T>& gr, const Tensor<T>& go) {
        gr.accumulate(ai, go);
        if (!gr.requires_grad(bi)) return;
        if (!bcast) {
          gr.accumulate(bi, go);
          return;
        }
        Tensor<T> gb(bshape);
        for (std::size_t n = 0; n < go.n(); ++n)
          for (std::size_t c = 0; c < go.c(); ++c)
            for (std::size_t i = 0; i < go.h() * go.w(); ++i) gb[n * bshape.plane() + i] += go.plane(n, c)[i];
        gr.accumulate(bi, gb);
      },
      "add");
}

// Elementwise product; b may be single-channel and is then broadcast over
// a's channels.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  const bool bcast = detail::channel_broadcast(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record(
      bifseg::mul(a.value(), b.value()), {ai, bi},
      [ai, bi, bcast](Graph<T>& gr, const Tensor<T>& go) {
        const Tensor<T>& av = gr.value(ai);
        const Tensor<T>& bv = gr.value(bi);
        if (gr.requires_grad(ai)) gr.accumulate(ai, bifseg::mul(go, bv));
        if (!gr.requires_grad(bi)) return;
        Tensor<T> prod = bifseg::mul(go, av);
        if (!bcast) {
          gr.accumulate(bi, prod);
          return;
        }
        Tensor<T> gb(bv.shape());
        for (std::size_t n = 0; n < prod.n(); ++n)
          for (std::size_t c = 0; c < prod.c(); ++c)
            for (std::size_t i = 0; i < prod.h() * prod.w(); ++i) gb[n * bv.h() * bv.w() + i] += prod.plane(n, c)[i];
        gr.accumulate(bi, gb);
      },
      "mul");
}

template <typename T>
Var<T> relu(Var<T> x) {
  const std::size_t xi = x.id;
  Var<T> out = x.graph->record(
      bifseg::relu(x.value()), {xi},
      [xi](Graph<T>& gr, const Tensor<T>& go) {
        const Tensor<T>& xv = gr.value(xi);
        Tensor<T> gx(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > T(0) ? go[i] : T(0);
        gr.accumulate(xi, gx);
      },
      "relu");
  x.graph->set_pattern(out.id, detail::positive_bits(x.value()));
  return out;
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = bifseg::sigmoid(x.value());
  const std::size_t xi = x.id;
  Graph<T>& g = *x.graph;
  const std::size_t self = g.size();
  return g.record(
      std::move(out), {xi},
      [xi, self](Graph<T>& gr, const Tensor<T>& go) {
        const Tensor<T>& s = gr.value(self);
        Tensor<T> gx(s.shape());
        for (std::size_t i = 0; i < s.size(); ++i) gx[i] = go[i] * s[i] * (T(1) - s[i]);
        gr.accumulate(xi, gx);
      },
      "sigmoid");
}

// Identity on values; contributes nothing to x during backward.
template <typename T>
Var<T> stop_gradient(Var<T> x) {
  return x.graph->record(x.value(), {x.id}, nullptr, "stop_gradient", false);
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v);
  const std::size_t xi = x.id;
  const Shape s = x.shape();
  return x.graph->record(
      Tensor<T>::scalar(static_cast<T>(acc)), {xi},
      [xi, s](Graph<T>& gr, const Tensor<T>& go) { gr.accumulate(xi, Tensor<T>(s, go[0])); }, "sum");
}

template <typename T>
Var<T> scale(Var<T> x, double alpha) {
  Tensor<T> out(x.shape());
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<T>(alpha * static_cast<double>(xv[i]));
  const std::size_t xi = x.id;
  return x.graph->record(
      std::move(out), {xi},
      [xi, alpha](Graph<T>& gr, const Tensor<T>& go) {
        Tensor<T> gx(go.shape());
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] = static_cast<T>(alpha * static_cast<double>(go[i]));
        gr.accumulate(xi, gx);
      },
      "scale");
}

// sum_i weights[i] * terms[i] over scalar terms.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw ContractError("weighted_sum needs matching terms and weights");
  double acc = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    check_same_graph(terms.front(), terms[i]);
    if (terms[i].value().size() != 1) throw ContractError("weighted_sum terms must be scalars");
    acc += weights[i] * static_cast<double>(terms[i].value()[0]);
    ids.push_back(terms[i].id);
  }
  return terms.front().graph->record(
      Tensor<T>::scalar(static_cast<T>(acc)), ids,
      [ids, weights](Graph<T>& gr, const Tensor<T>& go) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          gr.accumulate(ids[i], Tensor<T>::scalar(static_cast<T>(weights[i] * static_cast<double>(go[0]))));
        }
      },
      "weighted_sum");
}

}  // namespace ad

namespace detail {

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

struct Sample {
  double value;
  std::uint64_t signature;
};

template <typename T, typename Build>
Sample sample(Build&& build) {
  Graph<T> g(false);
  const double v = static_cast<double>(build(g).value().item());
  if (!std::isfinite(v)) throw NumericError("grad_check: function is not finite at a perturbed point");
  return {v, g.signature()};
}

inline constexpr int kMaxStepShrinks = 8;

// Central difference at element i of `probe`, using the representable
// perturbation actually applied. When x + h or x - h lands on a different
// piece of a piecewise function than x (a ReLU sign, pooling winner or mask
// bit changes), h shrinks by 4x, at most kMaxStepShrinks times.
template <typename T, typename Eval>
double central_difference(Tensor<T>& probe, std::size_t i, double eps, std::uint64_t base, Eval&& eval) {
  const T orig = probe[i];
  double h = eps;
  for (int attempt = 0;; ++attempt) {
    const T up = static_cast<T>(static_cast<double>(orig) + h);
    const T down = static_cast<T>(static_cast<double>(orig) - h);
    probe[i] = up;
    const Sample fu = eval();
    probe[i] = down;
    const Sample fd = eval();
    probe[i] = orig;
    const bool smooth = fu.signature == base && fd.signature == base;
    if (smooth || attempt == kMaxStepShrinks || up == down) {
      return (fu.value - fd.value) / (static_cast<double>(up) - static_cast<double>(down));
    }
    h *= 0.25;
  }
}

template <typename T, typename F>
Tensor<T> input_gradient(F& f, const Tensor<T>& x) {
  Graph<T> g;
  Var<T> xv = g.input(x, true);
  Var<T> y = f(g, xv);
  g.backward(y);
  return g.grad(xv.id);
}

template <typename T, typename F>
Tensor<T> parameter_gradient(F& loss, Parameter<T>& p) {
  p.zero_grad();
  Graph<T> g;
  g.backward(loss(g));
  return p.grad;
}

template <typename A, typename T, typename Eval>
double worst_error(const Tensor<A>& analytic, Tensor<T>& probe, std::size_t count, double eps, Eval&& eval) {
  const std::uint64_t base = eval().signature;
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    worst = std::max(worst, relative_error(static_cast<double>(analytic[i]), central_difference(probe, i, eps, base, eval)));
  }
  return worst;
}

}  // namespace detail

// Compares the reverse-mode gradient of a scalar function against central
// differences with step eps. `f(graph, x)` must build a scalar on `graph`
// from `x`.
//
// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
template <typename T, typename F>
double grad_check(F&& f, const Tensor<T>& x, double eps) {
  if (!(eps > 0.0)) throw SpecError("grad_check eps must be positive");
  const Tensor<T> analytic = detail::input_gradient<T>(f, x);
  Tensor<T> probe = x;
  auto eval = [&] { return detail::sample<T>([&](Graph<T>& g) { return f(g, g.input(probe)); }); };
  return detail::worst_error(analytic, probe, x.size(), eps, eval);
}

// Whole check on a 64-bit copy of the inputs. `f` must be generic over the
// scalar type.
template <typename F>
double grad_check_shadow(F&& f, const Tensor<float>& x, double eps) {
  return grad_check<double>(std::forward<F>(f), x.template cast<double>(), eps);
}

// 32-bit analytic gradient against central differences of the 64-bit
// shadow evaluation of the same function.
template <typename F>
double grad_check_mixed(F&& f, const Tensor<float>& x, double eps) {
  if (!(eps > 0.0)) throw SpecError("grad_check eps must be positive");
  const Tensor<float> analytic = detail::input_gradient<float>(f, x);
  Tensor<double> probe = x.template cast<double>();
  auto eval = [&] { return detail::sample<double>([&](Graph<double>& g) { return f(g, g.input(probe)); }); };
  return detail::worst_error(analytic, probe, x.size(), eps, eval);
}

// Gradient check w.r.t. a parameter tensor that `loss(graph)` reads through
// Graph::param. Checks the first `limit` elements (all when 0).
template <typename T, typename F>
double grad_check_parameter(F&& loss, Parameter<T>& p, double eps, std::size_t limit = 0) {
  if (!(eps > 0.0)) throw SpecError("grad_check eps must be positive");
  const Tensor<T> analytic = detail::parameter_gradient(loss, p);
  auto eval = [&] { return detail::sample<T>([&](Graph<T>& g) { return loss(g); }); };
  const std::size_t count = limit == 0 ? p.value.size() : std::min(limit, p.value.size());
  return detail::worst_error(analytic, p.value, count, eps, eval);
}

// Mixed-precision parameter check: `loss` is generic over the scalar type
// and reads `pf` on a 32-bit graph and `pd` (its 64-bit copy) on a 64-bit one.
template <typename F>
double grad_check_parameter_mixed(F&& loss, Parameter<float>& pf, Parameter<double>& pd, double eps,
                                  std::size_t limit = 0) {
  if (!(eps > 0.0)) throw SpecError("grad_check eps must be positive");
  if (pf.value.shape() != pd.value.shape()) throw ContractError("shadow parameter shape mismatch");
  const Tensor<float> analytic = detail::parameter_gradient(loss, pf);
  auto eval = [&] { return detail::sample<double>([&](Graph<double>& g) { return loss(g); }); };
  const std::size_t count = limit == 0 ? pf.value.size() : std::min(limit, pf.value.size());
  return detail::worst_error(analytic, pd.value, count, eps, eval);
}

}  // namespace bifseg
