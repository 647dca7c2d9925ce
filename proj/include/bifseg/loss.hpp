#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bifseg/autodiff.hpp"

namespace bifseg {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before the log.
inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
  double lung = 0.5;
  double aux = 1.0;
  double fin = 2.0;

  void validate() const {
    if (lung < 0 || aux < 0 || fin < 0) throw ConfigError("loss weights must be nonnegative");
    if (lung == 0 && aux == 0 && fin == 0) throw ConfigError("at least one loss weight must be positive");
  }
};

namespace detail {

template <typename T>
void check_bce_args(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce prediction " + pred.shape().str() + " vs target " + target.shape().str());
  }
  for (T y : target.data()) {
    if (y != T(0) && y != T(1)) throw DataError("bce target must be binary, found " + std::to_string(y));
  }
}

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace detail

// Mean binary cross-entropy over every element (batch and space).
template <typename T>
double bce_value(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_bce_args(pred, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = detail::clamp_prob(static_cast<double>(pred[i]));
    acc += target[i] == T(1) ? std::log(p) : std::log(1.0 - p);
  }
  return -acc / static_cast<double>(pred.size());
}

namespace ad {

// Differentiable BCE against a constant target.
//
// When `pred` is the output of a sigmoid node the gradient goes straight
// to the logits as (sigmoid(z) - y) / N, the exact derivative of the
// composition, which stays informative when the sigmoid saturates.
// Otherwise the derivative (p - y) / (p (1 - p)) / N is evaluated at the
// clamped probability.
template <typename T>
Var<T> bce(Var<T> pred, const Tensor<T>& target) {
  const double loss = bce_value(pred.value(), target);
  Graph<T>& g = *pred.graph;
  const std::size_t pi = pred.id;
  const double n = static_cast<double>(pred.value().size());
  if (g.op(pi) == "sigmoid") {
    const std::size_t zi = g.inputs(pi).front();
    return g.record(
        Tensor<T>::scalar(static_cast<T>(loss)), {pi, zi},
        [pi, zi, n, target](Graph<T>& gr, const Tensor<T>& go) {
          const Tensor<T>& p = gr.value(pi);
          const double scale = static_cast<double>(go[0]) / n;
          Tensor<T> gz(p.shape());
          for (std::size_t i = 0; i < p.size(); ++i) {
            gz[i] = static_cast<T>(scale * (static_cast<double>(p[i]) - static_cast<double>(target[i])));
          }
          gr.accumulate(zi, gz);
        },
        "bce");
  }
  return g.record(
      Tensor<T>::scalar(static_cast<T>(loss)), {pi},
      [pi, n, target](Graph<T>& gr, const Tensor<T>& go) {
        const Tensor<T>& p = gr.value(pi);
        const double scale = static_cast<double>(go[0]) / n;
        Tensor<T> gp(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double pc = detail::clamp_prob(static_cast<double>(p[i]));
          const double y = static_cast<double>(target[i]);
          gp[i] = static_cast<T>(scale * (pc - y) / (pc * (1.0 - pc)));
        }
        gr.accumulate(pi, gp);
      },
      "bce");
}

// Weighted three-term objective: w.lung*l_lung + w.aux*l_aux + w.fin*l_fin.
template <typename T>
Var<T> total_loss(Var<T> l_lung, Var<T> l_aux, Var<T> l_fin, const LossWeights& w) {
  for (const Var<T>* v : {&l_lung, &l_aux, &l_fin}) {
    const double x = static_cast<double>(v->value().item());
    if (!(x >= 0.0) || !std::isfinite(x)) throw ContractError("loss terms must be finite and nonnegative");
  }
  return weighted_sum<T>({l_lung, l_aux, l_fin}, {w.lung, w.aux, w.fin});
}

}  // namespace ad

inline double total_loss(double l_lung, double l_aux, double l_fin, const LossWeights& w) {
  for (double x : {l_lung, l_aux, l_fin}) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ContractError("loss terms must be finite and nonnegative");
  }
  return w.lung * l_lung + w.aux * l_aux + w.fin * l_fin;
}

}  // namespace bifseg
