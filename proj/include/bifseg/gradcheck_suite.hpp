#pragma once

// Finite-difference checks of every differentiable kernel, an inception
// block and the full model, each run in two modes:
//   shadow  everything in 64-bit                      (tolerance 1e-4)
//   32-bit  32-bit reverse pass vs 64-bit differences (tolerance 1e-2)

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "bifseg/blocks.hpp"
#include "bifseg/data.hpp"
#include "bifseg/loss.hpp"
#include "bifseg/rng.hpp"

namespace bifseg {

inline constexpr double kShadowTolerance = 1e-4;
inline constexpr double kFloatTolerance = 1e-2;

struct GradCheckResult {
  std::string name;
  std::string mode;  // "shadow" or "32-bit"
  double error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return std::isfinite(error) && error < tolerance; }
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double eps = 1e-6;        // kernels and the inception block
  double model_eps = 1e-3;  // full model
  bool include_model = true;
  std::size_t model_size = 16;
  std::size_t parameter_limit = 16;  // elements checked per model parameter
};

namespace detail {

inline Tensor<float> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(s);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Values at least `gap` away from zero.
inline Tensor<float> away_from_zero(const Shape& s, Rng& rng, double gap) {
  Tensor<float> t(s);
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = static_cast<float>(rng.below(2) == 0 ? m : -m);
  }
  return t;
}

// Distinct values on a 0.05 grid, shuffled, so no window has a near tie.
inline Tensor<float> distinct_tensor(const Shape& s, Rng& rng) {
  std::vector<float> vals(s.numel());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(0.05 * static_cast<double>(i) - 1.0);
  rng.shuffle(vals);
  return Tensor<float>(s, vals);
}

inline Tensor<float> binary_tensor(const Shape& s, Rng& rng) {
  Tensor<float> t(s);
  for (auto& v : t.data()) v = static_cast<float>(rng.below(2));
  return t;
}

// Reduces y to a scalar with fixed, unequal weights so that every element
// of y gets a distinct upstream gradient.
template <typename T>
Var<T> probe(Var<T> y) {
  Tensor<T> w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(std::cos(1.7 * static_cast<double>(i) + 0.3));
  return ad::sum(ad::mul(y, y.graph->constant(std::move(w))));
}

template <typename T>
Var<T> constant(Graph<T>& g, const Tensor<float>& t) {
  return g.constant(t.template cast<T>());
}

// Same scalar function in 32-bit and 64-bit form.
struct Check {
  std::string name;
  Tensor<float> x;
  std::function<Var<float>(Graph<float>&, Var<float>)> f32;
  std::function<Var<double>(Graph<double>&, Var<double>)> f64;
};

template <typename F>
Check make_check(std::string name, Tensor<float> x, F f) {
  return Check{std::move(name), std::move(x), [f](Graph<float>& g, Var<float> v) { return f(g, v); },
               [f](Graph<double>& g, Var<double> v) { return f(g, v); }};
}

inline void run_check(const Check& c, double eps, std::vector<GradCheckResult>& out) {
  auto f32 = c.f32;
  auto f64 = c.f64;
  auto generic = [&](auto& g, auto v) {
    if constexpr (std::is_same_v<std::decay_t<decltype(g)>, Graph<float>>) {
      return f32(g, v);
    } else {
      return f64(g, v);
    }
  };
  out.push_back({c.name, "shadow", grad_check_shadow(generic, c.x, eps), kShadowTolerance});
  out.push_back({c.name, "32-bit", grad_check_mixed(generic, c.x, eps), kFloatTolerance});
}

inline std::vector<Check> kernel_checks(Rng& rng) {
  std::vector<Check> checks;
  {
    const Tensor<float> x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor<float> w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor<float> b = random_tensor({3, 1, 1, 1}, rng);
    const ConvSpec spec = ConvSpec::square(3);
    checks.push_back(make_check("conv2d 3x3 input", x, [=](auto& g, auto v) {
      return probe(ad::conv2d(v, constant(g, w), constant(g, b), spec));
    }));
    checks.push_back(make_check("conv2d 3x3 weight", w, [=](auto& g, auto v) {
      return probe(ad::conv2d(constant(g, x), v, constant(g, b), spec));
    }));
    checks.push_back(make_check("conv2d 3x3 bias", b, [=](auto& g, auto v) {
      return probe(ad::conv2d(constant(g, x), constant(g, w), v, spec));
    }));
  }
  {
    const Tensor<float> x = random_tensor({1, 2, 9, 9}, rng);
    const Tensor<float> w = random_tensor({2, 2, 5, 5}, rng, -0.5, 0.5);
    const Tensor<float> b = random_tensor({2, 1, 1, 1}, rng);
    const ConvSpec spec = ConvSpec::square(5, 2);
    checks.push_back(make_check("conv2d 5x5 dilation 2 input", x, [=](auto& g, auto v) {
      return probe(ad::conv2d(v, constant(g, w), constant(g, b), spec));
    }));
    checks.push_back(make_check("conv2d 5x5 dilation 2 weight", w, [=](auto& g, auto v) {
      return probe(ad::conv2d(constant(g, x), v, constant(g, b), spec));
    }));
  }
  {
    // Wide output: exercises the im2col path.
    const Tensor<float> x = random_tensor({2, 3, 7, 7}, rng);
    const Tensor<float> w = random_tensor({12, 3, 3, 3}, rng, -0.5, 0.5);
    const Tensor<float> b = random_tensor({12, 1, 1, 1}, rng);
    const ConvSpec spec = ConvSpec::square(3, 2);
    checks.push_back(make_check("conv2d 12-wide dilation 2 input", x, [=](auto& g, auto v) {
      return probe(ad::conv2d(v, constant(g, w), constant(g, b), spec));
    }));
    checks.push_back(make_check("conv2d 12-wide dilation 2 weight", w, [=](auto& g, auto v) {
      return probe(ad::conv2d(constant(g, x), v, constant(g, b), spec));
    }));
    const ConvSpec strided = ConvSpec::square(3, 1, 2);
    checks.push_back(make_check("conv2d stride 2 input", x, [=](auto& g, auto v) {
      return probe(ad::conv2d(v, constant(g, w), constant(g, b), strided));
    }));
  }
  checks.push_back(make_check("maxpool2d 2x2 stride 2", distinct_tensor({1, 2, 6, 6}, rng),
                              [](auto&, auto v) { return probe(ad::maxpool2d(v, 2, 2, false)); }));
  checks.push_back(make_check("maxpool2d 7x7 same", distinct_tensor({1, 1, 8, 8}, rng),
                              [](auto&, auto v) { return probe(ad::maxpool2d(v, 7, 1, true)); }));
  checks.push_back(make_check("upsample_nearest x2", random_tensor({1, 2, 3, 3}, rng),
                              [](auto&, auto v) { return probe(ad::upsample_nearest(v, 2)); }));
  {
    const Tensor<float> other = random_tensor({1, 2, 4, 4}, rng);
    checks.push_back(make_check("concat_channels", random_tensor({1, 1, 4, 4}, rng), [=](auto& g, auto v) {
      return probe(ad::concat_channels<typename std::decay_t<decltype(g)>::value_type>({v, constant(g, other), v}));
    }));
  }
  {
    const Tensor<float> wide = random_tensor({1, 3, 4, 4}, rng);
    const Tensor<float> narrow = random_tensor({1, 1, 4, 4}, rng);
    checks.push_back(make_check("add", random_tensor({1, 3, 4, 4}, rng),
                                [=](auto& g, auto v) { return probe(ad::add(v, constant(g, wide))); }));
    checks.push_back(make_check("add channel broadcast", narrow,
                                [=](auto& g, auto v) { return probe(ad::add(constant(g, wide), v)); }));
    checks.push_back(make_check("mul", random_tensor({1, 3, 4, 4}, rng),
                                [=](auto& g, auto v) { return probe(ad::mul(v, ad::add(v, constant(g, wide)))); }));
    checks.push_back(make_check("mul channel broadcast", narrow,
                                [=](auto& g, auto v) { return probe(ad::mul(constant(g, wide), v)); }));
  }
  checks.push_back(make_check("relu", away_from_zero({1, 2, 4, 4}, rng, 0.05),
                              [](auto&, auto v) { return probe(ad::relu(v)); }));
  checks.push_back(make_check("sigmoid", random_tensor({1, 2, 4, 4}, rng, -4.0, 4.0),
                              [](auto&, auto v) { return probe(ad::sigmoid(v)); }));
  {
    const Tensor<float> target = binary_tensor({2, 1, 4, 4}, rng);
    checks.push_back(make_check("bce", random_tensor({2, 1, 4, 4}, rng, 0.05, 0.95), [=](auto& g, auto v) {
      using T = typename std::decay_t<decltype(g)>::value_type;
      return ad::bce(v, target.template cast<T>());
    }));
    checks.push_back(make_check("bce of sigmoid", random_tensor({2, 1, 4, 4}, rng, -3.0, 3.0), [=](auto& g, auto v) {
      using T = typename std::decay_t<decltype(g)>::value_type;
      return ad::bce(ad::sigmoid(v), target.template cast<T>());
    }));
  }
  return checks;
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt = {}) {
  Rng rng(derive_seed(opt.seed, 0x67c));
  std::vector<GradCheckResult> out;
  for (const auto& c : detail::kernel_checks(rng)) detail::run_check(c, opt.eps, out);

  {
    const InceptionConfig cfg{4, 8, 2};
    const ParameterSet<float> p32 = init_inception_parameters<float>(cfg, "blk", derive_seed(opt.seed, 0x1c));
    auto ps32 = std::make_shared<ParameterSet<float>>(p32);
    auto ps64 = std::make_shared<ParameterSet<double>>(p32.cast<double>());
    auto f = [=](auto& g, auto v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(g)>, Graph<float>>) {
        return detail::probe(ad::inception_block(v, cfg, *ps32, "blk"));
      } else {
        return detail::probe(ad::inception_block(v, cfg, *ps64, "blk"));
      }
    };
    const Tensor<float> xin = detail::random_tensor({1, 4, 12, 12}, rng);
    detail::run_check(detail::make_check("inception_block input", xin, f), opt.eps, out);
    for (const char* name : {"blk.c1.w", "blk.d.w"}) {
      auto loss = [&](auto& g) {
        using T = typename std::decay_t<decltype(g)>::value_type;
        return f(g, g.constant(xin.cast<T>()));
      };
      Parameter<double>& pd = ps64->at(name);
      out.push_back({std::string("inception_block ") + name, "shadow",
                     grad_check_parameter(loss, pd, opt.eps, opt.parameter_limit), kShadowTolerance});
      out.push_back({std::string("inception_block ") + name, "32-bit",
                     grad_check_parameter_mixed(loss, ps32->at(name), pd, opt.eps, opt.parameter_limit),
                     kFloatTolerance});
    }
  }

  if (opt.include_model) {
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = opt.model_size;
    auto m32 = std::make_shared<BifurcatedModel<float>>(cfg, derive_seed(opt.seed, 0x3d));
    auto m64 = std::make_shared<BifurcatedModel<double>>(m32->cast<double>());
    const SliceSample s = synth_phantom_one(opt.model_size, opt.seed, 0);
    const Tensor<float> lung = s.lung_mask, inf = s.infection_mask;
    auto objective = [=](auto& g, auto v) {
      using T = typename std::decay_t<decltype(g)>::value_type;
      auto run = [&](auto& model) {
        auto o = ad::model_forward(v, model);
        return ad::total_loss(ad::bce(o.lung, lung.template cast<T>()), ad::bce(o.aux, inf.template cast<T>()),
                              ad::bce(o.final, inf.template cast<T>()), cfg.loss_weights);
      };
      if constexpr (std::is_same_v<T, float>) {
        return run(*m32);
      } else {
        return run(*m64);
      }
    };
    const std::string label = "full model 1x1x" + std::to_string(opt.model_size) + "x" + std::to_string(opt.model_size);
    detail::run_check(detail::make_check(label + " input", s.image, objective), opt.model_eps, out);
    for (const char* name : {"enc0.b1.w", "enc.bottleneck2.w", "inf.head.c2.w", "lung.out.b", "fcn.conv1.w", "fcn.out.w"}) {
      auto loss = [&](auto& g) {
        using T = typename std::decay_t<decltype(g)>::value_type;
        return objective(g, g.constant(s.image.template cast<T>()));
      };
      Parameter<double>& pd = m64->params().at(name);
      out.push_back({label + " " + name, "shadow", grad_check_parameter(loss, pd, opt.model_eps, opt.parameter_limit),
                     kShadowTolerance});
      out.push_back({label + " " + name, "32-bit",
                     grad_check_parameter_mixed(loss, m32->params().at(name), pd, opt.model_eps, opt.parameter_limit),
                     kFloatTolerance});
    }
  }
  return out;
}

inline bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed()) return false;
  return true;
}

}  // namespace bifseg
