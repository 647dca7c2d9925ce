#pragma once

// The bifurcated segmentation network: a shared encoder of multi-scale
// inception blocks, a lung decoder and an infection decoder reading the
// same skip tensors, and a fully convolutional head that fuses the input
// image with the infection probability map inside the binarized lung mask.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bifseg/autodiff.hpp"
#include "bifseg/loss.hpp"
#include "bifseg/rng.hpp"

namespace bifseg {

struct InceptionConfig {
  std::size_t c_in = 1;
  std::size_t c_out = 16;
  std::size_t d_rate = 1;  // dilation of the 5x5 and 9x9 branches

  std::size_t branch_width() const { return c_out / 4; }

  void validate() const {
    if (c_in == 0 || c_out == 0) throw ConfigError("inception channel counts must be positive");
    if (c_out % 4 != 0) throw ConfigError("inception c_out must be divisible by 4, got " + std::to_string(c_out));
    if (d_rate == 0) throw ConfigError("inception d_rate must be >= 1");
  }
};

struct ModelConfig {
  std::size_t levels = 3;          // encoder downsamplings
  std::size_t base_channels = 16;  // doubled per level
  std::size_t encoder_d_rate = 2;
  std::size_t decoder_end_d_rate = 1;
  std::size_t fcn_channels = 16;
  LossWeights loss_weights{};
  std::size_t input_h = 64;
  std::size_t input_w = 64;

  std::size_t level_channels(std::size_t level) const { return base_channels << level; }
  std::size_t bottom_channels() const { return levels == 0 ? base_channels : level_channels(levels); }
  std::size_t divisor() const { return std::size_t{1} << levels; }

  void validate() const {
    if (levels > 8) throw ConfigError("levels must be <= 8");
    if (base_channels == 0 || fcn_channels == 0) throw ConfigError("channel counts must be positive");
    if (base_channels % 4 != 0) {
      throw ConfigError("base_channels must be divisible by 4 (four inception branches), got " +
                        std::to_string(base_channels));
    }
    if (encoder_d_rate == 0 || decoder_end_d_rate == 0) throw ConfigError("d_rate values must be >= 1");
    if (decoder_end_d_rate > encoder_d_rate) throw ConfigError("decoder_end_d_rate must not exceed encoder_d_rate");
    loss_weights.validate();
    check_input(input_h, input_w);
  }

  void check_input(std::size_t h, std::size_t w) const {
    if (h == 0 || w == 0 || h % divisor() != 0 || w % divisor() != 0) {
      throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 2^levels = " +
                       std::to_string(divisor()));
    }
  }

  bool operator==(const ModelConfig& o) const {
    return levels == o.levels && base_channels == o.base_channels && encoder_d_rate == o.encoder_d_rate &&
           decoder_end_d_rate == o.decoder_end_d_rate && fcn_channels == o.fcn_channels &&
           loss_weights.lung == o.loss_weights.lung && loss_weights.aux == o.loss_weights.aux &&
           loss_weights.fin == o.loss_weights.fin && input_h == o.input_h && input_w == o.input_w;
  }
};

struct ParamSpec {
  std::string name;
  Shape shape;
};

namespace detail {

inline void add_conv(std::vector<ParamSpec>& out, const std::string& name, std::size_t cin, std::size_t cout,
                     std::size_t k) {
  out.push_back({name + ".w", Shape{cout, cin, k, k}});
  out.push_back({name + ".b", Shape{cout, 1, 1, 1}});
}

inline void add_inception(std::vector<ParamSpec>& out, const std::string& p, const InceptionConfig& cfg) {
  const std::size_t q = cfg.branch_width();
  add_conv(out, p + ".a1", cfg.c_in, q, 3);
  add_conv(out, p + ".a2", q, q, 3);
  add_conv(out, p + ".b1", cfg.c_in, q, 5);
  add_conv(out, p + ".b2", q, q, 5);
  add_conv(out, p + ".c1", cfg.c_in, q, 9);
  add_conv(out, p + ".c2", q, q, 9);
  add_conv(out, p + ".d", cfg.c_in, q, 1);
}

inline InceptionConfig encoder_block(const ModelConfig& cfg, std::size_t level) {
  return {level == 0 ? 1 : cfg.level_channels(level - 1), cfg.level_channels(level), cfg.encoder_d_rate};
}

inline InceptionConfig decoder_head(const ModelConfig& cfg, std::size_t d_rate) {
  return {cfg.base_channels, cfg.base_channels, d_rate};
}

inline void add_decoder(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  for (std::size_t i = cfg.levels; i-- > 0;) {
    const std::size_t ch = cfg.level_channels(i);
    const std::size_t prev = i + 1 == cfg.levels ? cfg.bottom_channels() : cfg.level_channels(i + 1);
    const std::string s = std::to_string(i);
    add_conv(out, p + ".up" + s, prev, ch, 3);
    add_conv(out, p + ".conv" + s + "a", 2 * ch, ch, 3);
    add_conv(out, p + ".conv" + s + "b", ch, ch, 3);
  }
  add_inception(out, p + ".head", decoder_head(cfg, cfg.decoder_end_d_rate));
  add_conv(out, p + ".out", cfg.base_channels, 1, 1);
}

}  // namespace detail

inline void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw SpecError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& prob, double threshold) {
  check_threshold(threshold);
  Tensor<T> out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = static_cast<double>(prob[i]) >= threshold ? T(1) : T(0);
  return out;
}

// Ordered name/shape list of every trainable tensor for a configuration.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  if (cfg.levels == 0) {
    detail::add_inception(out, "enc0", detail::encoder_block(cfg, 0));
  } else {
    for (std::size_t i = 0; i < cfg.levels; ++i) {
      detail::add_inception(out, "enc" + std::to_string(i), detail::encoder_block(cfg, i));
    }
    detail::add_conv(out, "enc.bottleneck1", cfg.level_channels(cfg.levels - 1), cfg.bottom_channels(), 3);
    detail::add_conv(out, "enc.bottleneck2", cfg.bottom_channels(), cfg.bottom_channels(), 3);
  }
  detail::add_decoder(out, "lung", cfg);
  detail::add_decoder(out, "inf", cfg);
  detail::add_conv(out, "fcn.conv1", 2, cfg.fcn_channels, 3);
  detail::add_conv(out, "fcn.conv2", cfg.fcn_channels, cfg.fcn_channels, 3);
  detail::add_conv(out, "fcn.out", cfg.fcn_channels, 1, 1);
  return out;
}

namespace detail {

// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out)) with
// fan = channels * kh * kw), zero biases. Each tensor draws from its own
// stream derived from (seed, position).
template <typename T>
ParameterSet<T> init_from_layout(const std::vector<ParamSpec>& layout, std::uint64_t seed) {
  ParameterSet<T> ps;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout[i];
    Tensor<T> t(spec.shape);
    if (spec.name.back() == 'w') {
      const double fan_in = static_cast<double>(spec.shape.c * spec.shape.h * spec.shape.w);
      const double fan_out = static_cast<double>(spec.shape.n * spec.shape.h * spec.shape.w);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      Rng rng(derive_seed(seed, i));
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    }
    ps.add(spec.name, std::move(t));
  }
  return ps;
}

}  // namespace detail

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return detail::init_from_layout<T>(parameter_layout(cfg), seed);
}

template <typename T>
class BifurcatedModel {
 public:
  BifurcatedModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), params_(init_parameters<T>(cfg, seed)) {}

  // Adopts existing parameters; names, order and shapes must match the
  // configuration's layout.
  BifurcatedModel(ModelConfig cfg, ParameterSet<T> params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    const auto layout = parameter_layout(cfg_);
    if (layout.size() != params_.size()) {
      throw ConfigError("parameter count " + std::to_string(params_.size()) + " does not match model layout (" +
                        std::to_string(layout.size()) + ")");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& e = params_.entry(i);
      if (e.name != layout[i].name || e.param.value.shape() != layout[i].shape) {
        throw ConfigError("parameter " + std::to_string(i) + " '" + e.name + "' " + e.param.value.shape().str() +
                          " does not match expected '" + layout[i].name + "' " + layout[i].shape.str());
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  template <typename U>
  BifurcatedModel<U> cast() const {
    return BifurcatedModel<U>(cfg_, params_.template cast<U>());
  }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
};

namespace ad {

template <typename T>
Var<T> conv_layer(Var<T> x, ParameterSet<T>& ps, const std::string& name, const ConvSpec& spec) {
  Graph<T>& g = *x.graph;
  return conv2d(x, g.param(ps.at(name + ".w")), g.param(ps.at(name + ".b")), spec);
}

template <typename T>
Var<T> conv_relu(Var<T> x, ParameterSet<T>& ps, const std::string& name, const ConvSpec& spec) {
  return relu(conv_layer(x, ps, name, spec));
}

// Four parallel branches on x, each c_out/4 wide with ReLU after every conv:
//   a: 3x3 -> 3x3            (dilation 1)
//   b: 5x5 -> 5x5            (dilation d_rate)
//   c: 9x9 -> 9x9            (dilation d_rate)
//   d: 7x7 max-pool stride 1 -> 1x1
// concatenated along channels in that order.
template <typename T>
Var<T> inception_block(Var<T> x, const InceptionConfig& cfg, ParameterSet<T>& ps, const std::string& prefix) {
  cfg.validate();
  if (x.value().c() != cfg.c_in) {
    throw ShapeError("inception '" + prefix + "' expects " + std::to_string(cfg.c_in) + " input channels, got " +
                     std::to_string(x.value().c()));
  }
  const ConvSpec k3 = ConvSpec::square(3);
  const ConvSpec k5 = ConvSpec::square(5, cfg.d_rate);
  const ConvSpec k9 = ConvSpec::square(9, cfg.d_rate);
  Var<T> a = conv_relu(conv_relu(x, ps, prefix + ".a1", k3), ps, prefix + ".a2", k3);
  Var<T> b = conv_relu(conv_relu(x, ps, prefix + ".b1", k5), ps, prefix + ".b2", k5);
  Var<T> c = conv_relu(conv_relu(x, ps, prefix + ".c1", k9), ps, prefix + ".c2", k9);
  Var<T> d = conv_relu(maxpool2d(x, 7, 1, true), ps, prefix + ".d", ConvSpec::square(1));
  return concat_channels<T>({a, b, c, d});
}

template <typename T>
struct EncoderOutput {
  Var<T> bottom;
  std::vector<Var<T>> skips;  // shallow to deep, pre-pool
};

template <typename T>
EncoderOutput<T> encoder_forward(Var<T> image, BifurcatedModel<T>& model) {
  const ModelConfig& cfg = model.config();
  auto& ps = model.params();
  if (image.value().c() != 1) throw ShapeError("encoder expects a single-channel image");
  cfg.check_input(image.value().h(), image.value().w());
  EncoderOutput<T> out;
  if (cfg.levels == 0) {
    out.bottom = inception_block(image, detail::encoder_block(cfg, 0), ps, "enc0");
    return out;
  }
  Var<T> x = image;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    Var<T> f = inception_block(x, detail::encoder_block(cfg, i), ps, "enc" + std::to_string(i));
    out.skips.push_back(f);
    x = maxpool2d(f, 2, 2, false);
  }
  const ConvSpec k3 = ConvSpec::square(3);
  out.bottom = conv_relu(conv_relu(x, ps, "enc.bottleneck1", k3), ps, "enc.bottleneck2", k3);
  return out;
}

// U-Net style decoder: per level (deep to shallow) upsample x2, 3x3 conv,
// concatenate the matching skip, two 3x3 convs; then an inception block
// with `head_d_rate`, a 1x1 conv and a sigmoid.
template <typename T>
Var<T> decoder_forward(Var<T> bottom, const std::vector<Var<T>>& skips, std::size_t head_d_rate,
                       BifurcatedModel<T>& model, const std::string& prefix) {
  const ModelConfig& cfg = model.config();
  auto& ps = model.params();
  if (skips.size() != cfg.levels) {
    throw ShapeError("decoder '" + prefix + "' expects " + std::to_string(cfg.levels) + " skips, got " +
                     std::to_string(skips.size()));
  }
  const ConvSpec k3 = ConvSpec::square(3);
  Var<T> x = bottom;
  for (std::size_t i = cfg.levels; i-- > 0;) {
    const std::string s = std::to_string(i);
    Var<T> up = conv_relu(upsample_nearest(x, 2), ps, prefix + ".up" + s, k3);
    const Shape& us = up.value().shape();
    const Shape& ss = skips[i].value().shape();
    if (us.n != ss.n || us.h != ss.h || us.w != ss.w) {
      throw ShapeError("decoder '" + prefix + "' level " + s + ": upsampled " + us.str() + " vs skip " + ss.str());
    }
    x = concat_channels<T>({up, skips[i]});
    x = conv_relu(conv_relu(x, ps, prefix + ".conv" + s + "a", k3), ps, prefix + ".conv" + s + "b", k3);
  }
  x = inception_block(x, detail::decoder_head(cfg, head_d_rate), ps, prefix + ".head");
  return sigmoid(conv_layer(x, ps, prefix + ".out", ConvSpec::square(1)));
}

// Not differentiable; the node keeps provenance only.
template <typename T>
Var<T> binarize(Var<T> prob, double threshold) {
  Var<T> out = prob.graph->record(bifseg::binarize(prob.value(), threshold), {prob.id}, nullptr, "binarize", false);
  prob.graph->set_pattern(out.id, detail::positive_bits(out.value()));
  return out;
}

template <typename T>
struct FcnOutput {
  Var<T> gated;  // concat(image, infection_prob) * lung_binary
  Var<T> prob;
};

template <typename T>
FcnOutput<T> fcn_head(Var<T> image, Var<T> infection_prob, Var<T> lung_binary, BifurcatedModel<T>& model) {
  const Shape& s = image.value().shape();
  if (s.c != 1 || infection_prob.value().shape() != s || lung_binary.value().shape() != s) {
    throw ShapeError("fcn_head inputs must share shape (n,1,h,w): image " + s.str() + ", infection " +
                     infection_prob.value().shape().str() + ", lung " + lung_binary.value().shape().str());
  }
  auto& ps = model.params();
  const ConvSpec k3 = ConvSpec::square(3);
  FcnOutput<T> out;
  out.gated = mul(concat_channels<T>({image, infection_prob}), lung_binary);
  Var<T> x = conv_relu(conv_relu(out.gated, ps, "fcn.conv1", k3), ps, "fcn.conv2", k3);
  out.prob = sigmoid(conv_layer(x, ps, "fcn.out", ConvSpec::square(1)));
  return out;
}

template <typename T>
struct ModelOutputs {
  Var<T> lung;       // lung probability map
  Var<T> aux;        // infection probability map from the lower decoder
  Var<T> final;      // fused infection probability map
  Var<T> lung_mask;  // stop_gradient(binarize(lung))
  Var<T> gated;      // FCN head input
};

template <typename T>
ModelOutputs<T> model_forward(Var<T> image, BifurcatedModel<T>& model, double lung_threshold = 0.5) {
  EncoderOutput<T> enc = encoder_forward(image, model);
  ModelOutputs<T> out;
  out.lung = decoder_forward(enc.bottom, enc.skips, model.config().decoder_end_d_rate, model, "lung");
  out.aux = decoder_forward(enc.bottom, enc.skips, model.config().decoder_end_d_rate, model, "inf");
  out.lung_mask = stop_gradient(binarize(out.lung, lung_threshold));
  FcnOutput<T> head = fcn_head(image, out.aux, out.lung_mask, model);
  out.gated = head.gated;
  out.final = head.prob;
  return out;
}

}  // namespace ad

// Value-level wrappers running a forward pass without gradient tracking.

template <typename T>
Tensor<T> inception_block(const Tensor<T>& x, const InceptionConfig& cfg, ParameterSet<T>& ps,
                          const std::string& prefix) {
  Graph<T> g(false);
  return ad::inception_block(g.input(x), cfg, ps, prefix).value();
}

template <typename T>
struct Prediction {
  Tensor<T> lung;
  Tensor<T> aux;
  Tensor<T> final;
};

template <typename T>
Prediction<T> predict(BifurcatedModel<T>& model, const Tensor<T>& image, double lung_threshold = 0.5) {
  Graph<T> g(false);
  auto out = ad::model_forward(g.input(image), model, lung_threshold);
  return {out.lung.value(), out.aux.value(), out.final.value()};
}

// Inception parameters in their own set, for exercising a standalone block.
template <typename T>
ParameterSet<T> init_inception_parameters(const InceptionConfig& cfg, const std::string& prefix, std::uint64_t seed) {
  cfg.validate();
  std::vector<ParamSpec> layout;
  detail::add_inception(layout, prefix, cfg);
  return detail::init_from_layout<T>(layout, seed);
}

}  // namespace bifseg
