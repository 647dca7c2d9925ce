#pragma once

#include "bifseg/blocks.hpp"
#include "bifseg/data.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace bifseg;

inline ModelConfig tiny_config(std::size_t size = 16) {
  ModelConfig c;
  c.levels = 1;
  c.base_channels = 4;
  c.fcn_channels = 4;
  c.input_h = c.input_w = size;
  return c;
}

// Hand-set weights: the lung decoder saturates to 1 so the gate is open
// everywhere, and the head passes the image channel through 1x1-style taps
// into sigmoid(20 x - 10) (or a constant near 0 when `silent`). On images
// equal to the infection mask the final map thresholds to the mask exactly.
inline BifurcatedModel<float> exact_model(const ModelConfig& cfg, bool silent = false) {
  BifurcatedModel<float> m(cfg, 0);
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& v = ps.entry(i).param.value;
    v = Tensor<float>(v.shape());
  }
  ps.at("lung.out.b").value[0] = 10.0f;
  auto& c1 = ps.at("fcn.conv1.w").value;  // (f, 2, 3, 3)
  c1.at(0, 0, 1, 1) = 1.0f;
  auto& c2 = ps.at("fcn.conv2.w").value;  // (f, f, 3, 3)
  c2.at(0, 0, 1, 1) = 1.0f;
  ps.at("fcn.out.w").value[0] = silent ? 0.0f : 20.0f;
  ps.at("fcn.out.b").value[0] = -10.0f;
  return m;
}

// Slices whose image is their own infection mask.
inline std::vector<SliceSample> mask_images(std::size_t count, std::size_t size, std::uint32_t seed) {
  std::vector<SliceSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Shape s{1, 1, size, size};
    const auto inf = oracle::random_mask(s, seed + static_cast<std::uint32_t>(i), 0.2);
    const Tensor<float> lung(s, 1.0f);
    out.push_back(make_sample(inf, lung, inf, "m" + std::to_string(i)));
  }
  return out;
}

}  // namespace fixtures
