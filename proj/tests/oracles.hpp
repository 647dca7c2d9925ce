#pragma once

// Slow reference implementations written directly from the definitions.
// They share nothing with the library beyond the Tensor container.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "bifseg/tensor.hpp"

namespace oracle {

using bifseg::Shape;
using bifseg::Tensor;

inline Tensor<float> random_tensor(Shape s, std::uint32_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

inline Tensor<float> random_mask(Shape s, std::uint32_t seed, double p = 0.5) {
  std::mt19937 gen(seed);
  std::bernoulli_distribution dist(p);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = dist(gen) ? 1.0f : 0.0f;
  return t;
}

// Cross-correlation by nested loops over every output pixel and tap.
inline Tensor<double> conv2d(const Tensor<float>& x, const Tensor<float>& w, const std::vector<float>& bias,
                             std::size_t stride, std::size_t dilation) {
  const long kh = static_cast<long>(w.h()), kw = static_cast<long>(w.w());
  const long ph = static_cast<long>(dilation) * (kh - 1) / 2, pw = static_cast<long>(dilation) * (kw - 1) / 2;
  const long h = static_cast<long>(x.h()), wd = static_cast<long>(x.w());
  const long oh = (h + 2 * ph - static_cast<long>(dilation) * (kh - 1) - 1) / static_cast<long>(stride) + 1;
  const long ow = (wd + 2 * pw - static_cast<long>(dilation) * (kw - 1) - 1) / static_cast<long>(stride) + 1;
  Tensor<double> out(Shape{x.n(), w.n(), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t co = 0; co < w.n(); ++co)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < x.c(); ++ci)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long iy = oy * static_cast<long>(stride) + ky * static_cast<long>(dilation) - ph;
                const long ix = ox * static_cast<long>(stride) + kx * static_cast<long>(dilation) - pw;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += static_cast<double>(x.at(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))) *
                       static_cast<double>(w.at(co, ci, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)));
              }
          out.at(b, co, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) = acc;
        }
  return out;
}

// Kernel with d-1 zero rows and columns inserted between taps.
inline Tensor<float> dilate_kernel(const Tensor<float>& w, std::size_t d) {
  Tensor<float> out(Shape{w.n(), w.c(), d * (w.h() - 1) + 1, d * (w.w() - 1) + 1});
  for (std::size_t a = 0; a < w.n(); ++a)
    for (std::size_t c = 0; c < w.c(); ++c)
      for (std::size_t y = 0; y < w.h(); ++y)
        for (std::size_t x = 0; x < w.w(); ++x) out.at(a, c, y * d, x * d) = w.at(a, c, y, x);
  return out;
}

inline Tensor<float> maxpool(const Tensor<float>& x, std::size_t k, std::size_t s) {
  Tensor<float> out(Shape{x.n(), x.c(), (x.h() - k) / s + 1, (x.w() - k) / s + 1});
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t oy = 0; oy < out.h(); ++oy)
        for (std::size_t ox = 0; ox < out.w(); ++ox) {
          float m = -std::numeric_limits<float>::infinity();
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) m = std::max(m, x.at(b, c, oy * s + dy, ox * s + dx));
          out.at(b, c, oy, ox) = m;
        }
  return out;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count_pixels(const Tensor<float>& pred, const Tensor<float>& gt) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5f, g = gt[i] > 0.5f;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

// Dice of thresholded predictions summed over all slices.
inline double dice_at(const std::vector<Tensor<float>>& probs, const std::vector<Tensor<float>>& gts, double t) {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < probs.size(); ++s)
    for (std::size_t i = 0; i < probs[s].size(); ++i) {
      const bool p = static_cast<double>(probs[s][i]) >= t, g = gts[s][i] == 1.0f;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace oracle
