#pragma once

// Forward numeric kernels over rank-4 tensors, plus the adjoint kernels the
// autodiff layer needs. All kernels are single-threaded and deterministic.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <tuple>
#include <utility>
#include <span>
#include <vector>

#include "bifseg/tensor.hpp"

namespace bifseg {

namespace detail {

using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<RowMatD>;
using CMapD = Eigen::Map<const RowMatD>;
using StridedMapD = Eigen::Map<const RowMatD, 0, Eigen::OuterStride<>>;

// Unrolls one batch item into a (cin*kh*kw) x (oh*ow) column matrix, zero
// outside the input.
template <typename T>
void im2col(const Tensor<T>& x, std::size_t b, const ConvSpec& spec, std::size_t oh, std::size_t ow,
            std::vector<double>& col) {
  const std::size_t cin = x.c(), h = x.h(), w = x.w();
  const auto ph = static_cast<std::ptrdiff_t>(spec.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(spec.pad_w());
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const std::size_t p = oh * ow;
  col.assign(cin * spec.kh * spec.kw * p, 0.0);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* src = x.plane(b, ci).data();
    for (std::size_t ky = 0; ky < spec.kh; ++ky) {
      for (std::size_t kx = 0; kx < spec.kw; ++kx, ++row) {
        double* dst = col.data() + row * p;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * d - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * d - pw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src_row = src + iy * static_cast<std::ptrdiff_t>(w);
          double* dst_row = dst + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * s + dx;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst_row[ox] = static_cast<double>(src_row[ix]);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto an input plane set.
inline void col2im(const std::vector<double>& col, const ConvSpec& spec, std::size_t cin, std::size_t h,
                   std::size_t w, std::size_t oh, std::size_t ow, double* dst) {
  const auto ph = static_cast<std::ptrdiff_t>(spec.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(spec.pad_w());
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const std::size_t p = oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double* plane = dst + ci * h * w;
    for (std::size_t ky = 0; ky < spec.kh; ++ky) {
      for (std::size_t kx = 0; kx < spec.kw; ++kx, ++row) {
        const double* src = col.data() + row * p;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * d - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * d - pw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst_row = plane + iy * static_cast<std::ptrdiff_t>(w);
          const double* src_row = src + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * s + dx;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst_row[ix] += src_row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec) {
  spec.validate();
  if (weight.h() != spec.kh || weight.w() != spec.kw) {
    throw SpecError("weight kernel " + std::to_string(weight.h()) + "x" + std::to_string(weight.w()) +
                    " does not match conv spec " + std::to_string(spec.kh) + "x" + std::to_string(spec.kw));
  }
  if (x.c() != weight.c()) {
    throw ShapeError("conv2d input has " + std::to_string(x.c()) + " channels, weight expects " +
                     std::to_string(weight.c()));
  }
  if (!bias.empty() && bias.size() != weight.n()) {
    throw ShapeError("conv2d bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(weight.n()));
  }
}

// Valid output range [lo, hi) along one axis for tap offset `off`.
inline std::pair<std::size_t, std::size_t> tap_range(std::ptrdiff_t off, std::size_t out, std::size_t in) {
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out),
                                                     static_cast<std::ptrdiff_t>(in) - off);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct Tap {
  std::ptrdiff_t dy, dx;
  std::size_t y0, y1, x0, x1;
};

inline std::vector<Tap> stride1_taps(const ConvSpec& spec, std::size_t h, std::size_t w) {
  std::vector<Tap> taps;
  for (std::size_t ky = 0; ky < spec.kh; ++ky) {
    for (std::size_t kx = 0; kx < spec.kw; ++kx) {
      Tap t;
      t.dy = static_cast<std::ptrdiff_t>(ky * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_h());
      t.dx = static_cast<std::ptrdiff_t>(kx * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_w());
      std::tie(t.y0, t.y1) = tap_range(t.dy, h, h);
      std::tie(t.x0, t.x1) = tap_range(t.dx, w, w);
      taps.push_back(t);
    }
  }
  return taps;
}

// Shift-and-accumulate convolution for stride 1 (output extent == input
// extent). Cheaper than im2col when there are few output channels.
template <typename T>
void conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec,
                   Tensor<T>& out) {
  const std::size_t cin = x.c(), cout = weight.n(), h = x.h(), w = x.w(), p = h * w;
  const std::size_t ntap = spec.kh * spec.kw;
  const auto taps = stride1_taps(spec, h, w);
  std::vector<double> xd(p), acc(cout * p);
  for (std::size_t b = 0; b < x.n(); ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double bv = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
      std::fill(acc.begin() + co * p, acc.begin() + (co + 1) * p, bv);
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const auto src = x.plane(b, ci);
      for (std::size_t i = 0; i < p; ++i) xd[i] = static_cast<double>(src[i]);
      for (std::size_t t = 0; t < ntap; ++t) {
        const Tap& tp = taps[t];
        if (tp.y0 == tp.y1 || tp.x0 == tp.x1) continue;
        for (std::size_t co = 0; co < cout; ++co) {
          const double wv = static_cast<double>(weight[(co * cin + ci) * ntap + t]);
          double* a = acc.data() + co * p;
          for (std::size_t oy = tp.y0; oy < tp.y1; ++oy) {
            double* arow = a + oy * w;
            const double* srow = xd.data() + static_cast<std::ptrdiff_t>(oy) * static_cast<std::ptrdiff_t>(w) +
                                 tp.dy * static_cast<std::ptrdiff_t>(w) + tp.dx;
            for (std::size_t ox = tp.x0; ox < tp.x1; ++ox) arow[ox] += wv * srow[ox];
          }
        }
      }
    }
    T* dst = out.ptr() + b * cout * p;
    for (std::size_t i = 0; i < cout * p; ++i) dst[i] = static_cast<T>(acc[i]);
  }
}

template <typename T>
void conv2d_direct_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<double>& gd,
                            const ConvSpec& spec, std::vector<double>* dinput, std::vector<double>* dweight) {
  const std::size_t cin = x.c(), cout = weight.n(), h = x.h(), w = x.w(), p = h * w;
  const std::size_t ntap = spec.kh * spec.kw;
  const auto taps = stride1_taps(spec, h, w);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  std::vector<double> xd(p);
  for (std::size_t b = 0; b < x.n(); ++b) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      if (dweight != nullptr) {
        const auto src = x.plane(b, ci);
        for (std::size_t i = 0; i < p; ++i) xd[i] = static_cast<double>(src[i]);
      }
      double* dx = dinput != nullptr ? dinput->data() + (b * cin + ci) * p : nullptr;
      for (std::size_t t = 0; t < ntap; ++t) {
        const Tap& tp = taps[t];
        if (tp.y0 == tp.y1 || tp.x0 == tp.x1) continue;
        const std::ptrdiff_t shift = tp.dy * sw + tp.dx;
        for (std::size_t co = 0; co < cout; ++co) {
          const double* g = gd.ptr() + (b * cout + co) * p;
          const std::size_t widx = (co * cin + ci) * ntap + t;
          if (dweight != nullptr) {
            const auto rows = static_cast<Eigen::Index>(tp.y1 - tp.y0);
            const auto cols = static_cast<Eigen::Index>(tp.x1 - tp.x0);
            const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(w));
            StridedMapD gblock(g + tp.y0 * w + tp.x0, rows, cols, stride);
            StridedMapD xblock(xd.data() + static_cast<std::ptrdiff_t>(tp.y0 * w + tp.x0) + shift, rows, cols,
                               stride);
            (*dweight)[widx] += gblock.cwiseProduct(xblock).sum();
          }
          if (dx != nullptr) {
            const double wv = static_cast<double>(weight[widx]);
            for (std::size_t oy = tp.y0; oy < tp.y1; ++oy) {
              const double* grow = g + oy * w;
              double* drow = dx + static_cast<std::ptrdiff_t>(oy) * sw + shift;
              for (std::size_t ox = tp.x0; ox < tp.x1; ++ox) drow[ox] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

// The direct kernel wins when the GEMM would be thin (few output channels)
// relative to the unrolled column matrix.
inline bool use_direct(const ConvSpec& spec, std::size_t cout) { return spec.stride == 1 && cout <= 8; }

}  // namespace detail

// 2-D cross-correlation with zero padding p = dilation*(k-1)/2. Dot products
// accumulate in double; the result is stored in T.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec) {
  detail::check_conv_args(x, weight, bias, spec);
  const std::size_t cout = weight.n();
  const std::size_t k = weight.c() * spec.kh * spec.kw;
  const std::size_t oh = spec.out_h(x.h()), ow = spec.out_w(x.w());
  const std::size_t p = oh * ow;

  Tensor<T> out(Shape{x.n(), cout, oh, ow});
  if (detail::use_direct(spec, cout)) {
    detail::conv2d_direct(x, weight, bias, spec, out);
    return out;
  }
  const Tensor<double> wd = weight.template cast<double>();
  detail::CMapD wmat(wd.ptr(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));

  std::vector<double> col;
  detail::RowMatD result(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(p));
  for (std::size_t b = 0; b < x.n(); ++b) {
    detail::im2col(x, b, spec, oh, ow, col);
    detail::CMapD cmat(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    result.noalias() = wmat * cmat;
    for (std::size_t co = 0; co < cout; ++co) {
      const double bv = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
      T* dst = out.plane(b, co).data();
      for (std::size_t i = 0; i < p; ++i) dst[i] = static_cast<T>(result(co, i) + bv);
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::vector<T>& bias, const ConvSpec& spec) {
  return conv2d(x, weight, std::span<const T>(bias), spec);
}

template <typename T>
struct ConvGrads {
  std::optional<Tensor<T>> input;
  std::optional<Tensor<T>> weight;
  std::optional<Tensor<T>> bias;  // shape (cout,1,1,1)
};

// Adjoint of conv2d. Only the requested gradients are computed.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                             const ConvSpec& spec, bool want_input, bool want_weight, bool want_bias) {
  const std::size_t cout = weight.n();
  const std::size_t cin = weight.c();
  const std::size_t k = cin * spec.kh * spec.kw;
  const std::size_t oh = grad_out.h(), ow = grad_out.w();
  const std::size_t p = oh * ow;
  const auto ek = static_cast<Eigen::Index>(k), ep = static_cast<Eigen::Index>(p),
             ec = static_cast<Eigen::Index>(cout);

  ConvGrads<T> g;
  const Tensor<double> gd = grad_out.template cast<double>();
  if (want_bias) {
    Tensor<T> gb(Shape{cout, 1, 1, 1});
    for (std::size_t co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (std::size_t b = 0; b < x.n(); ++b) {
        for (double v : gd.plane(b, co)) acc += v;
      }
      gb[co] = static_cast<T>(acc);
    }
    g.bias = std::move(gb);
  }
  if (!want_input && !want_weight) return g;

  if (detail::use_direct(spec, cout)) {
    std::vector<double> dinput(want_input ? x.size() : 0, 0.0), dweight(want_weight ? weight.size() : 0, 0.0);
    detail::conv2d_direct_backward(x, weight, gd, spec, want_input ? &dinput : nullptr,
                                   want_weight ? &dweight : nullptr);
    if (want_weight) {
      Tensor<T> gwt(weight.shape());
      for (std::size_t i = 0; i < gwt.size(); ++i) gwt[i] = static_cast<T>(dweight[i]);
      g.weight = std::move(gwt);
    }
    if (want_input) {
      Tensor<T> gx(x.shape());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = static_cast<T>(dinput[i]);
      g.input = std::move(gx);
    }
    return g;
  }

  const Tensor<double> wd = weight.template cast<double>();
  detail::CMapD wmat(wd.ptr(), ec, ek);
  detail::RowMatD gw = detail::RowMatD::Zero(ec, ek);
  std::vector<double> col;
  std::vector<double> dinput;
  if (want_input) dinput.assign(x.size(), 0.0);
  const std::size_t in_stride = cin * x.h() * x.w();

  for (std::size_t b = 0; b < x.n(); ++b) {
    detail::CMapD gmat(gd.ptr() + b * cout * p, ec, ep);
    if (want_weight) {
      detail::im2col(x, b, spec, oh, ow, col);
      detail::CMapD cmat(col.data(), ek, ep);
      gw.noalias() += gmat * cmat.transpose();
    }
    if (want_input) {
      col.assign(k * p, 0.0);
      detail::MapD dcol(col.data(), ek, ep);
      dcol.noalias() = wmat.transpose() * gmat;
      detail::col2im(col, spec, cin, x.h(), x.w(), oh, ow, dinput.data() + b * in_stride);
    }
  }
  if (want_weight) {
    Tensor<T> gwt(weight.shape());
    for (std::size_t i = 0; i < gwt.size(); ++i) gwt[i] = static_cast<T>(gw.data()[i]);
    g.weight = std::move(gwt);
  }
  if (want_input) {
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = static_cast<T>(dinput[i]);
    g.input = std::move(gx);
  }
  return g;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index that produced each output element
};

// Max pooling. With same_padding (stride 1, odd k) the border is padded with
// -inf so padded taps never win. Ties resolve to the first element in
// row-major window order.
template <typename T>
PoolResult<T> maxpool2d_with_argmax(const Tensor<T>& x, std::size_t k, std::size_t stride, bool same_padding) {
  if (k == 0 || stride == 0) throw SpecError("maxpool2d requires k >= 1 and stride >= 1");
  if (same_padding && stride != 1) throw SpecError("maxpool2d same padding is only defined for stride 1");
  if (same_padding && k % 2 == 0) throw SpecError("maxpool2d same padding requires an odd window");
  const std::size_t pad = same_padding ? (k - 1) / 2 : 0;
  if (x.h() + 2 * pad < k || x.w() + 2 * pad < k) {
    throw ShapeError("maxpool2d window " + std::to_string(k) + " larger than padded input " + x.shape().str());
  }
  const std::size_t oh = (x.h() + 2 * pad - k) / stride + 1;
  const std::size_t ow = (x.w() + 2 * pad - k) / stride + 1;
  PoolResult<T> r{Tensor<T>(Shape{x.n(), x.c(), oh, ow}), {}};
  r.argmax.resize(r.output.size());
  const auto h = static_cast<std::ptrdiff_t>(x.h()), w = static_cast<std::ptrdiff_t>(x.w());
  std::size_t o = 0;
  for (std::size_t b = 0; b < x.n(); ++b) {
    for (std::size_t ch = 0; ch < x.c(); ++ch) {
      const std::size_t base = x.index(b, ch, 0, 0);
      const T* src = x.ptr() + base;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
          const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
          T best = -std::numeric_limits<T>::infinity();
          std::ptrdiff_t best_idx = -1;
          for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(y0, 0);
               yy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(k), h); ++yy) {
            for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(x0, 0);
                 xx < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(k), w); ++xx) {
              const T v = src[yy * w + xx];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = yy * w + xx;
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = static_cast<std::uint32_t>(base + static_cast<std::size_t>(best_idx));
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride, bool same_padding) {
  return maxpool2d_with_argmax(x, k, stride, same_padding).output;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                             const Tensor<T>& grad_out) {
  Tensor<T> gx(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  if (factor < 1) throw SpecError("upsample factor must be >= 1");
  if (factor == 1) return x;
  Tensor<T> out(Shape{x.n(), x.c(), x.h() * factor, x.w() * factor});
  for (std::size_t b = 0; b < x.n(); ++b) {
    for (std::size_t ch = 0; ch < x.c(); ++ch) {
      for (std::size_t y = 0; y < out.h(); ++y) {
        for (std::size_t xx = 0; xx < out.w(); ++xx) {
          out.at(b, ch, y, xx) = x.at(b, ch, y / factor, xx / factor);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& grad_out, std::size_t factor) {
  if (factor == 1) return grad_out;
  Tensor<T> gx(Shape{grad_out.n(), grad_out.c(), grad_out.h() / factor, grad_out.w() / factor});
  for (std::size_t b = 0; b < gx.n(); ++b) {
    for (std::size_t ch = 0; ch < gx.c(); ++ch) {
      for (std::size_t y = 0; y < gx.h(); ++y) {
        for (std::size_t xx = 0; xx < gx.w(); ++xx) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < factor; ++dy) {
            for (std::size_t dx = 0; dx < factor; ++dx) {
              acc += static_cast<double>(grad_out.at(b, ch, y * factor + dy, xx * factor + dx));
            }
          }
          gx.at(b, ch, y, xx) = static_cast<T>(acc);
        }
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw SpecError("concat_channels needs at least one part");
  const Shape& s0 = parts.front()->shape();
  std::size_t channels = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels mismatch: " + s.str() + " vs " + s0.str());
    }
    channels += s.c;
  }
  Tensor<T> out(Shape{s0.n, channels, s0.h, s0.w});
  const std::size_t plane = s0.h * s0.w;
  for (std::size_t b = 0; b < s0.n; ++b) {
    T* dst = out.ptr() + b * channels * plane;
    for (const auto* p : parts) {
      const T* src = p->ptr() + b * p->c() * plane;
      dst = std::copy(src, src + p->c() * plane, dst);
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels(ptrs);
}

// Channels [begin, end) of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.c()) throw ShapeError("slice_channels range out of bounds");
  Tensor<T> out(Shape{x.n(), end - begin, x.h(), x.w()});
  const std::size_t plane = x.h() * x.w();
  for (std::size_t b = 0; b < x.n(); ++b) {
    const T* src = x.ptr() + x.index(b, begin, 0, 0);
    std::copy(src, src + (end - begin) * plane, out.ptr() + out.index(b, 0, 0, 0));
  }
  return out;
}

enum class Elementwise { add, mul, relu, sigmoid };

namespace detail {

// b is either the same shape as a, or single-channel with matching n, h, w.
template <typename T>
bool channel_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return false;
  if (b.c() == 1 && b.n() == a.n() && b.h() == a.h() && b.w() == a.w()) return true;
  throw ShapeError("elementwise shapes incompatible: " + a.shape().str() + " vs " + b.shape().str());
}

template <typename T, typename Op>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Op op) {
  Tensor<T> out(a.shape());
  if (!channel_broadcast(a, b)) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
  }
  const std::size_t plane = a.h() * a.w();
  for (std::size_t bi = 0; bi < a.n(); ++bi) {
    const T* mb = b.ptr() + bi * plane;
    for (std::size_t ch = 0; ch < a.c(); ++ch) {
      const std::size_t off = a.index(bi, ch, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = op(a[off + i], mb[i]);
    }
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return out;
}

// Logistic function, kept strictly inside (0, 1) even where T would round
// to an endpoint.
template <typename T>
T sigmoid_scalar(T x) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  const T s = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
  return std::clamp(s, lo, hi);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid_scalar(a[i]);
  return out;
}

template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
  switch (kind) {
    case Elementwise::add:
    case Elementwise::mul:
      if (b == nullptr) throw SpecError("binary elementwise op requires a second operand");
      return kind == Elementwise::add ? add(a, *b) : mul(a, *b);
    case Elementwise::relu:
    case Elementwise::sigmoid:
      if (b != nullptr) throw SpecError("unary elementwise op given a second operand");
      return kind == Elementwise::relu ? relu(a) : sigmoid(a);
  }
  throw SpecError("unknown elementwise kind");
}

}  // namespace bifseg
