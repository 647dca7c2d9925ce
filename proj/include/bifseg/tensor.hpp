#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bifseg/error.hpp"

namespace bifseg {

// Extents of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

// Dense row-major rank-4 array. Every extent is at least one and the
// storage length always equals shape().numel().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(checked(shape)), data_(shape.numel(), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(checked(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor filled(Shape shape, T value) { return Tensor(shape, value); }
  static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }

  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) { return data_[index(b, ch, y, x)]; }
  T at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const { return data_[index(b, ch, y, x)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  // Contiguous (h, w) plane for one batch item and channel.
  std::span<const T> plane(std::size_t b, std::size_t ch) const {
    return std::span<const T>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }
  std::span<T> plane(std::size_t b, std::size_t ch) {
    return std::span<T>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  // Bitwise value equality (shape and every element).
  bool operator==(const Tensor& other) const = default;

 private:
  static Shape checked(Shape s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
      throw ShapeError("tensor extents must be positive, got " + s.str());
    }
    return s;
  }

  Shape shape_{};
  std::vector<T> data_;
};

// Convolution geometry. `dilation` is the spacing between kernel taps;
// padding is derived so that stride-1 output keeps the input extent.
struct ConvSpec {
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;

  static ConvSpec square(std::size_t k, std::size_t dilation = 1, std::size_t stride = 1) {
    return ConvSpec{k, k, stride, dilation};
  }

  std::size_t pad_h() const { return dilation * (kh - 1) / 2; }
  std::size_t pad_w() const { return dilation * (kw - 1) / 2; }

  void validate() const {
    if (kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0) {
      throw SpecError("convolution kernel must have odd positive extents, got " + std::to_string(kh) + "x" +
                      std::to_string(kw));
    }
    if (stride == 0) throw SpecError("convolution stride must be positive");
    if (dilation == 0) throw SpecError("convolution dilation must be positive");
  }

  std::size_t out_extent(std::size_t in, std::size_t k, std::size_t pad) const {
    const std::size_t span = dilation * (k - 1) + 1;
    if (in + 2 * pad < span) throw ShapeError("convolution window exceeds padded input extent");
    return (in + 2 * pad - span) / stride + 1;
  }
  std::size_t out_h(std::size_t in) const { return out_extent(in, kh, pad_h()); }
  std::size_t out_w(std::size_t in) const { return out_extent(in, kw, pad_w()); }
};

}  // namespace bifseg
