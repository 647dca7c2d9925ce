#pragma once

// Binary containers.
//
// BSG1 (one array):
//   "BSG1" | u8 dtype (0 = f32 LE, 1 = u8) | u8 ndims | ndims x u32 LE dims | row-major payload
//
// BSCK (named arrays):
//   "BSCK" | u32 LE count | count x ( u16 LE name length | name bytes | BSG1 )

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "bifseg/autodiff.hpp"
#include "bifseg/tensor.hpp"

namespace bifseg {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(context_ + ": truncated " + what + " (need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto b = take(2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }

  const std::string& context() const { return context_; }
  void set_context(std::string c) { context_ = std::move(c); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

inline void put_header(std::vector<std::uint8_t>& out, DType dtype, const Shape& s) {
  out.insert(out.end(), {'B', 'S', 'G', '1'});
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(4);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > 0xffffffffULL) throw FormatError("dimension exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
}

// Decodes one BSG1 array starting at the reader position.
inline Tensor<float> read_bsg1_from(Reader& r) {
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "BSG1", 4) != 0) throw FormatError(r.context() + ": bad magic (expected BSG1)");
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype > 1) {
    throw FormatError(r.context() + ": unsupported dtype " + std::to_string(dtype) +
                      " (expected 0 = float32 or 1 = uint8)");
  }
  const std::uint8_t ndims = r.u8("ndims");
  if (ndims == 0 || ndims > 4) {
    throw FormatError(r.context() + ": ndims " + std::to_string(ndims) + " outside 1..4");
  }
  std::size_t dims[4] = {1, 1, 1, 1};
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = r.u32("dims");
    if (d == 0) throw FormatError(r.context() + ": zero extent in dimension " + std::to_string(i));
    dims[4 - ndims + i] = d;
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t elem = dtype == 0 ? 4 : 1;
  auto payload = r.take(shape.numel() * elem, "payload");
  Tensor<float> t(shape);
  if (dtype == 0) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(payload[4 * i]) |
                                 (static_cast<std::uint32_t>(payload[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(payload[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(payload[4 * i + 3]) << 24);
      std::memcpy(&t[i], &bits, 4);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(payload[i]);
  }
  return t;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_bsg1(const Tensor<float>& t) {
  std::vector<std::uint8_t> out;
  out.reserve(22 + 4 * t.size());
  detail::put_header(out, DType::f32, t.shape());
  for (float v : t.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(out, bits);
  }
  return out;
}

// Byte mask container (dtype 1). Values must be 0 or 1.
inline std::vector<std::uint8_t> encode_bsg1_mask(const Tensor<float>& mask) {
  std::vector<std::uint8_t> out;
  out.reserve(22 + mask.size());
  detail::put_header(out, DType::u8, mask.shape());
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw DataError("mask value " + std::to_string(v) + " is not 0 or 1");
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

inline Tensor<float> decode_bsg1(std::span<const std::uint8_t> bytes, const std::string& context = "BSG1") {
  detail::Reader r(bytes, context);
  Tensor<float> t = detail::read_bsg1_from(r);
  if (r.remaining() != 0) {
    throw FormatError(context + ": " + std::to_string(r.remaining()) + " trailing bytes after payload");
  }
  return t;
}

inline void write_bsg1(const Tensor<float>& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_bsg1(t));
}

inline void write_bsg1_mask(const Tensor<float>& mask, const std::filesystem::path& path) {
  detail::write_file(path, encode_bsg1_mask(mask));
}

// Reads either dtype; byte arrays are widened to float. Arrays with fewer
// than four dimensions are right-aligned into (n, c, h, w).
inline Tensor<float> read_bsg1(const std::filesystem::path& path) {
  return decode_bsg1(detail::read_file(path), path.string());
}

inline std::vector<std::uint8_t> encode_bsck(const ParameterSet<float>& params) {
  std::vector<std::uint8_t> out{'B', 'S', 'C', 'K'};
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    if (e.name.empty() || e.name.size() > 0xffff) {
      throw FormatError("parameter name length " + std::to_string(e.name.size()) + " outside 1..65535");
    }
    detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const auto body = encode_bsg1(e.param.value);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

inline ParameterSet<float> decode_bsck(std::span<const std::uint8_t> bytes, const std::string& context = "BSCK") {
  detail::Reader r(bytes, context);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "BSCK", 4) != 0) throw FormatError(context + ": bad magic (expected BSCK)");
  const std::uint32_t count = r.u32("record count");
  ParameterSet<float> ps;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = context + ": record " + std::to_string(i);
    if (r.remaining() == 0) {
      throw FormatError(context + ": declares " + std::to_string(count) + " records but ends after " +
                        std::to_string(i));
    }
    r.set_context(where);
    const std::uint16_t len = r.u16("name length");
    if (len == 0) throw FormatError(where + ": empty name");
    auto name_bytes = r.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    Tensor<float> value = detail::read_bsg1_from(r);
    if (ps.contains(name)) throw FormatError(where + ": duplicate name '" + name + "'");
    ps.add(name, std::move(value));
  }
  r.set_context(context);
  if (r.remaining() != 0) {
    throw FormatError(context + ": " + std::to_string(r.remaining()) + " bytes after the declared " +
                      std::to_string(count) + " records");
  }
  return ps;
}

inline void save_checkpoint(const ParameterSet<float>& params, const std::filesystem::path& path) {
  detail::write_file(path, encode_bsck(params));
}

inline ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_bsck(detail::read_file(path), path.string());
}

}  // namespace bifseg
