#pragma once

// Slice datasets: manifest I/O, resizing, intensity normalization,
// volume-level fold plans, slice-level validation splits and a seeded
// synthetic lung phantom.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bifseg/formats.hpp"
#include "bifseg/rng.hpp"
#include "bifseg/tensor.hpp"

namespace bifseg {

struct SliceSample {
  Tensor<float> image;           // (1,1,h,w), intensities in [0,1]
  Tensor<float> lung_mask;       // (1,1,h,w), {0,1}
  Tensor<float> infection_mask;  // (1,1,h,w), {0,1}
  std::string volume_id;
  bool has_infection = false;

  std::size_t h() const { return image.h(); }
  std::size_t w() const { return image.w(); }

  // Infection pixels that fall outside the lung mask (allowed for real data).
  std::size_t infection_outside_lung() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < infection_mask.size(); ++i) {
      if (infection_mask[i] != 0.0f && lung_mask[i] == 0.0f) ++n;
    }
    return n;
  }
};

inline bool is_binary(const Tensor<float>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

inline SliceSample make_sample(Tensor<float> image, Tensor<float> lung, Tensor<float> infection, std::string volume_id) {
  const Shape s{1, 1, image.h(), image.w()};
  if (image.size() != s.numel() || lung.size() != s.numel() || infection.size() != s.numel() ||
      lung.h() != s.h || infection.h() != s.h) {
    throw ShapeError("slice arrays disagree: image " + image.shape().str() + ", lung " + lung.shape().str() +
                     ", infection " + infection.shape().str());
  }
  SliceSample out;
  out.image = image.reshaped(s);
  out.lung_mask = lung.reshaped(s);
  out.infection_mask = infection.reshaped(s);
  out.volume_id = std::move(volume_id);
  out.has_infection = std::any_of(out.infection_mask.data().begin(), out.infection_mask.data().end(),
                                  [](float v) { return v != 0.0f; });
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: one slice per line, tab-separated
//   image_path  lung_mask_path  infection_mask_path  volume_id
// Blank lines and lines starting with '#' are ignored. Relative paths are
// resolved against the manifest's directory.

struct ManifestRow {
  std::string image_path;
  std::string lung_mask_path;
  std::string infection_mask_path;
  std::string volume_id;
};

inline std::vector<ManifestRow> parse_manifest(std::istream& in, const std::string& name = "manifest") {
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const bool complete = fields.size() == 4 && std::none_of(fields.begin(), fields.end(),
                                                             [](const std::string& f) { return f.empty(); });
    if (!complete) {
      throw DataError(name + ":" + std::to_string(lineno) + ": expected 4 non-empty tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    rows.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  return rows;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << "# image\tlung_mask\tinfection_mask\tvolume_id\n";
  for (const auto& r : rows) {
    out << r.image_path << '\t' << r.lung_mask_path << '\t' << r.infection_mask_path << '\t' << r.volume_id << '\n';
  }
}

inline std::vector<SliceSample> load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError(manifest.string() + ": cannot open manifest");
  const auto rows = parse_manifest(in, manifest.string());
  const auto dir = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : dir / fp;
  };
  std::vector<SliceSample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    Tensor<float> image = read_bsg1(resolve(r.image_path));
    Tensor<float> lung = read_bsg1(resolve(r.lung_mask_path));
    Tensor<float> inf = read_bsg1(resolve(r.infection_mask_path));
    if (!image.all_finite()) throw DataError(r.image_path + ": image contains non-finite values");
    if (!is_binary(lung)) throw DataError(r.lung_mask_path + ": lung mask is not binary");
    if (!is_binary(inf)) throw DataError(r.infection_mask_path + ": infection mask is not binary");
    if (image.n() * image.c() != 1 || lung.shape() != image.shape() || inf.shape() != image.shape()) {
      throw DataError(r.image_path + ": image " + image.shape().str() + " and masks " + lung.shape().str() + " / " +
                      inf.shape().str() + " must be one slice of equal size");
    }
    out.push_back(make_sample(std::move(image), std::move(lung), std::move(inf), r.volume_id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resizing. Images use bilinear interpolation with corners aligned
// (output corner pixels sample input corner pixels); masks use nearest
// neighbour on the same grid so they stay binary.

namespace detail {

inline double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1 || in == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

inline void check_resize_target(std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw SpecError("resize target extents must be positive");
}

}  // namespace detail

inline Tensor<float> resize_image(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  detail::check_resize_target(out_h, out_w);
  if (image.h() == out_h && image.w() == out_w) return image;
  Tensor<float> out(Shape{image.n(), image.c(), out_h, out_w});
  for (std::size_t b = 0; b < image.n(); ++b) {
    for (std::size_t ch = 0; ch < image.c(); ++ch) {
      for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = detail::source_coord(y, image.h(), out_h);
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, image.h() - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
          const double sx = detail::source_coord(x, image.w(), out_w);
          const std::size_t x0 = static_cast<std::size_t>(sx);
          const std::size_t x1 = std::min(x0 + 1, image.w() - 1);
          const double fx = sx - static_cast<double>(x0);
          const double top = (1 - fx) * image.at(b, ch, y0, x0) + fx * image.at(b, ch, y0, x1);
          const double bot = (1 - fx) * image.at(b, ch, y1, x0) + fx * image.at(b, ch, y1, x1);
          out.at(b, ch, y, x) = static_cast<float>((1 - fy) * top + fy * bot);
        }
      }
    }
  }
  return out;
}

inline Tensor<float> resize_mask(const Tensor<float>& mask, std::size_t out_h, std::size_t out_w) {
  detail::check_resize_target(out_h, out_w);
  if (mask.h() == out_h && mask.w() == out_w) return mask;
  Tensor<float> out(Shape{mask.n(), mask.c(), out_h, out_w});
  for (std::size_t b = 0; b < mask.n(); ++b) {
    for (std::size_t ch = 0; ch < mask.c(); ++ch) {
      for (std::size_t y = 0; y < out_h; ++y) {
        const auto sy = static_cast<std::size_t>(std::lround(detail::source_coord(y, mask.h(), out_h)));
        for (std::size_t x = 0; x < out_w; ++x) {
          const auto sx = static_cast<std::size_t>(std::lround(detail::source_coord(x, mask.w(), out_w)));
          out.at(b, ch, y, x) = mask.at(b, ch, sy, sx) != 0.0f ? 1.0f : 0.0f;
        }
      }
    }
  }
  return out;
}

// Min-max scaling to [0,1] over the whole volume; a constant volume maps
// to zeros.
inline std::vector<float> normalize_intensity(std::span<const float> volume) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const double v = volume[i];
    if (!std::isfinite(v)) throw DataError("normalize_intensity: non-finite value at index " + std::to_string(i));
    if (i == 0 || v < lo) lo = v;
    if (i == 0 || v > hi) hi = v;
  }
  std::vector<float> out(volume.size(), 0.0f);
  if (hi == lo) return out;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(volume[i]) - lo) / (hi - lo));
  }
  return out;
}

inline Tensor<float> normalize_intensity(const Tensor<float>& volume) {
  return Tensor<float>(volume.shape(), normalize_intensity(volume.data()));
}

// ---------------------------------------------------------------------------
// Splits.

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::size_t>> assignments;  // volume id -> fold, input order

  std::size_t fold_of(const std::string& volume_id) const {
    for (const auto& [id, f] : assignments)
      if (id == volume_id) return f;
    throw ContractError("volume '" + volume_id + "' is not part of the fold plan");
  }

  std::vector<std::string> test_volumes(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
      if (f == fold) out.push_back(id);
    return out;
  }
};

// Seeded shuffle, then round-robin assignment of the shuffled order.
inline FoldPlan split_folds(const std::vector<std::string>& volume_ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("fold count must be positive");
  if (volume_ids.size() < k) {
    throw ContractError("need at least " + std::to_string(k) + " volumes for " + std::to_string(k) + " folds, got " +
                        std::to_string(volume_ids.size()));
  }
  std::vector<std::string> sorted = volume_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ContractError("volume ids must be unique");
  }
  std::vector<std::size_t> order(volume_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(order);
  std::vector<std::size_t> fold(volume_ids.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold[order[pos]] = pos % k;
  FoldPlan plan{k, seed, {}};
  for (std::size_t i = 0; i < volume_ids.size(); ++i) plan.assignments.emplace_back(volume_ids[i], fold[i]);
  return plan;
}

// Distinct volume ids in first-appearance order.
inline std::vector<std::string> volume_ids(const std::vector<SliceSample>& data) {
  std::vector<std::string> ids;
  for (const auto& s : data) {
    if (std::find(ids.begin(), ids.end(), s.volume_id) == ids.end()) ids.push_back(s.volume_id);
  }
  return ids;
}

struct TrainTest {
  std::vector<SliceSample> train;
  std::vector<SliceSample> test;
};

inline TrainTest fold_partition(const std::vector<SliceSample>& data, const FoldPlan& plan, std::size_t fold) {
  if (fold >= plan.k) throw ContractError("fold index " + std::to_string(fold) + " out of range");
  TrainTest out;
  for (const auto& s : data) (plan.fold_of(s.volume_id) == fold ? out.test : out.train).push_back(s);
  return out;
}

struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Slice-level split: round(fraction * n) seeded picks go to validation.
// Both index lists are ascending.
inline IndexSplit split_validation_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw SpecError("validation fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x7a1));
  rng.shuffle(order);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  IndexSplit out;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? out.validation : out.train).push_back(i);
  return out;
}

template <typename S>
std::pair<std::vector<S>, std::vector<S>> split_validation(const std::vector<S>& slices, double fraction,
                                                           std::uint64_t seed) {
  const IndexSplit idx = split_validation_indices(slices.size(), fraction, seed);
  std::pair<std::vector<S>, std::vector<S>> out;
  for (std::size_t i : idx.train) out.first.push_back(slices[i]);
  for (std::size_t i : idx.validation) out.second.push_back(slices[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic phantom: dark noisy background, two bright elliptical lungs and
// zero to three mid-intensity infection blobs clipped to the lungs. Sample i
// depends only on (seed, i, size).

struct PhantomStyle {
  float background = 0.1f;
  float lung = 0.8f;
  float infection = 0.45f;
  float noise = 0.03f;
};

inline SliceSample synth_phantom_one(std::size_t size, std::uint64_t seed, std::size_t index,
                                     const PhantomStyle& style = {}) {
  if (size < 8) throw SpecError("phantom size must be at least 8");
  Rng rng(derive_seed(seed, 0x9a47, index));
  const double s = static_cast<double>(size);
  struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
      const double u = (y - cy) / ry, v = (x - cx) / rx;
      return u * u + v * v <= 1.0;
    }
  };
  Ellipse lungs[2];
  for (int side = 0; side < 2; ++side) {
    lungs[side].cy = s * rng.uniform(0.46, 0.54);
    lungs[side].cx = s * (side == 0 ? rng.uniform(0.27, 0.33) : rng.uniform(0.67, 0.73));
    lungs[side].ry = s * rng.uniform(0.28, 0.36);
    lungs[side].rx = s * rng.uniform(0.13, 0.18);
  }
  const std::size_t n_inf = static_cast<std::size_t>(rng.below(4));
  std::vector<Ellipse> blobs;
  for (std::size_t i = 0; i < n_inf; ++i) {
    const Ellipse& host = lungs[rng.below(2)];
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = std::sqrt(rng.uniform(0.0, 1.0)) * 0.6;
    Ellipse b;
    b.cy = host.cy + rad * host.ry * std::sin(ang);
    b.cx = host.cx + rad * host.rx * std::cos(ang);
    b.ry = s * rng.uniform(0.04, 0.09);
    b.rx = s * rng.uniform(0.04, 0.09);
    blobs.push_back(b);
  }
  const Shape shape{1, 1, size, size};
  Tensor<float> image(shape), lung(shape), inf(shape);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      const bool in_lung = lungs[0].contains(py, px) || lungs[1].contains(py, px);
      bool in_inf = false;
      if (in_lung) {
        for (const auto& b : blobs) in_inf = in_inf || b.contains(py, px);
      }
      float v = in_inf ? style.infection : (in_lung ? style.lung : style.background);
      v += static_cast<float>(rng.uniform(-style.noise, style.noise));
      image.at(0, 0, y, x) = std::clamp(v, 0.0f, 1.0f);
      lung.at(0, 0, y, x) = in_lung ? 1.0f : 0.0f;
      inf.at(0, 0, y, x) = in_inf ? 1.0f : 0.0f;
    }
  }
  return make_sample(std::move(image), std::move(lung), std::move(inf), "synth" + std::to_string(index));
}

inline std::vector<SliceSample> synth_phantom(std::size_t count, std::size_t size, std::uint64_t seed) {
  if (count == 0) throw SpecError("phantom count must be at least 1");
  std::vector<SliceSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_phantom_one(size, seed, i));
  return out;
}

}  // namespace bifseg
