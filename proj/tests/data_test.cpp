#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "bifseg/data.hpp"
#include "bifseg/formats.hpp"
#include "oracles.hpp"

using namespace bifseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bifseg_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("vol" + std::to_string(i));
  return out;
}

}  // namespace

TEST(Resize, IdentityWhenSizeMatches) {
  const auto img = oracle::random_tensor(Shape{1, 1, 7, 5}, 1);
  EXPECT_EQ(resize_image(img, 7, 5), img);
  const auto mask = oracle::random_mask(Shape{1, 1, 7, 5}, 2);
  EXPECT_EQ(resize_mask(mask, 7, 5), mask);
}

TEST(Resize, ConstantStaysConstant) {
  const Tensor<float> img(Shape{1, 1, 5, 9}, 0.375f);
  const auto out = resize_image(img, 13, 4);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 13, 4}));
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.375f);
}

TEST(Resize, BilinearCornerAligned) {
  const Tensor<float> img(Shape{1, 1, 2, 2}, {0, 1, 1, 0});
  const auto out = resize_image(img, 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const double fy = y / 3.0, fx = x / 3.0;
      EXPECT_NEAR(out.at(0, 0, y, x), fx + fy - 2 * fx * fy, 1e-6) << y << "," << x;
    }
  EXPECT_EQ(out.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(out.at(0, 0, 0, 3), 1.0f);
  EXPECT_EQ(out.at(0, 0, 3, 0), 1.0f);
}

TEST(Resize, MaskStaysBinary) {
  const auto mask = oracle::random_mask(Shape{1, 1, 9, 11}, 3);
  for (auto [h, w] : {std::pair{4, 4}, {256, 256}, {17, 3}}) {
    const auto out = resize_mask(mask, h, w);
    EXPECT_EQ(out.shape(), (Shape{1, 1, std::size_t(h), std::size_t(w)}));
    EXPECT_TRUE(is_binary(out));
  }
  EXPECT_THROW(resize_mask(mask, 0, 4), SpecError);
  EXPECT_THROW(resize_image(mask, 4, 0), SpecError);
}

TEST(Normalize, RangeAndDegenerate) {
  const std::vector<float> hu{-1000, -200, 0, 400};
  const auto n = normalize_intensity(hu);
  EXPECT_EQ(n.front(), 0.0f);
  EXPECT_EQ(n.back(), 1.0f);
  EXPECT_NEAR(n[2], 1000.0 / 1400.0, 1e-7);
  const std::vector<float> flat(5, 3.0f);
  for (float v : normalize_intensity(flat)) EXPECT_EQ(v, 0.0f);
  const std::vector<float> bad{1.0f, NAN};
  EXPECT_THROW(normalize_intensity(bad), DataError);
}

TEST(Normalize, ExactEndpoints) {
  for (std::uint32_t s = 0; s < 50; ++s) {
    const auto t = oracle::random_tensor(Shape{1, 1, 6, 6}, s, -3000.0f, 3000.0f);
    const auto n = normalize_intensity(t);
    const auto [lo, hi] = std::minmax_element(n.data().begin(), n.data().end());
    EXPECT_EQ(*lo, 0.0f);
    EXPECT_EQ(*hi, 1.0f);
  }
}

TEST(Folds, TwentyVolumesFiveFolds) {
  const auto plan = split_folds(ids(20), 5, 42);
  std::set<std::string> seen;
  for (std::size_t f = 0; f < 5; ++f) {
    const auto test = plan.test_volumes(f);
    EXPECT_EQ(test.size(), 4u);
    for (const auto& v : test) EXPECT_TRUE(seen.insert(v).second);
  }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Folds, SizesDifferByAtMostOne) {
  const auto plan = split_folds(ids(23), 5, 1);
  std::size_t lo = 99, hi = 0;
  for (std::size_t f = 0; f < 5; ++f) {
    lo = std::min(lo, plan.test_volumes(f).size());
    hi = std::max(hi, plan.test_volumes(f).size());
  }
  EXPECT_LE(hi - lo, 1u);
}

TEST(Folds, Reproducible) {
  EXPECT_EQ(split_folds(ids(20), 5, 9).assignments, split_folds(ids(20), 5, 9).assignments);
  EXPECT_NE(split_folds(ids(20), 5, 9).assignments, split_folds(ids(20), 5, 10).assignments);
}

TEST(Folds, Errors) {
  EXPECT_THROW(split_folds(ids(4), 5, 0), ContractError);
  EXPECT_THROW(split_folds({"a", "b", "a"}, 2, 0), ContractError);
  EXPECT_THROW(split_folds(ids(4), 0, 0), ContractError);
}

TEST(Folds, PartitionKeepsVolumesTogether) {
  auto data = synth_phantom(10, 16, 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].volume_id = "v" + std::to_string(i / 2);
  const auto plan = split_folds(volume_ids(data), 5, 4);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto tt = fold_partition(data, plan, f);
    EXPECT_EQ(tt.train.size() + tt.test.size(), data.size());
    EXPECT_EQ(tt.test.size(), 2u);
    for (const auto& t : tt.test)
      for (const auto& r : tt.train) EXPECT_NE(t.volume_id, r.volume_id);
  }
}

TEST(Validation, HundredSlices) {
  const auto s = split_validation_indices(100, 0.12, 5);
  EXPECT_EQ(s.validation.size(), 12u);
  EXPECT_EQ(s.train.size(), 88u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(Validation, AverageTrainingFold) {
  EXPECT_EQ(split_validation_indices(2816, 0.12, 0).validation.size(), 338u);
}

TEST(Validation, ReproducibleAndChecked) {
  EXPECT_EQ(split_validation_indices(50, 0.12, 3).validation, split_validation_indices(50, 0.12, 3).validation);
  EXPECT_THROW(split_validation_indices(10, 0.0, 0), SpecError);
  EXPECT_THROW(split_validation_indices(10, 1.0, 0), SpecError);
  const std::vector<int> items{10, 11, 12, 13, 14, 15, 16, 17};
  auto [train, val] = split_validation(items, 0.25, 1);
  EXPECT_EQ(train.size(), 6u);
  EXPECT_EQ(val.size(), 2u);
}

TEST(Phantom, InfectionInsideLungs) {
  for (const auto& s : synth_phantom(32, 32, 2)) {
    EXPECT_FALSE(s.infection_outside_lung());
    EXPECT_TRUE(is_binary(s.lung_mask));
    EXPECT_TRUE(is_binary(s.infection_mask));
    for (float v : s.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Phantom, Deterministic) {
  const auto a = synth_phantom(6, 32, 7), b = synth_phantom(6, 32, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].lung_mask, b[i].lung_mask);
    EXPECT_EQ(a[i].infection_mask, b[i].infection_mask);
  }
}

TEST(Phantom, InfectedFraction) {
  std::size_t infected = 0;
  for (const auto& s : synth_phantom(64, 64, 1)) infected += s.has_infection;
  const double frac = static_cast<double>(infected) / 64.0;
  EXPECT_GE(frac, 0.5);
  EXPECT_LE(frac, 0.9);
}

TEST(Phantom, Errors) {
  EXPECT_THROW(synth_phantom(0, 32, 1), SpecError);
  EXPECT_THROW(synth_phantom(1, 4, 1), SpecError);
}

TEST(Manifest, ParsesAndSkipsComments) {
  std::istringstream in("# header\n\na.bsg1\tl.bsg1\ti.bsg1\tv1\nb.bsg1\tm.bsg1\tj.bsg1\tv2\n");
  const auto rows = parse_manifest(in);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].lung_mask_path, "m.bsg1");
  EXPECT_EQ(rows[1].volume_id, "v2");
}

TEST(Manifest, MissingFieldNamesLine) {
  std::istringstream in("# header\na\tb\tc\tv\na\tb\tc\n");
  try {
    parse_manifest(in, "m.tsv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.tsv:3"), std::string::npos) << e.what();
  }
  std::istringstream empty_field("a\t\tc\tv\n");
  EXPECT_THROW(parse_manifest(empty_field), DataError);
}

TEST(Manifest, LoadsRelativeToManifest) {
  const auto dir = fresh_dir("load");
  const auto s = synth_phantom_one(16, 3, 0);
  write_bsg1(s.image, dir / "img.bsg1");
  write_bsg1_mask(s.lung_mask, dir / "lung.bsg1");
  write_bsg1_mask(s.infection_mask, dir / "inf.bsg1");
  write_manifest(dir / "manifest.tsv", {{"img.bsg1", "lung.bsg1", "inf.bsg1", "p1"}});
  const auto data = load_dataset(dir / "manifest.tsv");
  ASSERT_EQ(data.size(), 1u);
  EXPECT_EQ(data[0].image, s.image);
  EXPECT_EQ(data[0].lung_mask, s.lung_mask);
  EXPECT_EQ(data[0].volume_id, "p1");
  EXPECT_EQ(data[0].has_infection, s.has_infection);
}

TEST(Manifest, RejectsNonBinaryMaskAndMissingFile) {
  const auto dir = fresh_dir("bad");
  write_bsg1(Tensor<float>(Shape{1, 1, 4, 4}, 0.5f), dir / "img.bsg1");
  write_bsg1(Tensor<float>(Shape{1, 1, 4, 4}, 0.5f), dir / "half.bsg1");
  write_manifest(dir / "m.tsv", {{"img.bsg1", "half.bsg1", "half.bsg1", "v"}});
  EXPECT_THROW(load_dataset(dir / "m.tsv"), DataError);
  write_manifest(dir / "m2.tsv", {{"img.bsg1", "nope.bsg1", "nope.bsg1", "v"}});
  EXPECT_THROW(load_dataset(dir / "m2.tsv"), FormatError);
}
