#include <gtest/gtest.h>

#include "subfork/fusion.hpp"
#include "oracles.hpp"

using namespace subfork;

using namespace subfork::testing;

namespace {

Slice2D constant_plane(double value, int w = 2, int h = 2) {
  return Slice2D{w, h, Axis::axial, 0, std::vector<double>(static_cast<std::size_t>(w) * h, value)};
}

}  // namespace

TEST(LabelSlice, ArgmaxAboveThreshold) {
  std::vector<Slice2D> maps{constant_plane(0.2), constant_plane(0.9), constant_plane(0.1)};
  EXPECT_EQ(label_slice(maps, 0.3).values, std::vector<std::uint8_t>(4, 2));
}

TEST(LabelSlice, BelowThresholdIsBackground) {
  std::vector<Slice2D> maps{constant_plane(0.29), constant_plane(0.1)};
  EXPECT_EQ(label_slice(maps, 0.3).values, std::vector<std::uint8_t>(4, 0));
  maps[0] = constant_plane(0.3);
  EXPECT_EQ(label_slice(maps, 0.3).values, std::vector<std::uint8_t>(4, 1));
}

TEST(LabelSlice, TieGoesToSmallestTrack) {
  std::vector<Slice2D> maps{constant_plane(0.9), constant_plane(0.2), constant_plane(0.9)};
  EXPECT_EQ(label_slice(maps, 0.3).values, std::vector<std::uint8_t>(4, 1));
}

TEST(LabelSlice, Errors) {
  EXPECT_THROW(label_slice({}, 0.3), ValidationError);
  std::vector<Slice2D> maps{constant_plane(0.5), constant_plane(0.5, 3, 2)};
  EXPECT_THROW(label_slice(maps, 0.3), ShapeError);
}

TEST(Fusion, UnanimityIsIdentity) {
  Rng rng(1);
  const auto v = random_labels(rng, {7, 6, 5}, 4);
  FusionConfig cfg;
  EXPECT_EQ(fuse_directions(v, v, v, cfg).values(), v.values());
}

TEST(Fusion, MajorityOfThree) {
  auto a = make_label_volume({3, 3, 3}, 3), b = a, c = a;
  const auto i = a.index(1, 1, 1);
  for (auto [x, y, z] : std::vector<std::array<int, 3>>{{1, 1, 2}, {1, 2, 1}, {2, 1, 1}}) {
    a[i] = static_cast<std::uint8_t>(x);
    b[i] = static_cast<std::uint8_t>(y);
    c[i] = static_cast<std::uint8_t>(z);
    EXPECT_EQ(fuse_directions(a, b, c, FusionConfig{})[i], 1);
  }
}

TEST(Fusion, NoMajorityUsesPooledWindow) {
  auto a = make_label_volume({3, 3, 3}, 3), s = a, c = a;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) a.at(x, y, 1) = 2;
  a.at(1, 1, 1) = 1;
  s.at(1, 1, 1) = 3;
  // labels (1, 3, 0): counts 0:17, 1:1, 2:8, 3:1 -> background wins
  EXPECT_EQ(fuse_directions(a, s, c, FusionConfig{}).at(1, 1, 1), 0);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y) s.at(1, y, z) = 2;
  s.at(1, 1, 1) = 3;
  // counts 0:9, 1:1, 2:16, 3:1 -> 2
  EXPECT_EQ(fuse_directions(a, s, c, FusionConfig{}).at(1, 1, 1), 2);
}

TEST(Fusion, BruteForceCountsOnNoMajorityVoxels) {
  Rng rng(2);
  const Index3 dims{9, 8, 7};
  std::size_t checked = 0;
  while (checked < 1000) {
    const auto a = random_labels(rng, dims, 5), s = random_labels(rng, dims, 5), c = random_labels(rng, dims, 5);
    const auto f = fuse_directions(a, s, c, FusionConfig{});
    for (int z = 0; z < dims[2]; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
          const auto i = a.index(x, y, z);
          if (a[i] == s[i] || a[i] == c[i] || s[i] == c[i]) {
            EXPECT_EQ(f[i], a[i] == s[i] || a[i] == c[i] ? a[i] : s[i]);
            continue;
          }
          ASSERT_EQ(f[i], window_vote(window_counts(a, s, c, x, y, z), 5)) << x << "," << y << "," << z;
          ++checked;
        }
  }
}

TEST(Fusion, GmMaskOnlyRemoves) {
  Rng rng(3);
  const auto a = random_labels(rng, {6, 6, 6}, 3), s = random_labels(rng, {6, 6, 6}, 3),
             c = random_labels(rng, {6, 6, 6}, 3);
  FusionConfig plain;
  FusionConfig masked;
  auto gm = make_label_volume({6, 6, 6}, 10);
  for (std::size_t i = 0; i < gm.size(); ++i) gm[i] = i % 2 ? tissue::kGreyMatter : tissue::kWhiteMatter;
  masked.gm_mask = gm;
  const auto f0 = fuse_directions(a, s, c, plain), f1 = fuse_directions(a, s, c, masked);
  for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_EQ(f1[i], i % 2 ? f0[i] : 0);
}

TEST(Fusion, ConfigAndShapeErrors) {
  const auto v = make_label_volume({3, 3, 3}, 2);
  FusionConfig bad;
  bad.neighborhood = 2;
  EXPECT_THROW(fuse_directions(v, v, v, bad), ValidationError);
  bad = FusionConfig{};
  bad.epsilon = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(fuse_directions(v, v, make_label_volume({3, 3, 2}, 2), FusionConfig{}), ShapeError);
}

TEST(Fusion, ProbabilityPipelineEqualsManualComposition) {
  Rng rng(4);
  AxisProbabilities probs;
  for (auto& axis : probs.maps)
    for (int n = 0; n < 3; ++n) {
      auto m = make_scalar_volume({5, 6, 7});
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(0.01, 0.99);
      axis.push_back(m);
    }
  FusionConfig cfg;
  std::array<LabelVolume, 3> dirs;
  for (std::size_t a = 0; a < 3; ++a) {
    dirs[a] = make_label_volume({5, 6, 7}, 3);
    for (int k = 0; k < axis_extent(dirs[a].dims(), kAllAxes[a]); ++k) {
      std::vector<Slice2D> planes;
      for (const auto& m : probs.maps[a]) planes.push_back(extract_slice(m, kAllAxes[a], k));
      insert_slice(dirs[a], label_slice(planes, cfg.epsilon));
    }
  }
  EXPECT_EQ(probability_fuse_infer(probs, cfg), fuse_directions(dirs[0], dirs[1], dirs[2], cfg));
}

TEST(Fusion, ThresholdDominatesConstantMaps) {
  AxisProbabilities probs;
  for (auto& axis : probs.maps) axis.assign(2, make_scalar_volume({4, 4, 4}, {1, 1, 1}, DType::f64, 0.5));
  FusionConfig cfg;
  cfg.epsilon = 0.6;
  const auto f = probability_fuse_infer(probs, cfg);
  EXPECT_TRUE(std::all_of(f.values().begin(), f.values().end(), [](auto v) { return v == 0; }));
}
