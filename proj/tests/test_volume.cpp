#include <gtest/gtest.h>

#include <filesystem>

#include "subfork/phantom.hpp"
#include "support.hpp"

using namespace subfork;
using subfork::testing::scratch_dir;

namespace {

ScalarVolume ramp(Index3 dims) {
  auto v = make_scalar_volume(dims);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) v.at(x, y, z) = x + 10 * y + 100 * z;
  return v;
}

std::string with_header(const std::string& header_json, const std::string& payload) {
  return header_json + "\n" + payload;
}

}  // namespace

TEST(VolumeHeader, RejectsBadGeometry) {
  EXPECT_THROW(make_scalar_volume({0, 2, 2}), ValidationError);
  EXPECT_THROW(make_scalar_volume({2, 2, 2}, {1, 0, 1}), ValidationError);
  EXPECT_THROW(make_label_volume({2, 2, 2}, 0), ValidationError);
  VolumeHeader h{{2, 2, 2}, {1, 1, 1}, DType::f32, VolumeKind::label, 3};
  EXPECT_THROW(h.validate(), ValidationError);
  EXPECT_THROW(ScalarVolume(VolumeHeader{}, std::vector<double>(2)), ShapeError);
}

TEST(VolumeIO, ZeroF32RoundTrip) {
  const auto dir = scratch_dir("vol_zero");
  const auto v = make_scalar_volume({4, 4, 4}, {1, 1, 1}, DType::f32);
  save_volume((dir / "z.vvol").string(), v);
  EXPECT_EQ(load_scalar((dir / "z.vvol").string()), v);
}

TEST(VolumeIO, EveryDtypeIsByteStable) {
  const auto dir = scratch_dir("vol_dtypes");
  Rng rng(5);
  for (DType t : {DType::u8, DType::i16, DType::f32, DType::f64}) {
    auto v = make_scalar_volume({3, 4, 5}, {0.5, 1.0, 2.5}, t);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(0, 200);
    const auto path = (dir / ("v_" + to_string(t) + ".vvol")).string();
    save_volume(path, v);
    const auto bytes = detail::read_file(path);
    const auto back = load_scalar(path);
    EXPECT_EQ(encode_volume(back), bytes) << to_string(t);
    if (t == DType::f64) {
      EXPECT_EQ(back, v);
    }
  }
  auto l = make_label_volume({2, 3, 4}, 9, {1, 2, 3});
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(i % 10);
  save_volume((dir / "l.vvol").string(), l);
  EXPECT_EQ(load_labels((dir / "l.vvol").string()), l);
}

TEST(VolumeIO, TruncatedPayloadIsFormatError) {
  const std::string h =
      R"({"format":"vvol","version":1,"kind":"scalar","dtype":"f64","dims":[2,2,2],"spacing":[1,1,1],"n_labels":0})";
  EXPECT_THROW(decode_volume(with_header(h, std::string(7 * 8, '\0'))), FormatError);
  EXPECT_NO_THROW(decode_volume(with_header(h, std::string(8 * 8, '\0'))));
}

TEST(VolumeIO, MalformedHeaderIsFormatError) {
  EXPECT_THROW(decode_volume("no newline here"), FormatError);
  EXPECT_THROW(decode_volume("{not json\n"), FormatError);
  EXPECT_THROW(decode_volume(R"({"format":"vvol","kind":"scalar","dtype":"f64","dims":[2,2],"spacing":[1,1,1]})"
                             "\n"),
               FormatError);
  EXPECT_THROW(decode_volume(R"({"format":"vvol","kind":"label","dtype":"f32","dims":[1,1,1],"spacing":[1,1,1],"n_labels":2})"
                             "\n\0\0\0\0"),
               FormatError);
  EXPECT_THROW(load_volume("/nonexistent/file.vvol"), FormatError);
}

TEST(VolumeIO, LabelAboveNLabelsIsValidationError) {
  const std::string h =
      R"({"format":"vvol","version":1,"kind":"label","dtype":"u8","dims":[2,1,1],"spacing":[1,1,1],"n_labels":7})";
  EXPECT_THROW(decode_volume(with_header(h, std::string{'\x01', '\x09'})), ValidationError);
  EXPECT_NO_THROW(decode_volume(with_header(h, std::string{'\x01', '\x07'})));
}

TEST(VolumeIO, KindMismatchIsFormatError) {
  const auto dir = scratch_dir("vol_kind");
  save_volume((dir / "s.vvol").string(), make_scalar_volume({1, 1, 1}));
  EXPECT_THROW(load_labels((dir / "s.vvol").string()), FormatError);
}

TEST(Slicing, AxialPlaneHoldsIndexArithmetic) {
  const auto v = ramp({4, 5, 6});
  const auto p = extract_slice(v, Axis::axial, 3);
  ASSERT_EQ(p.width, 4);
  ASSERT_EQ(p.height, 5);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(p.at(i, j), i + 10 * j + 300);
}

TEST(Slicing, SagittalAndCoronalConventions) {
  const auto v = ramp({4, 5, 6});
  const auto s = extract_slice(v, Axis::sagittal, 2);  // fixed x
  EXPECT_EQ(s.width, 5);
  EXPECT_EQ(s.height, 6);
  EXPECT_EQ(s.at(3, 4), 2 + 30 + 400);
  const auto c = extract_slice(v, Axis::coronal, 1);  // fixed y
  EXPECT_EQ(c.width, 4);
  EXPECT_EQ(c.height, 6);
  EXPECT_EQ(c.at(3, 5), 3 + 10 + 500);
}

TEST(Slicing, InsertInvertsExtractOnEveryAxis) {
  const auto v = ramp({3, 4, 5});
  for (Axis a : kAllAxes) {
    auto w = make_scalar_volume(v.dims());
    for (int k = 0; k < axis_extent(v.dims(), a); ++k) insert_slice(w, extract_slice(v, a, k));
    EXPECT_EQ(w, v) << to_string(a);
  }
}

TEST(Slicing, SlicesPartitionTheVolume) {
  const auto v = ramp({3, 4, 5});
  for (Axis a : kAllAxes) {
    std::vector<double> seen;
    for (int k = 0; k < axis_extent(v.dims(), a); ++k) {
      const auto p = extract_slice(v, a, k);
      seen.insert(seen.end(), p.values.begin(), p.values.end());
    }
    std::vector<double> all(v.values());
    std::sort(seen.begin(), seen.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(seen, all);
  }
}

TEST(Slicing, OutOfRangeIndex) {
  const auto v = ramp({3, 4, 5});
  EXPECT_THROW(extract_slice(v, Axis::axial, 5), BoundsError);
  EXPECT_THROW(extract_slice(v, Axis::sagittal, -1), BoundsError);
  auto w = v;
  auto p = extract_slice(v, Axis::axial, 0);
  p.width = 2;
  EXPECT_THROW(insert_slice(w, p), ShapeError);
}

TEST(Mask, KeepsOnlySelectedLabels) {
  const auto v = ramp({3, 3, 3});
  auto mask = make_label_volume(v.dims(), 2);
  EXPECT_EQ(apply_mask(v, mask, {1}), make_scalar_volume(v.dims()));
  mask.at(1, 2, 0) = 1;
  const auto one = apply_mask(v, mask, {1});
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(one[i], i == v.index(1, 2, 0) ? v[i] : 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<std::uint8_t>(i % 3);
  EXPECT_EQ(apply_mask(v, mask, {0, 1, 2}), v);
  EXPECT_THROW(apply_mask(v, make_label_volume({3, 3, 2}, 1), {1}), ShapeError);
}

TEST(Embed, WritesShiftedDeepLabels) {
  auto base = make_label_volume({3, 3, 3}, 12);
  auto deep = make_label_volume({3, 3, 3}, 7);
  EXPECT_EQ(embed_labels(base, deep, 12).values(), base.values());
  deep.at(1, 1, 1) = 1;
  const auto e = embed_labels(base, deep, 13);
  EXPECT_EQ(e.at(1, 1, 1), 14);
  EXPECT_EQ(e.n_labels(), 20);
  EXPECT_EQ(embed_labels(e, deep, 13), e);
  EXPECT_THROW(embed_labels(base, deep, 250), ValidationError);
  EXPECT_THROW(embed_labels(base, make_label_volume({3, 3, 1}, 7), 12), ShapeError);
}

TEST(Phantom, ZeroNoiseEllipsoidIsExact) {
  PhantomSpec spec;
  spec.dims = {12, 12, 12};
  spec.background_mean = 10;
  spec.structures = {{1, "a", ShapeKind::ellipsoid, {6, 6, 6}, {4, 3, 2}, 80}};
  const auto [mri, labels] = make_phantom(spec, 1);
  std::size_t inside = 0;
  for (int z = 0; z < 12; ++z)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        const double q = std::pow((x + 0.5 - 6) / 4, 2) + std::pow((y + 0.5 - 6) / 3, 2) + std::pow((z + 0.5 - 6) / 2, 2);
        const bool in = q <= 1.0;
        inside += in;
        EXPECT_EQ(labels.at(x, y, z), in ? 1 : 0);
        EXPECT_EQ(mri.at(x, y, z), in ? 80.0 : 10.0);
      }
  EXPECT_GT(inside, 0u);
}

TEST(Phantom, LaterStructureWinsOverlap) {
  PhantomSpec spec;
  spec.dims = {10, 10, 10};
  spec.structures = {{1, "a", ShapeKind::ellipsoid, {4, 5, 5}, {3, 3, 3}, 50},
                     {2, "b", ShapeKind::ellipsoid, {6, 5, 5}, {3, 3, 3}, 90}};
  const auto [mri, labels] = make_phantom(spec, 1);
  EXPECT_EQ(labels.at(4, 4, 4), 2);
  EXPECT_EQ(mri.at(4, 4, 4), 90.0);
  EXPECT_EQ(labels.at(1, 4, 4), 1);
  EXPECT_EQ(labels.n_labels(), 2);
}

TEST(Phantom, SeedDeterminesOutput) {
  auto spec = parse_phantom_spec(Json::parse(subfork::detail::read_file(SUBFORK_DATA_DIR "/deep7.json")));
  const auto a = make_phantom(spec, 3), b = make_phantom(spec, 3), c = make_phantom(spec, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.first, c.first);
  EXPECT_EQ(a.second.n_labels(), 7);
  for (int l = 1; l <= 7; ++l)
    EXPECT_GT(std::count(a.second.values().begin(), a.second.values().end(), l), 500) << "label " << l;
}

TEST(Phantom, OutsideGridIsValidationError) {
  PhantomSpec spec;
  spec.dims = {10, 10, 10};
  spec.structures = {{1, "a", ShapeKind::ellipsoid, {2, 5, 5}, {3, 3, 3}, 50}};
  EXPECT_THROW(make_phantom(spec, 1), ValidationError);
  EXPECT_THROW(parse_phantom_spec(Json::parse(R"({"structures":[{"label":1}]})")), ValidationError);
}
