#include <gtest/gtest.h>

#include <cmath>

#include "subfork/metrics.hpp"
#include "support.hpp"

using namespace subfork;
using namespace subfork::testing;

namespace {

NetworkSpec spec_of(int n, int d, int s, int r = 3) {
  NetworkSpec spec;
  spec.degree = n;
  spec.depth = d;
  spec.input_size = s;
  spec.encoder_kernel = r;
  return spec;
}

int count_prefix(const NetworkParams& p, const std::string& needle) {
  int c = 0;
  for (const auto& b : p.blocks)
    if (b.name.find(needle) != std::string::npos) ++c;
  return c;
}

}  // namespace

TEST(NetworkSpec, Validation) {
  EXPECT_NO_THROW(spec_of(7, 2, 256).validate());
  EXPECT_THROW(spec_of(1, 3, 8).validate(), SpecError);  // 8 not divisible by 16
  EXPECT_THROW(spec_of(1, 0, 8).validate(), SpecError);
  EXPECT_THROW(spec_of(1, 1, 8, 4).validate(), SpecError);
  auto s = spec_of(3, 1, 8);
  s.decoder_kernels = {3, 5};
  EXPECT_THROW(build_network(s, 1), SpecError);
  s.decoder_kernels = {3, 5, 7};
  EXPECT_NO_THROW(build_network(s, 1));
}

TEST(BuildNetwork, ModuleInventory) {
  const auto p = build_network(spec_of(7, 2, 256), 1);
  // one conv weight per EncMod
  for (int i = 1; i <= 3; ++i) EXPECT_EQ(count_prefix(p, "enc" + std::to_string(i) + ".conv.weight"), 1);
  EXPECT_EQ(count_prefix(p, "enc4."), 0);
  for (int n = 1; n <= 7; ++n) {
    const auto t = "track" + std::to_string(n) + ".";
    EXPECT_EQ(count_prefix(p, t + "dec"), 3 * 12);  // deconv, BN, conv, BN per DecMod
    EXPECT_EQ(count_prefix(p, t + "dec4."), 0);
    EXPECT_EQ(count_prefix(p, t + "skip1.conv.weight") + count_prefix(p, t + "skip2.conv.weight"), 2);
    EXPECT_EQ(count_prefix(p, t + "skip3."), 0);
    EXPECT_EQ(count_prefix(p, t + "map.weight"), 1);
  }
  EXPECT_EQ(count_prefix(p, "track8."), 0);
}

TEST(BuildNetwork, DeterministicInit) {
  const auto a = build_network(spec_of(2, 1, 8), 42);
  const auto b = build_network(spec_of(2, 1, 8), 42);
  const auto c = build_network(spec_of(2, 1, 8), 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& blk : a.blocks) {
    if (blk.name.ends_with("gamma") || blk.name.ends_with("running_var")) {
      for (double v : blk.values) EXPECT_EQ(v, 1.0);
    } else if (blk.shape.size() == 1) {
      for (double v : blk.values) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Forward, MinimalInstance) {
  const auto p = build_network(spec_of(1, 1, 8), 3);
  Slice2D s{8, 8, Axis::axial, 0, std::vector<double>(64)};
  for (int i = 0; i < 64; ++i) s.values[i] = i % 7;
  const auto maps = forward(p, s, Mode::eval);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0].width, 8);
  EXPECT_EQ(maps[0].height, 8);
  for (double v : maps[0].values) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Forward, ZeroInputGivesHalf) {
  const auto p = build_network(spec_of(3, 2, 16), 5);
  const Slice2D s{16, 16, Axis::axial, 0, std::vector<double>(256, 0.0)};
  for (const auto& m : forward(p, s, Mode::eval))
    for (double v : m.values) EXPECT_EQ(v, 0.5);
}

TEST(Forward, EvalIsDeterministicAndShapeChecked) {
  const auto p = build_network(spec_of(2, 1, 8), 9);
  const auto batch = random_samples(p.spec, 1, 4);
  EXPECT_EQ(forward(p, batch[0].image, Mode::eval), forward(p, batch[0].image, Mode::eval));
  const Slice2D wrong{8, 4, Axis::axial, 0, std::vector<double>(32)};
  EXPECT_THROW(forward(p, wrong, Mode::eval), ShapeError);
}

TEST(Forward, NormalizationMakesIntensityScaleIrrelevant) {
  const auto p = build_network(spec_of(2, 1, 8), 9);
  auto s = random_samples(p.spec, 1, 4)[0].image;
  auto scaled = s;
  for (auto& v : scaled.values) v = 3.0 * v + 100.0;
  const auto a = forward(p, s, Mode::eval), b = forward(p, scaled, Mode::eval);
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t i = 0; i < a[n].values.size(); ++i) EXPECT_NEAR(a[n].values[i], b[n].values[i], 1e-12);
}

TEST(ShapeAudit, TableFormulasForS256) {
  const auto p = build_network(spec_of(7, 2, 256), 1);
  const Slice2D s{256, 256, Axis::axial, 0, std::vector<double>(256 * 256, 0.0)};
  const auto shapes = module_shapes(forward_trace(p, std::span<const Slice2D>(&s, 1), Mode::eval));
  for (int i = 1; i <= 3; ++i) {
    EXPECT_EQ(shapes.at("EncMod_" + std::to_string(i) + ".conv"), (LayerShape{1 << (i + 2), 1 << (9 - i), 1 << (9 - i)}));
    EXPECT_EQ(shapes.at("EncMod_" + std::to_string(i) + ".pool"), (LayerShape{1 << (i + 2), 1 << (8 - i), 1 << (8 - i)}));
  }
  EXPECT_EQ(shapes.at("EncMod_1.conv"), (LayerShape{8, 256, 256}));
  EXPECT_EQ(shapes.at("EncMod_1.pool"), (LayerShape{8, 128, 128}));
  for (int n = 1; n <= 7; ++n) {
    const auto tn = "_" + std::to_string(n);
    for (int j = 1; j <= 3; ++j) {
      const LayerShape dec{1 << (j + 1), 1 << (9 - j), 1 << (9 - j)};
      EXPECT_EQ(shapes.at("DecMod_" + std::to_string(j) + tn + ".deconv"), dec);
      EXPECT_EQ(shapes.at("DecMod_" + std::to_string(j) + tn + ".conv"), dec);
    }
    for (int j = 1; j <= 2; ++j) {
      EXPECT_EQ(shapes.at("ConvMod_" + std::to_string(j) + tn), (LayerShape{1 << (j + 2), 1 << (8 - j), 1 << (8 - j)}));
      EXPECT_EQ(shapes.at("Concat_" + std::to_string(j) + tn), (LayerShape{1 << (j + 3), 1 << (8 - j), 1 << (8 - j)}));
    }
    EXPECT_EQ(shapes.at("Map" + tn), (LayerShape{1, 256, 256}));
  }
  EXPECT_EQ(shapes.size(), 6u + 7u * (6 + 4 + 1));
}

TEST(Loss, HalfPredictionsGiveLn2) {
  auto p = build_network(spec_of(2, 1, 8), 1);
  for (auto& b : p.blocks)
    if (b.name.find(".map.") != std::string::npos) std::fill(b.values.begin(), b.values.end(), 0.0);
  auto batch = random_samples(p.spec, 2, 3);
  const auto r = loss_and_gradients(p, batch);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(Loss, DuplicatedSampleLeavesLossUnchanged) {
  const auto p = build_network(spec_of(2, 1, 8), 1);
  const auto one = random_samples(p.spec, 1, 3);
  std::vector<Sample> two{one[0], one[0]};
  const auto a = loss_and_gradients(p, one), b = loss_and_gradients(p, two);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  EXPECT_GT(a.loss, 0.0);
}

TEST(Loss, RejectsNonBinaryMask) {
  const auto p = build_network(spec_of(2, 1, 8), 1);
  auto batch = random_samples(p.spec, 1, 3);
  batch[0].masks[1].values[5] = 2;
  EXPECT_THROW(loss_and_gradients(p, batch), ValidationError);
}

TEST(Loss, FullNetworkGradientMatchesFiniteDifferences) {
  const auto g = check_network();
  EXPECT_GT(g.checked, 5000u);
  EXPECT_EQ(g.kink_crossings, 0u);
  EXPECT_LT(g.max_rel, 1e-4) << g.worst;
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  auto p = build_network(spec_of(1, 1, 8), 1);
  const auto before = p;
  auto state = AdamState::for_params(p);
  state.m[0][0] = 1.0;
  state.v[0][0] = 1.0;
  adam_step(p, p.zeros_like(), state, 1, AdamConfig{});
  // moments decay; a nonzero first moment would move the parameter, so compare a zero-moment entry
  EXPECT_EQ(p.blocks[0].values[1], before.blocks[0].values[1]);
  EXPECT_DOUBLE_EQ(state.m[0][0], 0.9);
  EXPECT_DOUBLE_EQ(state.v[0][0], 0.999);
  EXPECT_THROW(adam_step(p, p.zeros_like(), state, 0, AdamConfig{}), ValidationError);
}

TEST(Adam, FirstStepAndTraceMatchScalarOracle) {
  auto p = build_network(spec_of(1, 1, 8), 1);
  auto g = p.zeros_like();
  const std::size_t bi = 0;
  g.blocks[bi].values[0] = 1.0;
  const double x0 = p.blocks[bi].values[0];
  AdamConfig cfg;
  auto state = AdamState::for_params(p);
  adam_step(p, g, state, 1, cfg);
  EXPECT_NEAR(p.blocks[bi].values[0], x0 - cfg.learning_rate * 1.0 / (1.0 + cfg.epsilon), 1e-15);

  // reference scalar ADAM over two steps with g = 0.5
  auto q = build_network(spec_of(1, 1, 8), 1);
  auto gq = q.zeros_like();
  gq.blocks[bi].values[0] = 0.5;
  auto sq = AdamState::for_params(q);
  double x = q.blocks[bi].values[0], m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam_step(q, gq, sq, t, cfg);
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    x -= cfg.learning_rate * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + cfg.epsilon);
    EXPECT_NEAR(q.blocks[bi].values[0], x, 1e-15);
  }
}

TEST(Adam, RunningStatisticsNotTrained) {
  auto p = build_network(spec_of(1, 1, 8), 1);
  auto g = p.zeros_like();
  for (auto& b : g.blocks) std::fill(b.values.begin(), b.values.end(), 1.0);
  auto state = AdamState::for_params(p);
  adam_step(p, g, state, 1, AdamConfig{});
  EXPECT_EQ(p.block("enc1.bn.running_var").values, std::vector<double>(8, 1.0));
}

TEST(Train, RejectsBadConfig) {
  const auto spec = spec_of(2, 1, 8);
  const auto data = random_samples(spec, 3, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(spec, data, cfg), ValidationError);
  cfg.epochs = 1;
  EXPECT_THROW(train(spec, std::span<const Sample>{}, cfg), ValidationError);
}

TEST(Train, DeterministicAndLogsEveryEpoch) {
  const auto spec = spec_of(2, 1, 8);
  const auto data = random_samples(spec, 6, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.rng_seed = 17;
  const auto a = train(spec, data, cfg), b = train(spec, data, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.size(), 3u);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(a.log[e].epoch, e + 1);
}

TEST(Train, LearnsASquare) {
  const auto spec = spec_of(1, 1, 16);
  std::vector<Sample> data;
  Rng rng(2);
  for (int k = 0; k < 8; ++k) {
    Sample s{Slice2D{16, 16, Axis::axial, k, std::vector<double>(256)}, {}};
    LabelSlice m{16, 16, Axis::axial, k, std::vector<std::uint8_t>(256, 0)};
    const int x0 = 2 + k % 5, y0 = 3 + k % 4;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool in = x >= x0 && x < x0 + 6 && y >= y0 && y < y0 + 6;
        m.at(x, y) = in;
        s.image.at(x, y) = (in ? 100.0 : 20.0) + rng.normal() * 3;
      }
    s.masks.push_back(m);
    data.push_back(s);
  }
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 4;
  cfg.adam.learning_rate = 1e-2;
  const auto r = train(spec, data, cfg);
  EXPECT_LT(r.log.back().mean_loss, r.log.front().mean_loss);
  std::size_t correct = 0, total = 0;
  for (const auto& s : data) {
    const auto maps = forward(r.params, s.image, Mode::eval);
    for (std::size_t i = 0; i < 256; ++i, ++total) correct += (maps[0].values[i] >= 0.5) == (s.masks[0].values[i] == 1);
  }
  EXPECT_GT(static_cast<double>(correct) / total, 0.97);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto s = spec_of(3, 1, 8);
  s.decoder_kernels = {3, 5, 3};
  const auto p = build_network(s, 77);
  const auto bytes = encode_checkpoint(p);
  const auto q = decode_checkpoint(bytes);
  EXPECT_EQ(p, q);
  EXPECT_EQ(encode_checkpoint(q), bytes);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint("{\"kind\":\"checkpoint\"\n"), FormatError);
}

TEST(FitSlice, PadAndCropInvert) {
  Slice2D s{5, 3, Axis::coronal, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}};
  const auto padded = fit_slice(s, 8);
  EXPECT_EQ(padded.width, 8);
  EXPECT_EQ(unfit_slice(padded, 5, 3), s);
  Slice2D big{10, 10, Axis::axial, 0, std::vector<double>(100)};
  for (int i = 0; i < 100; ++i) big.values[i] = i;
  const auto cropped = fit_slice(big, 8);
  EXPECT_EQ(cropped.at(0, 0), big.at(1, 1));
  const auto back = unfit_slice(cropped, 10, 10);
  EXPECT_EQ(back.at(1, 1), big.at(1, 1));
  EXPECT_EQ(back.at(0, 0), 0.0);
}

TEST(InferVolume, StackShapeAndTranslationInvariance) {
  const auto p = build_network(spec_of(2, 1, 8), 5);
  auto mri = make_scalar_volume({6, 7, 5});
  Rng rng(1);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 6; ++x) {
      const double v = rng.uniform(0, 50);
      for (int z = 0; z < 5; ++z) mri.at(x, y, z) = v;
    }
  const auto r = infer_volume({&p, &p, &p}, mri);
  for (int a = 0; a < 3; ++a) {
    ASSERT_EQ(r.maps[a].size(), 2u);
    for (const auto& m : r.maps[a]) EXPECT_EQ(m.dims(), mri.dims());
  }
  for (const auto& m : r.maps[0])
    for (int z = 1; z < 5; ++z) EXPECT_EQ(extract_slice(m, Axis::axial, z).values, extract_slice(m, Axis::axial, 0).values);
  const auto other = build_network(spec_of(3, 1, 8), 5);
  EXPECT_THROW(infer_volume({&p, &other, &p}, mri), ValidationError);
}
