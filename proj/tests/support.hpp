#pragma once

// Finite-difference gradient checks and small fixtures shared by the unit
// tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "subfork/layers.hpp"
#include "subfork/network.hpp"
#include "subfork/rng.hpp"

namespace subfork::testing {

/// Relative error with an absolute floor: gradients whose magnitude is below
/// the floor (pre-normalization biases) are compared on an absolute scale.
inline constexpr double kGradFloor = 1e-8;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t kink_crossings = 0;  ///< coordinates whose +-h step changed a ReLU or max-pool pattern
  std::string worst;

  void add(double analytic, double numeric, const std::string& where) {
    const double e = rel_error(analytic, numeric);
    ++checked;
    if (e > max_rel) {
      max_rel = e;
      worst = where + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  }
  void merge(const GradCheck& o) {
    checked += o.checked;
    kink_crossings += o.kink_crossings;
    if (o.max_rel > max_rel) {
      max_rel = o.max_rel;
      worst = o.worst;
    }
  }
};

/// Central differences of `objective` with respect to every entry of x.
inline void check_entries(std::vector<double>& x, const std::vector<double>& analytic,
                          const std::function<double()>& objective, const std::string& name, GradCheck& out,
                          double h = 1e-3) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = objective();
    x[i] = keep - h;
    const double down = objective();
    x[i] = keep;
    out.add(analytic[i], (up - down) / (2 * h), name + "[" + std::to_string(i) + "]");
  }
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline layers::Tensor random_tensor(Rng& rng, int c, int b, int h, int w) {
  layers::Tensor t(c, b, h, w);
  t.data = random_vector(rng, t.size());
  return t;
}

/// Scalar objective sum(w * y) used to seed the backward pass with dy = w.
inline double weighted_sum(const layers::Tensor& y, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w[i];
  return s;
}

inline layers::Tensor as_tensor(const layers::Tensor& shape, const std::vector<double>& values) {
  layers::Tensor t(shape.channels, shape.batch, shape.height, shape.width);
  t.data = values;
  return t;
}

inline GradCheck check_conv(std::uint64_t seed = 1) {
  Rng rng(seed);
  const int in = 3, out = 4, k = 3;
  auto x = random_tensor(rng, in, 2, 5, 6);
  auto w = random_vector(rng, static_cast<std::size_t>(out) * in * k * k);
  auto b = random_vector(rng, out);
  const auto y0 = layers::conv_forward(w, b, x, out, k);
  const auto dyw = random_vector(rng, y0.size());
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  const auto dx = layers::conv_backward(w, x, as_tensor(y0, dyw), k, dw, db);
  auto f = [&] { return weighted_sum(layers::conv_forward(w, b, x, out, k), dyw); };
  GradCheck g;
  check_entries(x.data, dx.data, f, "conv.x", g);
  check_entries(w, dw, f, "conv.w", g);
  check_entries(b, db, f, "conv.b", g);
  return g;
}

inline GradCheck check_deconv(std::uint64_t seed = 2) {
  Rng rng(seed);
  const int in = 3, out = 2;
  auto x = random_tensor(rng, in, 2, 3, 4);
  auto w = random_vector(rng, static_cast<std::size_t>(out) * in * 4);
  auto b = random_vector(rng, out);
  const auto y0 = layers::deconv_forward(w, b, x, out);
  const auto dyw = random_vector(rng, y0.size());
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  const auto dx = layers::deconv_backward(w, x, as_tensor(y0, dyw), dw, db);
  auto f = [&] { return weighted_sum(layers::deconv_forward(w, b, x, out), dyw); };
  GradCheck g;
  check_entries(x.data, dx.data, f, "deconv.x", g);
  check_entries(w, dw, f, "deconv.w", g);
  check_entries(b, db, f, "deconv.b", g);
  return g;
}

inline GradCheck check_batchnorm(std::uint64_t seed = 3) {
  Rng rng(seed);
  auto x = random_tensor(rng, 3, 2, 4, 4);
  auto gamma = random_vector(rng, 3, 0.5, 1.5);
  auto beta = random_vector(rng, 3);
  layers::BatchNormCache cache;
  const auto y0 = layers::batchnorm_forward_train(x, gamma, beta, cache);
  const auto dyw = random_vector(rng, y0.size());
  std::vector<double> dg(3, 0.0), dbeta(3, 0.0);
  const auto dx = layers::batchnorm_backward(as_tensor(y0, dyw), gamma, cache, dg, dbeta);
  auto f = [&] {
    layers::BatchNormCache c;
    return weighted_sum(layers::batchnorm_forward_train(x, gamma, beta, c), dyw);
  };
  GradCheck g;
  check_entries(x.data, dx.data, f, "bn.x", g);
  check_entries(gamma, dg, f, "bn.gamma", g);
  check_entries(beta, dbeta, f, "bn.beta", g);
  return g;
}

/// Inputs kept at least 0.05 away from the kink so h = 1e-3 never straddles it.
inline GradCheck check_relu(std::uint64_t seed = 4) {
  Rng rng(seed);
  auto x = random_tensor(rng, 2, 2, 3, 3);
  for (auto& v : x.data) v = (v < 0 ? -0.05 : 0.05) + v;
  const auto y0 = layers::relu_forward(x);
  const auto dyw = random_vector(rng, y0.size());
  const auto dx = layers::relu_backward(y0, as_tensor(y0, dyw));
  GradCheck g;
  check_entries(x.data, dx.data, [&] { return weighted_sum(layers::relu_forward(x), dyw); }, "relu.x", g);
  return g;
}

/// Distinct inputs spaced 0.01 apart so every pooling window has a clear winner.
inline GradCheck check_maxpool(std::uint64_t seed = 5) {
  Rng rng(seed);
  layers::Tensor x(2, 2, 4, 6);
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < order.size(); ++i) x.data[order[i]] = 0.01 * static_cast<double>(i);
  const auto r = layers::maxpool_forward(x);
  const auto dyw = random_vector(rng, r.out.size());
  const auto dx = layers::maxpool_backward(x, r.argmax, as_tensor(r.out, dyw));
  GradCheck g;
  check_entries(x.data, dx.data, [&] { return weighted_sum(layers::maxpool_forward(x).out, dyw); }, "pool.x", g);
  return g;
}

inline GradCheck check_sigmoid(std::uint64_t seed = 6) {
  Rng rng(seed);
  auto x = random_tensor(rng, 2, 2, 3, 3);
  for (auto& v : x.data) v *= 4;
  const auto y0 = layers::sigmoid_forward(x);
  const auto dyw = random_vector(rng, y0.size());
  const auto dx = layers::sigmoid_backward(y0, as_tensor(y0, dyw));
  GradCheck g;
  check_entries(x.data, dx.data, [&] { return weighted_sum(layers::sigmoid_forward(x), dyw); }, "sigmoid.x", g);
  return g;
}

inline GradCheck check_concat(std::uint64_t seed = 7) {
  Rng rng(seed);
  auto a = random_tensor(rng, 2, 2, 3, 3);
  auto b = random_tensor(rng, 3, 2, 3, 3);
  const auto y0 = layers::concat_forward(a, b);
  const auto dyw = random_vector(rng, y0.size());
  const auto [da, db] = layers::concat_backward(as_tensor(y0, dyw), a.channels);
  auto f = [&] { return weighted_sum(layers::concat_forward(a, b), dyw); };
  GradCheck g;
  check_entries(a.data, da.data, f, "concat.a", g);
  check_entries(b.data, db.data, f, "concat.b", g);
  return g;
}

inline NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.degree = 2;
  s.depth = 1;
  s.input_size = 8;
  s.encoder_kernel = 3;
  s.decoder_kernels = {3, 3};
  return s;
}

inline std::vector<Sample> random_samples(const NetworkSpec& spec, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  const int S = spec.input_size;
  std::vector<Sample> out(count);
  for (auto& s : out) {
    s.image = Slice2D{S, S, Axis::axial, 0, random_vector(rng, static_cast<std::size_t>(S) * S, 0, 1)};
    for (int n = 0; n < spec.degree; ++n) {
      LabelSlice m{S, S, Axis::axial, 0, std::vector<std::uint8_t>(static_cast<std::size_t>(S) * S)};
      for (auto& v : m.values) v = rng.uniform() < 0.3;
      s.masks.push_back(std::move(m));
    }
  }
  return out;
}

/// ReLU on/off pattern and max-pool winners of one train-mode forward pass.
inline std::vector<std::uint32_t> activation_pattern(const NetworkParams& p, const std::vector<Sample>& batch) {
  std::vector<Slice2D> images;
  for (const auto& s : batch) images.push_back(s.image);
  const auto tr = forward_trace(p, images, Mode::train);
  std::vector<std::uint32_t> sig;
  auto relu = [&](const layers::Tensor& t) {
    for (double v : t.data) sig.push_back(v > 0.0);
  };
  for (const auto& e : tr.enc) relu(e.out);
  for (const auto& pool : tr.pool) sig.insert(sig.end(), pool.argmax.begin(), pool.argmax.end());
  for (const auto& t : tr.tracks) {
    for (const auto& d : t.dec) {
      relu(d.deconv_act);
      relu(d.conv.out);
    }
    for (const auto& k : t.skip) relu(k.out);
  }
  return sig;
}

/// Test point for the whole-network check. Central differences with h = 1e-3
/// only estimate a derivative when no ReLU or max-pool decision flips inside
/// +-h, and on tiny batches BN curvature swamps near-zero weight gradients.
/// BN shifts of about 3 keep ReLUs clear of their kink, and pre-BN
/// convolution weights and biases are scaled by 30, which leaves the network
/// function unchanged (BN removes the scale) while shrinking the relative
/// truncation error of their differences.
inline NetworkParams network_check_point(std::uint64_t seed) {
  auto params = build_network(tiny_spec(), seed);
  Rng rng(seed + 100);
  for (auto& b : params.blocks) {
    if (!b.trainable) continue;
    const bool pre_bn = b.name.find(".map.") == std::string::npos &&
                        (b.name.ends_with("conv.weight") || b.name.ends_with("conv.bias"));
    if (b.name.ends_with("gamma"))
      for (auto& v : b.values) v = rng.uniform(0.5, 1.5);
    else if (b.name.ends_with("beta"))
      for (auto& v : b.values) v = 3.0 + rng.uniform(-0.5, 0.5);
    else if (b.name.ends_with("bias"))
      for (auto& v : b.values) v = rng.uniform(-0.5, 0.5);
    if (pre_bn)
      for (auto& v : b.values) v *= 30.0;
  }
  return params;
}

/// Every trainable parameter of the N=2, D=1, S=8 network against central
/// differences of the batch loss, with the activation pattern verified
/// unchanged at both ends of every step.
inline GradCheck check_network(std::uint64_t seed = 8, double h = 1e-3) {
  auto params = network_check_point(seed);
  const auto batch = random_samples(params.spec, 2, seed + 1);
  const auto base = activation_pattern(params, batch);
  const auto lr = loss_and_gradients(params, batch);
  GradCheck g;
  for (std::size_t bi = 0; bi < params.blocks.size(); ++bi) {
    auto& block = params.blocks[bi];
    if (!block.trainable) continue;
    for (std::size_t i = 0; i < block.values.size(); ++i) {
      const double keep = block.values[i];
      block.values[i] = keep + h;
      const double up = loss_and_gradients(params, batch).loss;
      bool crossed = activation_pattern(params, batch) != base;
      block.values[i] = keep - h;
      const double down = loss_and_gradients(params, batch).loss;
      crossed = crossed || activation_pattern(params, batch) != base;
      block.values[i] = keep;
      g.kink_crossings += crossed;
      g.add(lr.grads.blocks[bi].values[i], (up - down) / (2 * h), block.name + "[" + std::to_string(i) + "]");
    }
  }
  return g;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("subfork_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace subfork::testing
