#pragma once

// Single-encoder / N-decoder segmentation network ("SubForkNet") with
// hand-derived backpropagation and ADAM.
//
// Wiring for depth D and degree N:
//   EncMod_i (i = 1..D+1): ConvMod (conv + BN + ReLU), 2^(i+2) channels, then 2x2 max-pool.
//   Per track n:
//     DecMod_j (j = D+1..1): 2x2/2 deconv -> BN -> ReLU -> ConvMod, 2^(j+1) channels.
//     ConvMod_j (j = D..1): skip adapter on EncMod_j's pooled output, 2^(j+2) channels.
//     Concat_j: [DecMod_{j+1}, ConvMod_j] -> 2^(j+3) channels, feeds DecMod_j.
//     Map: conv to one channel + logistic sigmoid.
// Encoder convolutions use encoder_kernel; every convolution of track n uses
// decoder_kernels[n].

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "subfork/layers.hpp"
#include "subfork/rng.hpp"
#include "subfork/volume.hpp"

namespace subfork {

enum class Mode { train, eval };

struct NetworkSpec {
  int degree = 7;
  int depth = 2;
  int input_size = 256;
  int encoder_kernel = 3;
  std::vector<int> decoder_kernels;  ///< empty means encoder_kernel for every track

  int decoder_kernel(int track) const {
    return decoder_kernels.empty() ? encoder_kernel : decoder_kernels.at(static_cast<std::size_t>(track));
  }

  void validate() const {
    if (degree < 1) throw SpecError("degree N must be >= 1");
    if (depth < 1) throw SpecError("depth D must be >= 1");
    if (depth > 20 || input_size < 2 || (input_size & (input_size - 1)) != 0)
      throw SpecError("input size must be a power of two");
    if (input_size % (1 << (depth + 1)) != 0)
      throw SpecError("input size " + std::to_string(input_size) + " not divisible by 2^(D+1) = " +
                      std::to_string(1 << (depth + 1)));
    auto check_kernel = [](int k) {
      if (k < 3 || k % 2 == 0) throw SpecError("kernel sizes must be odd and >= 3, got " + std::to_string(k));
    };
    check_kernel(encoder_kernel);
    if (!decoder_kernels.empty() && decoder_kernels.size() != static_cast<std::size_t>(degree))
      throw SpecError("decoder_kernels lists " + std::to_string(decoder_kernels.size()) + " kernels for " +
                      std::to_string(degree) + " tracks");
    for (int k : decoder_kernels) check_kernel(k);
  }

  Json to_json() const {
    std::vector<int> kernels(static_cast<std::size_t>(degree));
    for (int n = 0; n < degree; ++n) kernels[n] = decoder_kernel(n);
    return Json{{"degree", degree},
                {"depth", depth},
                {"input_size", input_size},
                {"encoder_kernel", encoder_kernel},
                {"decoder_kernels", kernels}};
  }

  static NetworkSpec from_json(const Json& j) {
    NetworkSpec s;
    s.degree = j.at("degree").get<int>();
    s.depth = j.at("depth").get<int>();
    s.input_size = j.at("input_size").get<int>();
    s.encoder_kernel = j.at("encoder_kernel").get<int>();
    s.decoder_kernels = j.at("decoder_kernels").get<std::vector<int>>();
    return s;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
  bool trainable = true;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// All weights of one network, in a fixed block order derived from the spec.
struct NetworkParams {
  NetworkSpec spec;
  std::vector<ParamBlock> blocks;

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      if (b.trainable) n += b.values.size();
    return n;
  }

  const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw ValidationError("no parameter block '" + name + "'");
  }

  /// Same layout, all values zero.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    for (auto& b : z.blocks) std::fill(b.values.begin(), b.values.end(), 0.0);
    return z;
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct LayerShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

namespace detail {

struct ConvRef {
  std::size_t weight = 0, bias = 0;
  int in_ch = 0, out_ch = 0, kernel = 0;
};
struct BnRef {
  std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
  int channels = 0;
};
struct ConvModRef {
  ConvRef conv;
  BnRef bn;
};
struct DecModRef {
  ConvRef deconv;
  BnRef bn;
  ConvModRef conv;
};
struct TrackRef {
  std::vector<DecModRef> dec;    ///< dec[j-1] is DecMod_j
  std::vector<ConvModRef> skip;  ///< skip[j-1] is ConvMod_j, j = 1..D
  ConvRef map;
};
struct Topology {
  std::vector<ConvModRef> enc;  ///< enc[i-1] is EncMod_i
  std::vector<TrackRef> tracks;
};

class TopologyBuilder {
public:
  explicit TopologyBuilder(std::vector<ParamBlock>& blocks) : blocks_(blocks) {}

  std::size_t add(const std::string& name, std::vector<int> shape, bool trainable, double fill = 0.0) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    blocks_.push_back({name, std::move(shape), std::vector<double>(n, fill), trainable});
    return blocks_.size() - 1;
  }
  ConvRef conv(const std::string& name, int in, int out, int k) {
    ConvRef c{add(name + ".weight", {out, in, k, k}, true), 0, in, out, k};
    c.bias = add(name + ".bias", {out}, true);
    return c;
  }
  BnRef bn(const std::string& name, int ch) {
    BnRef b;
    b.gamma = add(name + ".gamma", {ch}, true, 1.0);
    b.beta = add(name + ".beta", {ch}, true);
    b.mean = add(name + ".running_mean", {ch}, false);
    b.var = add(name + ".running_var", {ch}, false, 1.0);
    b.channels = ch;
    return b;
  }
  ConvModRef convmod(const std::string& name, int in, int out, int k) {
    return {conv(name + ".conv", in, out, k), bn(name + ".bn", out)};
  }

private:
  std::vector<ParamBlock>& blocks_;
};

inline Topology build_topology(const NetworkSpec& spec, std::vector<ParamBlock>& blocks) {
  TopologyBuilder b(blocks);
  Topology t;
  const int D = spec.depth;
  for (int i = 1; i <= D + 1; ++i)
    t.enc.push_back(b.convmod("enc" + std::to_string(i), i == 1 ? 1 : (1 << (i + 1)), 1 << (i + 2), spec.encoder_kernel));
  for (int n = 0; n < spec.degree; ++n) {
    const int k = spec.decoder_kernel(n);
    const std::string tn = "track" + std::to_string(n + 1);
    TrackRef tr;
    tr.dec.resize(static_cast<std::size_t>(D + 1));
    tr.skip.resize(static_cast<std::size_t>(D));
    for (int j = D + 1; j >= 1; --j) {
      const std::string dn = tn + ".dec" + std::to_string(j);
      const int in = (j == D + 1) ? (1 << (D + 3)) : (1 << (j + 3));
      const int out = 1 << (j + 1);
      DecModRef d;
      d.deconv = {b.add(dn + ".deconv.weight", {out, in, 2, 2}, true), 0, in, out, 2};
      d.deconv.bias = b.add(dn + ".deconv.bias", {out}, true);
      d.bn = b.bn(dn + ".bn", out);
      d.conv = b.convmod(dn + ".convmod", out, out, k);
      tr.dec[j - 1] = d;
      if (j >= 2) tr.skip[j - 2] = b.convmod(tn + ".skip" + std::to_string(j - 1), 1 << (j + 1), 1 << (j + 1), k);
    }
    tr.map = b.conv(tn + ".map", 4, 1, k);
    t.tracks.push_back(std::move(tr));
  }
  return t;
}

inline Topology topology_of(const NetworkParams& p) {
  std::vector<ParamBlock> scratch;
  return build_topology(p.spec, scratch);
}

}  // namespace detail

/// He-uniform convolution weights, zero biases, gamma = 1, beta = 0.
inline NetworkParams build_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkParams p;
  p.spec = spec;
  detail::build_topology(spec, p.blocks);
  Rng rng(seed);
  for (auto& b : p.blocks) {
    if (b.shape.size() != 4) continue;
    // Each output of a stride-2 deconvolution sees one tap per input channel.
    const bool deconv = b.name.find(".deconv.") != std::string::npos;
    const double fan_in = deconv ? b.shape[1] : static_cast<double>(b.shape[1]) * b.shape[2] * b.shape[3];
    const double limit = std::sqrt(6.0 / fan_in);
    for (double& v : b.values) v = rng.uniform(-limit, limit);
  }
  return p;
}

// --- forward / backward ------------------------------------------------------

struct ConvModTrace {
  layers::Tensor out;
  layers::BatchNormCache bn;
};

struct DecModTrace {
  layers::Tensor deconv_act;  ///< after deconv + BN + ReLU
  layers::BatchNormCache bn;
  ConvModTrace conv;
};

struct TrackTrace {
  std::vector<DecModTrace> dec;
  std::vector<ConvModTrace> skip;
  std::vector<layers::Tensor> concat;  ///< concat[j-1] feeds DecMod_j, j = 1..D
  layers::Tensor logits;
};

/// Every intermediate activation of one forward pass.
struct ForwardTrace {
  layers::Tensor input;
  std::vector<ConvModTrace> enc;
  std::vector<layers::MaxPoolResult> pool;
  std::vector<TrackTrace> tracks;
};

/// Batch statistics observed by one BN layer in train mode.
struct BnBatchStat {
  std::size_t mean_block = 0;
  std::size_t var_block = 0;
  std::vector<double> mean;
  std::vector<double> var;
  std::size_t count = 0;
};

namespace detail {

class ForwardRunner {
public:
  ForwardRunner(const NetworkParams& p, Mode mode, std::vector<BnBatchStat>* stats)
      : p_(p), mode_(mode), stats_(stats) {}

  std::span<const double> P(std::size_t i) const { return p_.blocks[i].values; }

  layers::Tensor bn(const BnRef& r, const layers::Tensor& x, layers::BatchNormCache& cache) const {
    if (mode_ == Mode::eval) return layers::batchnorm_forward_eval(x, P(r.gamma), P(r.beta), P(r.mean), P(r.var));
    auto y = layers::batchnorm_forward_train(x, P(r.gamma), P(r.beta), cache);
    if (stats_) stats_->push_back({r.mean, r.var, cache.mean, cache.var, x.plane()});
    return y;
  }

  ConvModTrace convmod(const ConvModRef& r, const layers::Tensor& x) const {
    ConvModTrace t;
    auto c = layers::conv_forward(P(r.conv.weight), P(r.conv.bias), x, r.conv.out_ch, r.conv.kernel);
    t.out = layers::relu_forward(bn(r.bn, c, t.bn));
    return t;
  }

  DecModTrace decmod(const DecModRef& r, const layers::Tensor& x) const {
    DecModTrace t;
    auto d = layers::deconv_forward(P(r.deconv.weight), P(r.deconv.bias), x, r.deconv.out_ch);
    t.deconv_act = layers::relu_forward(bn(r.bn, d, t.bn));
    t.conv = convmod(r.conv, t.deconv_act);
    return t;
  }

  ForwardTrace run(const Topology& topo, layers::Tensor input) const {
    ForwardTrace tr;
    tr.input = std::move(input);
    const int D = p_.spec.depth;
    for (int i = 0; i <= D; ++i) {
      const layers::Tensor& x = i == 0 ? tr.input : tr.pool.back().out;
      tr.enc.push_back(convmod(topo.enc[i], x));
      tr.pool.push_back(layers::maxpool_forward(tr.enc.back().out));
    }
    for (const auto& track : topo.tracks) {
      TrackTrace tt;
      tt.dec.resize(static_cast<std::size_t>(D + 1));
      tt.skip.resize(static_cast<std::size_t>(D));
      tt.concat.resize(static_cast<std::size_t>(D));
      for (int j = D + 1; j >= 1; --j) {
        const layers::Tensor& x = (j == D + 1) ? tr.pool[D].out : tt.concat[j - 1];
        tt.dec[j - 1] = decmod(track.dec[j - 1], x);
        if (j >= 2) {
          tt.skip[j - 2] = convmod(track.skip[j - 2], tr.pool[j - 2].out);
          tt.concat[j - 2] = layers::concat_forward(tt.dec[j - 1].conv.out, tt.skip[j - 2].out);
        }
      }
      tt.logits = layers::conv_forward(P(track.map.weight), P(track.map.bias), tt.dec[0].conv.out, 1, track.map.kernel);
      tr.tracks.push_back(std::move(tt));
    }
    return tr;
  }

private:
  const NetworkParams& p_;
  Mode mode_;
  std::vector<BnBatchStat>* stats_;
};

class BackwardRunner {
public:
  BackwardRunner(const NetworkParams& p, NetworkParams& g) : p_(p), g_(g) {}

  std::span<const double> P(std::size_t i) const { return p_.blocks[i].values; }
  std::span<double> G(std::size_t i) { return g_.blocks[i].values; }

  layers::Tensor convmod(const ConvModRef& r, const layers::Tensor& x, const ConvModTrace& t, const layers::Tensor& dout) {
    auto d = layers::relu_backward(t.out, dout);
    d = layers::batchnorm_backward(d, P(r.bn.gamma), t.bn, G(r.bn.gamma), G(r.bn.beta));
    return layers::conv_backward(P(r.conv.weight), x, d, r.conv.kernel, G(r.conv.weight), G(r.conv.bias));
  }

  layers::Tensor decmod(const DecModRef& r, const layers::Tensor& x, const DecModTrace& t, const layers::Tensor& dout) {
    auto d = convmod(r.conv, t.deconv_act, t.conv, dout);
    d = layers::relu_backward(t.deconv_act, std::move(d));
    d = layers::batchnorm_backward(d, P(r.bn.gamma), t.bn, G(r.bn.gamma), G(r.bn.beta));
    return layers::deconv_backward(P(r.deconv.weight), x, d, G(r.deconv.weight), G(r.deconv.bias));
  }

  /// dlogits[n] is the loss gradient w.r.t. track n's pre-sigmoid map.
  void run(const Topology& topo, const ForwardTrace& tr, const std::vector<layers::Tensor>& dlogits) {
    const int D = p_.spec.depth;
    std::vector<layers::Tensor> dpool;
    for (const auto& pr : tr.pool) dpool.emplace_back(pr.out.channels, pr.out.batch, pr.out.height, pr.out.width);
    auto add = [](layers::Tensor& acc, const layers::Tensor& d) {
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += d.data[i];
    };
    for (std::size_t n = 0; n < topo.tracks.size(); ++n) {
      const auto& track = topo.tracks[n];
      const auto& tt = tr.tracks[n];
      auto d = layers::conv_backward(P(track.map.weight), tt.dec[0].conv.out, dlogits[n], track.map.kernel,
                                     G(track.map.weight), G(track.map.bias));
      for (int j = 1; j <= D + 1; ++j) {
        const layers::Tensor& x = (j == D + 1) ? tr.pool[D].out : tt.concat[j - 1];
        auto dx = decmod(track.dec[j - 1], x, tt.dec[j - 1], d);
        if (j == D + 1) {
          add(dpool[D], dx);
          break;
        }
        auto [ddec, dskip] = layers::concat_backward(dx, tt.dec[j].conv.out.channels);
        add(dpool[j - 1], convmod(track.skip[j - 1], tr.pool[j - 1].out, tt.skip[j - 1], dskip));
        d = std::move(ddec);
      }
    }
    for (int i = D; i >= 0; --i) {
      auto de = layers::maxpool_backward(tr.enc[i].out, tr.pool[i].argmax, dpool[i]);
      const layers::Tensor& x = i == 0 ? tr.input : tr.pool[i - 1].out;
      auto dx = convmod(topo.enc[i], x, tr.enc[i], de);
      if (i > 0) add(dpool[i - 1], dx);
    }
  }

private:
  const NetworkParams& p_;
  NetworkParams& g_;
};

}  // namespace detail

/// Min-max scaling to [0, 1]; a constant slice maps to zeros.
inline std::vector<double> normalize_slice(const Slice2D& s) {
  std::vector<double> out(s.values.size(), 0.0);
  if (s.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  const double range = *hi - *lo;
  if (range > 0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (s.values[i] - *lo) / range;
  return out;
}

inline layers::Tensor batch_tensor(const NetworkSpec& spec, std::span<const Slice2D> slices) {
  const int S = spec.input_size;
  layers::Tensor x(1, static_cast<int>(slices.size()), S, S);
  for (std::size_t n = 0; n < slices.size(); ++n) {
    if (slices[n].width != S || slices[n].height != S)
      throw ShapeError("network input must be " + std::to_string(S) + "x" + std::to_string(S) + ", got " +
                       std::to_string(slices[n].width) + "x" + std::to_string(slices[n].height));
    const auto norm = normalize_slice(slices[n]);
    std::copy(norm.begin(), norm.end(), x.data.begin() + static_cast<std::ptrdiff_t>(n * x.pixels()));
  }
  return x;
}

inline ForwardTrace forward_trace(const NetworkParams& params, std::span<const Slice2D> slices, Mode mode,
                                  std::vector<BnBatchStat>* stats = nullptr) {
  if (slices.empty()) throw ValidationError("forward: empty batch");
  const auto topo = detail::topology_of(params);
  return detail::ForwardRunner(params, mode, stats).run(topo, batch_tensor(params.spec, slices));
}

/// Probability maps, result[sample][track], each S x S in (0, 1).
inline std::vector<std::vector<Slice2D>> forward_batch(const NetworkParams& params, std::span<const Slice2D> slices,
                                                       Mode mode) {
  const auto tr = forward_trace(params, slices, mode);
  const int S = params.spec.input_size;
  std::vector<std::vector<Slice2D>> out(slices.size());
  for (std::size_t b = 0; b < slices.size(); ++b)
    for (const auto& tt : tr.tracks) {
      Slice2D m{S, S, slices[b].axis, slices[b].index, std::vector<double>(static_cast<std::size_t>(S) * S)};
      for (std::size_t i = 0; i < m.values.size(); ++i)
        m.values[i] = layers::sigmoid(tt.logits.data[b * tt.logits.pixels() + i]);
      out[b].push_back(std::move(m));
    }
  return out;
}

inline std::vector<Slice2D> forward(const NetworkParams& params, const Slice2D& slice, Mode mode) {
  return forward_batch(params, std::span<const Slice2D>(&slice, 1), mode).front();
}

/// Output shape of every module for one forward trace, keyed like
/// "EncMod_1.conv", "DecMod_3_2.deconv", "Concat_1_7", "Map_1".
inline std::map<std::string, LayerShape> module_shapes(const ForwardTrace& tr) {
  auto shape = [](const layers::Tensor& t) { return LayerShape{t.channels, t.height, t.width}; };
  std::map<std::string, LayerShape> m;
  for (std::size_t i = 0; i < tr.enc.size(); ++i) {
    const auto id = std::to_string(i + 1);
    m["EncMod_" + id + ".conv"] = shape(tr.enc[i].out);
    m["EncMod_" + id + ".pool"] = shape(tr.pool[i].out);
  }
  for (std::size_t n = 0; n < tr.tracks.size(); ++n) {
    const auto& tt = tr.tracks[n];
    const auto tn = std::to_string(n + 1);
    for (std::size_t j = 0; j < tt.dec.size(); ++j) {
      const auto key = "DecMod_" + std::to_string(j + 1) + "_" + tn;
      m[key + ".deconv"] = shape(tt.dec[j].deconv_act);
      m[key + ".conv"] = shape(tt.dec[j].conv.out);
    }
    for (std::size_t j = 0; j < tt.skip.size(); ++j) {
      m["ConvMod_" + std::to_string(j + 1) + "_" + tn] = shape(tt.skip[j].out);
      m["Concat_" + std::to_string(j + 1) + "_" + tn] = shape(tt.concat[j]);
    }
    m["Map_" + tn] = shape(tt.logits);
  }
  return m;
}

// --- loss --------------------------------------------------------------------

struct Sample {
  Slice2D image;
  std::vector<LabelSlice> masks;  ///< one binary mask per track
};

struct LossResult {
  double loss = 0.0;
  NetworkParams grads;
  std::vector<BnBatchStat> bn_stats;
};

inline void validate_sample(const NetworkSpec& spec, const Sample& s) {
  const int S = spec.input_size;
  if (s.image.width != S || s.image.height != S) throw ShapeError("sample image is not S x S");
  if (s.masks.size() != static_cast<std::size_t>(spec.degree))
    throw ShapeError("sample has " + std::to_string(s.masks.size()) + " masks, network has " +
                     std::to_string(spec.degree) + " tracks");
  for (const auto& m : s.masks) {
    if (m.width != S || m.height != S) throw ShapeError("target mask is not S x S");
    for (auto v : m.values)
      if (v > 1) throw ValidationError("target mask values must be 0 or 1");
  }
}

/// Mean binary cross-entropy over batch, tracks and pixels, evaluated from
/// logits as softplus(z) - t*z so no log argument can reach zero.
inline LossResult loss_and_gradients(const NetworkParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
  for (const auto& s : batch) validate_sample(params.spec, s);
  std::vector<Slice2D> images;
  images.reserve(batch.size());
  for (const auto& s : batch) images.push_back(s.image);

  LossResult r;
  const auto topo = detail::topology_of(params);
  const auto tr = detail::ForwardRunner(params, Mode::train, &r.bn_stats)
                      .run(topo, batch_tensor(params.spec, images));
  const std::size_t px = tr.tracks.front().logits.pixels();
  const double scale = 1.0 / (static_cast<double>(batch.size()) * params.spec.degree * static_cast<double>(px));
  std::vector<layers::Tensor> dlogits;
  double total = 0.0;
  for (std::size_t n = 0; n < tr.tracks.size(); ++n) {
    const auto& z = tr.tracks[n].logits;
    layers::Tensor dz(1, z.batch, z.height, z.width);
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t i = 0; i < px; ++i) {
        const std::size_t k = b * px + i;
        const double zi = z.data[k];
        const double t = batch[b].masks[n].values[i];
        total += std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi))) - t * zi;
        dz.data[k] = (layers::sigmoid(zi) - t) * scale;
      }
    dlogits.push_back(std::move(dz));
  }
  r.loss = total * scale;
  r.grads = params.zeros_like();
  detail::BackwardRunner(params, r.grads).run(topo, tr, dlogits);
  return r;
}

/// Folds observed batch statistics into the running estimates.
inline void update_running_stats(NetworkParams& params, const std::vector<BnBatchStat>& stats, double momentum) {
  for (const auto& s : stats) {
    auto& mean = params.blocks[s.mean_block].values;
    auto& var = params.blocks[s.var_block].values;
    const double unbias = s.count > 1 ? static_cast<double>(s.count) / static_cast<double>(s.count - 1) : 1.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - momentum) * mean[c] + momentum * s.mean[c];
      var[c] = (1.0 - momentum) * var[c] + momentum * s.var[c] * unbias;
    }
  }
}

// --- ADAM ----------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_params(const NetworkParams& p) {
    AdamState s;
    for (const auto& b : p.blocks) {
      s.m.emplace_back(b.values.size(), 0.0);
      s.v.emplace_back(b.values.size(), 0.0);
    }
    return s;
  }
};

/// One bias-corrected ADAM update at step t (t >= 1). Non-trainable blocks
/// (running statistics) are left alone.
inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, long t,
                      const AdamConfig& cfg) {
  if (t < 1) throw ValidationError("adam step index must be >= 1");
  if (state.m.size() != params.blocks.size() || grads.blocks.size() != params.blocks.size())
    throw ShapeError("adam: state/gradient layout does not match params");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t bi = 0; bi < params.blocks.size(); ++bi) {
    auto& b = params.blocks[bi];
    if (!b.trainable) continue;
    const auto& g = grads.blocks[bi].values;
    auto& m = state.m[bi];
    auto& v = state.v[bi];
    if (g.size() != b.values.size() || m.size() != b.values.size()) throw ShapeError("adam: block size mismatch");
    for (std::size_t i = 0; i < b.values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      b.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// --- training ------------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  AdamConfig adam{};
  std::uint64_t rng_seed = 0;
  double bn_momentum = 0.1;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<EpochLog> log;
};

/// Deterministic for a fixed seed: initialization and the per-epoch shuffle
/// both derive from cfg.rng_seed.
inline TrainResult train(const NetworkSpec& spec, std::span<const Sample> dataset, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (dataset.empty()) throw ValidationError("training dataset is empty");
  spec.validate();
  for (const auto& s : dataset) validate_sample(spec, s);

  TrainResult result{build_network(spec, cfg.rng_seed), {}};
  AdamState state = AdamState::for_params(result.params);
  Rng order_rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step = 0;
  std::vector<Sample> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(dataset[order[i]]);
      auto lr = loss_and_gradients(result.params, batch);
      adam_step(result.params, lr.grads, state, ++step, cfg.adam);
      update_running_stats(result.params, lr.bn_stats, cfg.bn_momentum);
      loss_sum += lr.loss * static_cast<double>(batch.size());
    }
    const double mean_loss = loss_sum / static_cast<double>(dataset.size());
    result.log.push_back({epoch, mean_loss});
    if (cfg.on_epoch) cfg.on_epoch(epoch, mean_loss);
  }
  return result;
}

// --- checkpoint ----------------------------------------------------------------

inline std::string encode_checkpoint(const NetworkParams& p) {
  Json layers_json = Json::array();
  for (const auto& b : p.blocks)
    layers_json.push_back({{"name", b.name}, {"shape", b.shape}, {"count", b.values.size()}, {"trainable", b.trainable}});
  Json h{{"format", "vvol"}, {"version", 1}, {"kind", "checkpoint"}, {"dtype", "f64"},
         {"network", p.spec.to_json()}, {"layers", layers_json}};
  std::string out = detail::join_container(h);
  for (const auto& b : p.blocks)
    for (double v : b.values) detail::append_le(out, v);
  return out;
}

inline NetworkParams decode_checkpoint(const std::string& bytes) {
  auto c = detail::split_container(bytes);
  if (c.header.value("kind", "") != "checkpoint") throw FormatError("not a checkpoint container");
  NetworkParams p;
  try {
    p.spec = NetworkSpec::from_json(c.header.at("network"));
    p.spec.validate();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const SpecError& e) {
    throw FormatError(std::string("checkpoint network spec invalid: ") + e.what());
  }
  detail::build_topology(p.spec, p.blocks);
  const auto& manifest = c.header.at("layers");
  if (!manifest.is_array() || manifest.size() != p.blocks.size())
    throw FormatError("checkpoint layer manifest does not match its network spec");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    if (manifest[i].value("name", "") != b.name || manifest[i].value("count", std::size_t{0}) != b.values.size())
      throw FormatError("checkpoint manifest entry " + std::to_string(i) + " does not match '" + b.name + "'");
    if (c.payload.size() < (offset + b.values.size()) * 8) throw FormatError("truncated checkpoint payload");
    for (auto& v : b.values) {
      v = detail::read_le<double>(c.payload.data() + offset * 8);
      ++offset;
    }
  }
  if (c.payload.size() != offset * 8) throw FormatError("checkpoint payload has trailing bytes");
  return p;
}

inline void save_checkpoint(const std::string& path, const NetworkParams& p) {
  detail::write_file(path, encode_checkpoint(p));
}
inline NetworkParams load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

// --- volume inference ----------------------------------------------------------

/// Zero-pads (or crops) a slice about its center to S x S.
inline Slice2D fit_slice(const Slice2D& s, int S) {
  Slice2D out{S, S, s.axis, s.index, std::vector<double>(static_cast<std::size_t>(S) * S, 0.0)};
  const int ou = (S - s.width) >= 0 ? (S - s.width) / 2 : -((s.width - S + 1) / 2);
  const int ov = (S - s.height) >= 0 ? (S - s.height) / 2 : -((s.height - S + 1) / 2);
  for (int v = 0; v < s.height; ++v)
    for (int u = 0; u < s.width; ++u) {
      const int du = u + ou, dv = v + ov;
      if (du >= 0 && du < S && dv >= 0 && dv < S) out.at(du, dv) = s.at(u, v);
    }
  return out;
}

/// Inverse of fit_slice for an S x S map; regions that were cropped away read 0.
inline Slice2D unfit_slice(const Slice2D& m, int width, int height) {
  const int S = m.width;
  Slice2D out{width, height, m.axis, m.index, std::vector<double>(static_cast<std::size_t>(width) * height, 0.0)};
  const int ou = (S - width) >= 0 ? (S - width) / 2 : -((width - S + 1) / 2);
  const int ov = (S - height) >= 0 ? (S - height) / 2 : -((height - S + 1) / 2);
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const int du = u + ou, dv = v + ov;
      if (du >= 0 && du < S && dv >= 0 && dv < S) out.at(u, v) = m.at(du, dv);
    }
  return out;
}

/// maps[axis][n] is track n's probability volume from the network trained on
/// that slicing direction, in the input volume's geometry.
struct AxisProbabilities {
  std::array<std::vector<ScalarVolume>, 3> maps;
  int degree() const { return static_cast<int>(maps[0].size()); }
};

inline std::vector<ScalarVolume> infer_axis(const NetworkParams& params, const ScalarVolume& mri, Axis axis,
                                            int batch = 8) {
  const int S = params.spec.input_size;
  std::vector<ScalarVolume> out(static_cast<std::size_t>(params.spec.degree),
                                make_scalar_volume(mri.dims(), mri.spacing(), DType::f64));
  const int extent = axis_extent(mri.dims(), axis);
  for (int k0 = 0; k0 < extent; k0 += batch) {
    std::vector<Slice2D> slices;
    for (int k = k0; k < std::min(extent, k0 + batch); ++k) slices.push_back(fit_slice(extract_slice(mri, axis, k), S));
    const auto maps = forward_batch(params, slices, Mode::eval);
    for (std::size_t b = 0; b < slices.size(); ++b) {
      const auto pd = plane_dims(axis);
      for (std::size_t n = 0; n < maps[b].size(); ++n)
        insert_slice(out[n], unfit_slice(maps[b][n], mri.dims()[pd[0]], mri.dims()[pd[1]]));
    }
  }
  return out;
}

inline AxisProbabilities infer_volume(const std::array<const NetworkParams*, 3>& params_by_axis,
                                      const ScalarVolume& mri) {
  for (int d = 0; d < 3; ++d)
    if (mri.dims()[d] < 1) throw ShapeError("volume thinner than one voxel");
  const int degree = params_by_axis[0]->spec.degree;
  for (const auto* p : params_by_axis)
    if (p->spec.degree != degree) throw ValidationError("per-axis networks disagree on degree N");
  AxisProbabilities r;
  for (std::size_t a = 0; a < 3; ++a) r.maps[a] = infer_axis(*params_by_axis[a], mri, kAllAxes[a]);
  return r;
}

}  // namespace subfork
