#pragma once

// Training data: case directories of (mri, labels) volume pairs, cut into
// per-axis slices with one binary mask per structure.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "subfork/network.hpp"
#include "subfork/rng.hpp"
#include "subfork/volume.hpp"

namespace subfork {

struct Case {
  std::string name;
  ScalarVolume mri;
  LabelVolume labels;
};

/// Every subdirectory holding mri.vvol and labels.vvol, in name order.
inline std::vector<Case> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory '" + dir + "' not found");
  std::vector<fs::path> cases;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "mri.vvol") && fs::exists(e.path() / "labels.vvol"))
      cases.push_back(e.path());
  std::sort(cases.begin(), cases.end());
  if (cases.empty()) throw ValidationError("dataset '" + dir + "' has no {case}/mri.vvol + labels.vvol pairs");
  std::vector<Case> out;
  for (const auto& p : cases) {
    Case c{p.filename().string(), load_scalar((p / "mri.vvol").string()), load_labels((p / "labels.vvol").string())};
    if (!c.mri.header().same_grid(c.labels.header()))
      throw ShapeError("case '" + c.name + "': mri and labels differ in dims");
    out.push_back(std::move(c));
  }
  return out;
}

struct SliceOptions {
  int input_size = 64;
  int degree = 7;
  int label_offset = 0;     ///< mask n is label == label_offset + n + 1
  double empty_keep = 0.25; ///< fraction of structure-free slices kept
};

/// Same centered pad/crop as fit_slice, for label planes.
inline LabelSlice fit_label_slice(const LabelSlice& s, int S) {
  Slice2D tmp{s.width, s.height, s.axis, s.index, std::vector<double>(s.values.begin(), s.values.end())};
  const auto f = fit_slice(tmp, S);
  LabelSlice out{S, S, s.axis, s.index, std::vector<std::uint8_t>(f.values.size())};
  for (std::size_t i = 0; i < f.values.size(); ++i) out.values[i] = static_cast<std::uint8_t>(f.values[i]);
  return out;
}

/// Slices along `axis`. Slices without any of the degree structures are
/// subsampled with `rng` at opts.empty_keep.
inline std::vector<Sample> slice_samples(const ScalarVolume& mri, const LabelVolume& labels, Axis axis,
                                         const SliceOptions& opts, Rng& rng) {
  if (!mri.header().same_grid(labels.header())) throw ShapeError("slice_samples: dims mismatch");
  std::vector<Sample> out;
  for (int k = 0; k < axis_extent(mri.dims(), axis); ++k) {
    const auto lab = fit_label_slice(extract_slice(labels, axis, k), opts.input_size);
    Sample s;
    s.image = fit_slice(extract_slice(mri, axis, k), opts.input_size);
    bool any = false;
    for (int n = 0; n < opts.degree; ++n) {
      LabelSlice m{lab.width, lab.height, axis, k, std::vector<std::uint8_t>(lab.values.size())};
      const int want = opts.label_offset + n + 1;
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        m.values[i] = lab.values[i] == want;
        any = any || m.values[i];
      }
      s.masks.push_back(std::move(m));
    }
    // Draw for every slice so the stream does not depend on which slices are empty.
    const double u = rng.uniform();
    if (any || u < opts.empty_keep) out.push_back(std::move(s));
  }
  return out;
}

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> validation;
};

/// Shuffles with the seed and holds out round(val_fraction * n) samples,
/// keeping at least one for training.
inline Split split_samples(std::vector<Sample> samples, double val_fraction, std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("no training slices");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("validation fraction must lie in [0, 1)");
  Rng rng(seed);
  rng.shuffle(samples);
  auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(samples.size())));
  n_val = std::min(n_val, samples.size() - 1);
  Split s;
  s.validation.assign(std::make_move_iterator(samples.end() - static_cast<std::ptrdiff_t>(n_val)),
                      std::make_move_iterator(samples.end()));
  samples.resize(samples.size() - n_val);
  s.train = std::move(samples);
  return s;
}

/// Mean loss over samples in eval mode (running BN statistics).
inline double evaluate_loss(const NetworkParams& params, std::span<const Sample> samples, int batch = 8) {
  if (samples.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    const std::size_t n = std::min<std::size_t>(batch, samples.size() - i);
    std::vector<Slice2D> images;
    for (std::size_t b = 0; b < n; ++b) images.push_back(samples[i + b].image);
    const auto maps = forward_batch(params, images, Mode::eval);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t t = 0; t < maps[b].size(); ++t)
        for (std::size_t p = 0; p < maps[b][t].values.size(); ++p) {
          const double q = std::clamp(maps[b][t].values[p], 1e-12, 1.0 - 1e-12);
          total -= samples[i + b].masks[t].values[p] ? std::log(q) : std::log(1.0 - q);
        }
  }
  const double px = static_cast<double>(samples.front().image.values.size());
  return total / (static_cast<double>(samples.size()) * static_cast<double>(samples.front().masks.size()) * px);
}

struct AxisTraining {
  TrainResult result;
  std::size_t train_slices = 0;
  std::size_t validation_slices = 0;
  double validation_loss = 0.0;
};

/// Slices every case along `axis`, splits, and trains one network. The slice
/// subsampling, the split and the training run all derive from `seed`.
inline AxisTraining train_axis(std::span<const Case> cases, Axis axis, const NetworkSpec& spec, TrainConfig cfg,
                               double val_fraction = 0.1, double empty_keep = 0.25, int label_offset = 0) {
  if (cases.empty()) throw ValidationError("training dataset is empty");
  spec.validate();
  Rng rng(cfg.rng_seed);
  SliceOptions opts{spec.input_size, spec.degree, label_offset, empty_keep};
  std::vector<Sample> all;
  for (const auto& c : cases) {
    auto v = slice_samples(c.mri, c.labels, axis, opts, rng);
    all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  auto split = split_samples(std::move(all), val_fraction, cfg.rng_seed);
  AxisTraining out;
  out.train_slices = split.train.size();
  out.validation_slices = split.validation.size();
  out.result = train(spec, split.train, cfg);
  out.validation_loss = evaluate_loss(out.result.params, split.validation);
  return out;
}

}  // namespace subfork
