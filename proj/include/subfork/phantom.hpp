#pragma once

// Synthetic head phantoms: rasterized ellipsoids/boxes with per-label mean
// intensities plus clamped Gaussian noise.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "subfork/rng.hpp"
#include "subfork/volume.hpp"

namespace subfork {

enum class ShapeKind { ellipsoid, box };

struct PhantomStructure {
  int label = 0;  ///< 0 paints intensity only
  std::string name;
  ShapeKind shape = ShapeKind::ellipsoid;
  std::array<double, 3> center{};  ///< mm
  std::array<double, 3> radii{};   ///< mm (half-extents for boxes)
  double mean_intensity = 0.0;
};

struct PhantomSpec {
  Index3 dims{64, 64, 64};
  Spacing3 spacing{1.0, 1.0, 1.0};
  double background_mean = 0.0;
  double noise_sigma = 0.0;
  double max_intensity = 255.0;
  double center_jitter_mm = 0.0;
  double radius_jitter_frac = 0.0;
  std::vector<PhantomStructure> structures;  ///< later entries overwrite earlier ones

  int n_labels() const {
    int n = 1;
    for (const auto& s : structures) n = std::max(n, s.label);
    return n;
  }
};

inline PhantomSpec parse_phantom_spec(const Json& j) {
  PhantomSpec spec;
  try {
    if (j.contains("dims")) {
      auto d = j.at("dims").get<std::vector<int>>();
      if (d.size() != 3) throw ValidationError("phantom dims must have 3 entries");
      spec.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing")) {
      auto s = j.at("spacing").get<std::vector<double>>();
      if (s.size() != 3) throw ValidationError("phantom spacing must have 3 entries");
      spec.spacing = {s[0], s[1], s[2]};
    }
    spec.background_mean = j.value("background_mean", 0.0);
    spec.noise_sigma = j.value("noise_sigma", 0.0);
    spec.max_intensity = j.value("max_intensity", 255.0);
    if (j.contains("jitter")) {
      spec.center_jitter_mm = j.at("jitter").value("center_mm", 0.0);
      spec.radius_jitter_frac = j.at("jitter").value("radius_frac", 0.0);
    }
    for (const auto& s : j.at("structures")) {
      PhantomStructure ps;
      ps.label = s.at("label").get<int>();
      ps.name = s.value("name", "");
      const auto shape = s.value("shape", std::string("ellipsoid"));
      if (shape == "ellipsoid")
        ps.shape = ShapeKind::ellipsoid;
      else if (shape == "box")
        ps.shape = ShapeKind::box;
      else
        throw ValidationError("unknown phantom shape '" + shape + "'");
      auto c = s.at("center").get<std::vector<double>>();
      auto r = s.at("radii").get<std::vector<double>>();
      if (c.size() != 3 || r.size() != 3) throw ValidationError("center/radii must have 3 entries");
      ps.center = {c[0], c[1], c[2]};
      ps.radii = {r[0], r[1], r[2]};
      ps.mean_intensity = s.at("mean_intensity").get<double>();
      spec.structures.push_back(ps);
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad phantom descriptor: ") + e.what());
  }
  return spec;
}

inline void validate_phantom_spec(const PhantomSpec& spec) {
  VolumeHeader{spec.dims, spec.spacing, DType::f32, VolumeKind::scalar, 0}.validate();
  if (spec.structures.empty()) throw ValidationError("phantom needs at least one structure");
  if (spec.noise_sigma < 0 || spec.center_jitter_mm < 0 || spec.radius_jitter_frac < 0 ||
      spec.radius_jitter_frac >= 1)
    throw ValidationError("phantom noise/jitter parameters out of range");
  for (const auto& s : spec.structures) {
    if (s.label < 0 || s.label > 255) throw ValidationError("phantom label out of 0..255");
    for (int d = 0; d < 3; ++d) {
      if (!(s.radii[d] > 0)) throw ValidationError("phantom radii must be positive");
      const double reach = s.radii[d] * (1.0 + spec.radius_jitter_frac) + spec.center_jitter_mm;
      const double extent = spec.dims[d] * spec.spacing[d];
      if (s.center[d] - reach < 0.0 || s.center[d] + reach > extent)
        throw ValidationError("structure '" + s.name + "' (label " + std::to_string(s.label) +
                              ") extends outside the grid");
    }
  }
}

/// Deterministic for a fixed seed. Intensities are rounded through f32 so the
/// in-memory volume equals what save_volume writes.
inline std::pair<ScalarVolume, LabelVolume> make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  validate_phantom_spec(spec);
  Rng rng(seed);
  std::vector<PhantomStructure> placed = spec.structures;
  for (auto& s : placed) {
    for (int d = 0; d < 3; ++d) s.center[d] += rng.uniform(-spec.center_jitter_mm, spec.center_jitter_mm);
    for (int d = 0; d < 3; ++d) s.radii[d] *= rng.uniform(1.0 - spec.radius_jitter_frac, 1.0 + spec.radius_jitter_frac);
  }

  ScalarVolume mri = make_scalar_volume(spec.dims, spec.spacing, DType::f32, spec.background_mean);
  LabelVolume labels = make_label_volume(spec.dims, spec.n_labels(), spec.spacing);
  for (const auto& s : placed) {
    for (int z = 0; z < spec.dims[2]; ++z)
      for (int y = 0; y < spec.dims[1]; ++y)
        for (int x = 0; x < spec.dims[0]; ++x) {
          const std::array<double, 3> p{(x + 0.5) * spec.spacing[0], (y + 0.5) * spec.spacing[1],
                                        (z + 0.5) * spec.spacing[2]};
          bool inside;
          if (s.shape == ShapeKind::ellipsoid) {
            double q = 0;
            for (int d = 0; d < 3; ++d) q += std::pow((p[d] - s.center[d]) / s.radii[d], 2);
            inside = q <= 1.0;
          } else {
            inside = true;
            for (int d = 0; d < 3; ++d) inside = inside && std::abs(p[d] - s.center[d]) <= s.radii[d];
          }
          if (!inside) continue;
          const auto i = mri.index(x, y, z);
          mri[i] = s.mean_intensity;
          labels[i] = static_cast<std::uint8_t>(s.label);
        }
  }
  for (std::size_t i = 0; i < mri.size(); ++i) {
    double v = mri[i];
    if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, spec.max_intensity);
    mri[i] = static_cast<double>(static_cast<float>(v));
  }
  return {std::move(mri), std::move(labels)};
}

}  // namespace subfork
