#pragma once

// Per-slice thresholded argmax labeling and three-direction majority-vote
// fusion with an in-plane neighborhood fallback.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "subfork/network.hpp"
#include "subfork/tissues.hpp"
#include "subfork/volume.hpp"

namespace subfork {

struct FusionConfig {
  double epsilon = 0.3;  ///< background threshold
  int neighborhood = 3;  ///< odd in-plane window edge
  std::optional<LabelVolume> gm_mask;
  LabelSet gm_allowed{tissue::kGreyMatter};

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ValidationError("fusion epsilon must lie in (0, 1)");
    if (neighborhood < 1 || neighborhood % 2 == 0) throw ValidationError("fusion neighborhood must be odd and >= 1");
  }
};

/// Label n (1-based) of the largest map where that maximum reaches epsilon,
/// 0 otherwise. Ties go to the smallest n.
inline LabelSlice label_slice(std::span<const Slice2D> maps, double epsilon) {
  if (maps.empty()) throw ValidationError("label_slice: no probability maps");
  if (maps.size() > 255) throw ValidationError("label_slice: more than 255 maps");
  const auto& first = maps.front();
  for (const auto& m : maps)
    if (m.width != first.width || m.height != first.height) throw ShapeError("label_slice: maps differ in size");
  LabelSlice out{first.width, first.height, first.axis, first.index,
                 std::vector<std::uint8_t>(first.values.size(), 0)};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t n = 1; n < maps.size(); ++n)
      if (maps[n].values[i] > maps[best].values[i]) best = n;
    if (maps[best].values[i] >= epsilon) out.values[i] = static_cast<std::uint8_t>(best + 1);
  }
  return out;
}

/// Applies label_slice to every slice of one direction's probability volumes.
inline LabelVolume label_direction(const std::vector<ScalarVolume>& maps, Axis axis, double epsilon) {
  if (maps.empty()) throw ValidationError("label_direction: no probability maps");
  LabelVolume out = make_label_volume(maps.front().dims(), static_cast<int>(maps.size()), maps.front().spacing());
  for (const auto& m : maps)
    if (!m.header().same_grid(out.header())) throw ShapeError("label_direction: maps differ in dims");
  std::vector<Slice2D> planes(maps.size());
  for (int k = 0; k < axis_extent(out.dims(), axis); ++k) {
    for (std::size_t n = 0; n < maps.size(); ++n) planes[n] = extract_slice(maps[n], axis, k);
    insert_slice(out, label_slice(planes, epsilon));
  }
  return out;
}

namespace detail {

/// Adds the labels of the in-plane window around p (native plane of `axis`).
inline void count_window(const LabelVolume& v, Axis axis, const Index3& p, int half, std::array<int, 256>& counts) {
  const auto pd = plane_dims(axis);
  for (int dv = -half; dv <= half; ++dv)
    for (int du = -half; du <= half; ++du) {
      Index3 q = p;
      q[pd[0]] += du;
      q[pd[1]] += dv;
      if (!v.contains(q[0], q[1], q[2])) continue;
      ++counts[v[v.index(q)]];
    }
}

}  // namespace detail

/// Majority of the three directional labels; where all three disagree, the
/// label with the largest count over the pooled in-plane windows (each volume
/// windowed in its own slicing plane). Remaining ties go to the smallest label.
inline LabelVolume fuse_directions(const LabelVolume& axial, const LabelVolume& sagittal, const LabelVolume& coronal,
                                   const FusionConfig& cfg) {
  cfg.validate();
  if (!axial.header().same_grid(sagittal.header()) || !axial.header().same_grid(coronal.header()))
    throw ShapeError("fuse_directions: dims mismatch");
  if (cfg.gm_mask && !cfg.gm_mask->header().same_grid(axial.header()))
    throw ShapeError("fuse_directions: GM mask dims mismatch");
  const int n_labels = std::max({axial.n_labels(), sagittal.n_labels(), coronal.n_labels()});
  LabelVolume out = make_label_volume(axial.dims(), n_labels, axial.spacing());
  const int half = cfg.neighborhood / 2;
  std::array<int, 256> counts{};
  for (int z = 0; z < out.dims()[2]; ++z)
    for (int y = 0; y < out.dims()[1]; ++y)
      for (int x = 0; x < out.dims()[0]; ++x) {
        const auto i = out.index(x, y, z);
        const auto a = axial[i], s = sagittal[i], c = coronal[i];
        std::uint8_t label;
        if (a == s || a == c)
          label = a;
        else if (s == c)
          label = s;
        else {
          counts.fill(0);
          const Index3 p{x, y, z};
          detail::count_window(axial, Axis::axial, p, half, counts);
          detail::count_window(sagittal, Axis::sagittal, p, half, counts);
          detail::count_window(coronal, Axis::coronal, p, half, counts);
          int best = 0;
          for (int l = 1; l <= n_labels; ++l)
            if (counts[l] > counts[best]) best = l;
          label = static_cast<std::uint8_t>(best);
        }
        if (label != 0 && cfg.gm_mask && !cfg.gm_allowed.contains((*cfg.gm_mask)[i])) label = 0;
        out[i] = label;
      }
  return out;
}

/// Labels every direction's stack then fuses them.
inline LabelVolume probability_fuse_infer(const AxisProbabilities& probs, const FusionConfig& cfg) {
  cfg.validate();
  std::array<LabelVolume, 3> dirs;
  for (std::size_t a = 0; a < 3; ++a) dirs[a] = label_direction(probs.maps[a], kAllAxes[a], cfg.epsilon);
  return fuse_directions(dirs[0], dirs[1], dirs[2], cfg);
}

}  // namespace subfork
