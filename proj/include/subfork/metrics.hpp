#pragma once

// Segmentation overlap/distance metrics and electric-field error measures.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "subfork/volume.hpp"

namespace subfork {

enum class HausdorffMode { directed, symmetric };

/// Dice overlap of `label` in percent; 100 when both masks are empty.
inline double dice(const LabelVolume& seg, const LabelVolume& truth, int label) {
  if (!seg.header().same_grid(truth.header())) throw ShapeError("dice: dims mismatch");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const bool in_a = seg[i] == label, in_b = truth[i] == label;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 100.0;
  return 200.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

namespace detail {

/// Exact 1D squared-distance transform (lower envelope of parabolas) with
/// sample spacing h. Infinite entries are not sites.
inline void edt_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z,
                   std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  const double w = h * h;
  const double inf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  out.resize(n);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + w * q * q) - (f[p] + w * p * p)) / (2.0 * w * (q - p));
      if (s <= z[k] && k > 0)
        --k;
      else
        break;
    }
    if (s <= z[k]) {
      v[k] = q;
      z[k + 1] = inf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
  } else {
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double d = q - v[j];
      out[q] = w * d * d + f[v[j]];
    }
  }
  f.swap(out);
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest voxel of `mask`.
inline std::vector<double> squared_distance_to(const std::vector<std::uint8_t>& mask, const Index3& dims,
                                               const Spacing3& spacing) {
  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t nx = dims[0], ny = dims[1], nz = dims[2];
  std::vector<double> d(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? 0.0 : inf;
  std::vector<double> line, scratch;
  std::vector<int> v;
  std::vector<double> z;
  const std::array<std::size_t, 3> stride{1, nx, nx * ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t len = static_cast<std::size_t>(dims[axis]);
    for (std::size_t c = 0; c < nz; ++c)
      for (std::size_t b = 0; b < ny; ++b)
        for (std::size_t a = 0; a < nx; ++a) {
          const std::array<std::size_t, 3> p{a, b, c};
          if (p[axis] != 0) continue;
          const std::size_t base = a + b * nx + c * nx * ny;
          line.resize(len);
          for (std::size_t t = 0; t < len; ++t) line[t] = d[base + t * stride[axis]];
          edt_1d(line, spacing[axis], v, z, scratch);
          for (std::size_t t = 0; t < len; ++t) d[base + t * stride[axis]] = line[t];
        }
  }
  return d;
}

inline std::vector<std::uint8_t> label_mask(const LabelVolume& v, int label) {
  std::vector<std::uint8_t> m(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] == label;
  return m;
}

}  // namespace detail

/// Exact Hausdorff distance in mm between the `label` masks, measured between
/// voxel centers scaled by spacing. directed: max over seg of distance to truth.
inline double hausdorff(const LabelVolume& seg, const LabelVolume& truth, int label,
                        HausdorffMode mode = HausdorffMode::symmetric) {
  if (!seg.header().same_grid(truth.header())) throw ShapeError("hausdorff: dims mismatch");
  const auto a = detail::label_mask(seg, label);
  const auto b = detail::label_mask(truth, label);
  if (std::none_of(a.begin(), a.end(), [](auto x) { return x; }) ||
      std::none_of(b.begin(), b.end(), [](auto x) { return x; }))
    throw UndefinedMetricError("hausdorff: label " + std::to_string(label) + " mask is empty");
  auto directed = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
    const auto d2 = detail::squared_distance_to(to, seg.dims(), seg.spacing());
    double worst = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from[i]) worst = std::max(worst, d2[i]);
    return std::sqrt(worst);
  };
  const double ab = directed(a, b);
  if (mode == HausdorffMode::directed) return ab;
  return std::max(ab, directed(b, a));
}

struct PercentileCap {
  double value = 0.0;
  ScalarVolume capped;
};

/// q-th percentile of `field` over the nonzero voxels of `region`, using
/// linear interpolation between order statistics, and a copy of the field
/// clamped to that value inside the region.
inline PercentileCap percentile_cap(const ScalarVolume& field, const LabelVolume& region, double q = 99.9) {
  if (!field.header().same_grid(region.header())) throw ShapeError("percentile_cap: dims mismatch");
  if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
  std::vector<double> vals;
  for (std::size_t i = 0; i < field.size(); ++i)
    if (region[i]) vals.push_back(field[i]);
  if (vals.empty()) throw UndefinedMetricError("percentile_cap: empty region");
  std::sort(vals.begin(), vals.end());
  const double pos = q / 100.0 * static_cast<double>(vals.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, vals.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  PercentileCap r{vals[lo] + frac * (vals[hi] - vals[lo]), field};
  for (std::size_t i = 0; i < field.size(); ++i)
    if (region[i] && r.capped[i] > r.value) r.capped[i] = r.value;
  return r;
}

/// Mean absolute difference over the region, normalized by the region's
/// largest value of either field, in percent.
inline double global_error(const ScalarVolume& e, const ScalarVolume& e_ref, const LabelVolume& region) {
  if (!e.header().same_grid(e_ref.header()) || !e.header().same_grid(region.header()))
    throw ShapeError("global_error: dims mismatch");
  double peak = 0.0, sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!region[i]) continue;
    peak = std::max({peak, e[i], e_ref[i]});
    sum += std::abs(e[i] - e_ref[i]);
    ++count;
  }
  if (count == 0) throw UndefinedMetricError("global_error: empty region");
  if (peak == 0.0) throw UndefinedMetricError("global_error: both fields vanish on the region");
  return sum / static_cast<double>(count) / peak * 100.0;
}

/// Relative difference of the regional maxima, in percent of the reference maximum.
inline double local_error(const ScalarVolume& e, const ScalarVolume& e_ref, const LabelVolume& region) {
  if (!e.header().same_grid(e_ref.header()) || !e.header().same_grid(region.header()))
    throw ShapeError("local_error: dims mismatch");
  double max_e = -std::numeric_limits<double>::infinity(), max_ref = max_e;
  bool any = false;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!region[i]) continue;
    any = true;
    max_e = std::max(max_e, e[i]);
    max_ref = std::max(max_ref, e_ref[i]);
  }
  if (!any) throw UndefinedMetricError("local_error: empty region");
  if (!(max_ref > 0.0)) throw UndefinedMetricError("local_error: reference maximum is zero");
  return std::abs(max_e - max_ref) / max_ref * 100.0;
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation (sd = 0 for a single value).
inline MeanSd summarize(const std::vector<double>& xs) {
  MeanSd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

}  // namespace subfork
