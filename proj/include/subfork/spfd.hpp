#pragma once

// Scalar-potential finite differences on the voxel grid: nodes sit at voxel
// corners, edges carry conductances, and injected currents drive the solve.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "subfork/conductor.hpp"
#include "subfork/volume.hpp"

namespace subfork {

/// Edge conductances of the node lattice. g[a][n] joins node n to n + stride[a];
/// it is zero on the last node layer along a.
struct NodeGrid {
  Index3 nodes{};
  Spacing3 h{};  ///< edge lengths in m
  std::array<std::vector<double>, 3> g;
  std::vector<double> diag;

  std::size_t size() const { return diag.size(); }
  std::array<std::size_t, 3> strides() const {
    return {1, static_cast<std::size_t>(nodes[0]), static_cast<std::size_t>(nodes[0]) * nodes[1]};
  }
  std::size_t index(const Index3& p) const {
    return (static_cast<std::size_t>(p[2]) * nodes[1] + p[1]) * nodes[0] + p[0];
  }
  Index3 voxel_dims() const { return {nodes[0] - 1, nodes[1] - 1, nodes[2] - 1}; }

  /// Conductance of each edge is the mean of the four voxels sharing it
  /// (voxels beyond the grid count as air) times area over length.
  static NodeGrid build(const ScalarVolume& sigma) {
    NodeGrid G;
    const auto& vd = sigma.dims();
    for (int d = 0; d < 3; ++d) {
      G.nodes[d] = vd[d] + 1;
      G.h[d] = sigma.spacing()[d] * 1e-3;
    }
    for (std::size_t i = 0; i < sigma.size(); ++i)
      if (!(sigma[i] >= 0.0) || !std::isfinite(sigma[i])) throw ValidationError("conductivity must be finite and >= 0");
    const std::size_t n = static_cast<std::size_t>(G.nodes[0]) * G.nodes[1] * G.nodes[2];
    G.diag.assign(n, 0.0);
    const auto st = G.strides();
    auto vox = [&](int x, int y, int z) {
      return sigma.contains(x, y, z) ? sigma.at(x, y, z) : 0.0;
    };
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, c = (a + 2) % 3;
      const double factor = G.h[b] * G.h[c] / G.h[a];
      G.g[a].assign(n, 0.0);
      for (int k = 0; k < G.nodes[2]; ++k)
        for (int j = 0; j < G.nodes[1]; ++j)
          for (int i = 0; i < G.nodes[0]; ++i) {
            Index3 p{i, j, k};
            if (p[a] >= vd[a]) continue;
            double s = 0;
            for (int db = -1; db <= 0; ++db)
              for (int dc = -1; dc <= 0; ++dc) {
                Index3 v = p;
                v[b] += db;
                v[c] += dc;
                s += vox(v[0], v[1], v[2]);
              }
            const std::size_t m = G.index(p);
            G.g[a][m] = s / 4.0 * factor;
            G.diag[m] += G.g[a][m];
            G.diag[m + st[a]] += G.g[a][m];
          }
    }
    return G;
  }
};

/// b - L phi, where (L phi)_n = sum_e g_e (phi_n - phi_m).
inline void residual(const NodeGrid& G, const std::vector<double>& phi, const std::vector<double>& b,
                     std::vector<double>& r) {
  const auto st = G.strides();
  r.resize(G.size());
  for (std::size_t n = 0; n < G.size(); ++n) r[n] = b[n] - G.diag[n] * phi[n];
  for (int a = 0; a < 3; ++a) {
    const auto& g = G.g[a];
    const std::size_t s = st[a];
    for (std::size_t n = 0; n + s < G.size(); ++n) {
      if (g[n] == 0.0) continue;
      r[n] += g[n] * phi[n + s];
      r[n + s] += g[n] * phi[n];
    }
  }
}

inline double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct SolverConfig {
  enum class Method { sor, multigrid };
  Method method = Method::sor;
  double omega = 1.9;
  double tol = 1e-6;
  long max_iters = 200000;        ///< sweeps for SOR, V-cycles for multigrid
  int check_every = 10;           ///< SOR sweeps between residual checks
  int mg_levels = 3;              ///< including the finest
  int mg_pre_smooths = 2;
  int mg_post_smooths = 2;
  double mg_smooth_omega = 1.0;
  int mg_coarse_sweeps = 2000;
  bool mg_harmonic = false;       ///< coarsen conductivities by harmonic instead of arithmetic mean

  void validate() const {
    if (!(omega > 0.0 && omega < 2.0)) throw ValidationError("omega must lie in (0, 2)");
    if (!(mg_smooth_omega > 0.0 && mg_smooth_omega < 2.0)) throw ValidationError("mg smoothing omega must lie in (0, 2)");
    if (!(tol > 0.0)) throw ValidationError("tolerance must be positive");
    if (max_iters < 1 || check_every < 1) throw ValidationError("iteration limits must be >= 1");
    if (mg_levels < 1 || mg_pre_smooths < 0 || mg_post_smooths < 0 || mg_coarse_sweeps < 1)
      throw ValidationError("bad multigrid settings");
  }

  static Method parse_method(const std::string& s) {
    if (s == "sor") return Method::sor;
    if (s == "multigrid" || s == "mg") return Method::multigrid;
    throw ValidationError("unknown solver method '" + s + "'");
  }
};

struct PotentialField {
  Index3 nodes{};
  std::vector<double> phi;
  double residual_norm = 0.0;     ///< relative, ||b - L phi|| / ||b||
  long iterations = 0;
  long fine_sweeps = 0;
  std::vector<double> residual_history;
};

struct LinearSystem {
  NodeGrid grid;
  std::vector<double> b;
  std::size_t gauge = 0;          ///< node held at zero potential
  std::vector<std::uint8_t> active;  ///< nodes connected to the gauge
};

namespace detail {

/// Nodes reachable from `start` over edges of nonzero conductance.
inline std::vector<std::uint8_t> reachable(const NodeGrid& G, std::size_t start) {
  std::vector<std::uint8_t> seen(G.size(), 0);
  const auto st = G.strides();
  std::vector<std::size_t> stack{start};
  seen[start] = 1;
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    for (int a = 0; a < 3; ++a) {
      if (n + st[a] < G.size() && G.g[a][n] > 0 && !seen[n + st[a]]) {
        seen[n + st[a]] = 1;
        stack.push_back(n + st[a]);
      }
      if (n >= st[a] && G.g[a][n - st[a]] > 0 && !seen[n - st[a]]) {
        seen[n - st[a]] = 1;
        stack.push_back(n - st[a]);
      }
    }
  }
  return seen;
}

}  // namespace detail

inline LinearSystem assemble(const ScalarVolume& sigma, const Montage& montage) {
  montage.validate();
  if (!sigma.header().same_grid(montage.sigma.header())) throw ShapeError("assemble: sigma/montage dims mismatch");
  LinearSystem sys{NodeGrid::build(sigma), {}, 0, {}};
  auto& G = sys.grid;
  sys.b.assign(G.size(), 0.0);
  auto inject = [&](const std::vector<Terminal>& ts, double sign, const char* what) {
    for (const auto& t : ts) {
      const auto n = G.index(t.node);
      if (G.diag[n] <= 0.0)
        throw SingularSystemError(std::string(what) + " node lies in a zero-conductance region");
      sys.b[n] += sign * montage.injected_current * t.weight;
    }
  };
  inject(montage.sources, 1.0, "source");
  inject(montage.sinks, -1.0, "sink");
  sys.gauge = G.index(montage.sink_node());
  sys.active = detail::reachable(G, sys.gauge);
  for (std::size_t n = 0; n < G.size(); ++n)
    if (sys.b[n] != 0.0 && !sys.active[n])
      throw SingularSystemError("source and sink are not connected through conductive tissue");
  return sys;
}

namespace detail {

/// One red-black sweep. Nodes with mask 0 are skipped; `pinned` (if valid) is held fixed.
inline void rb_sweep(const NodeGrid& G, std::vector<double>& phi, const std::vector<double>& b,
                     const std::vector<std::uint8_t>& mask, double omega, std::size_t pinned) {
  const int nx = G.nodes[0], ny = G.nodes[1], nz = G.nodes[2];
  const auto st = G.strides();
  const double* gx = G.g[0].data();
  const double* gy = G.g[1].data();
  const double* gz = G.g[2].data();
  for (int color = 0; color < 2; ++color)
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j) {
        const std::size_t row = (static_cast<std::size_t>(k) * ny + j) * nx;
        for (int i = (color + j + k) & 1; i < nx; i += 2) {
          const std::size_t n = row + i;
          if (!mask[n] || n == pinned) continue;
          double s = b[n];
          if (i > 0) s += gx[n - 1] * phi[n - 1];
          if (i + 1 < nx) s += gx[n] * phi[n + 1];
          if (j > 0) s += gy[n - st[1]] * phi[n - st[1]];
          if (j + 1 < ny) s += gy[n] * phi[n + st[1]];
          if (k > 0) s += gz[n - st[2]] * phi[n - st[2]];
          if (k + 1 < nz) s += gz[n] * phi[n + st[2]];
          phi[n] += omega * (s / G.diag[n] - phi[n]);
        }
      }
}

}  // namespace detail

/// Red-black SOR with the gauge node pinned at zero.
inline PotentialField sor_solve(const LinearSystem& sys, const SolverConfig& cfg) {
  cfg.validate();
  const auto& G = sys.grid;
  PotentialField f{G.nodes, std::vector<double>(G.size(), 0.0), 0, 0, 0, {}};
  const double bnorm = norm2(sys.b);
  if (bnorm == 0.0) return f;
  std::vector<double> r;
  while (true) {
    residual(G, f.phi, sys.b, r);
    f.residual_norm = norm2(r) / bnorm;
    f.residual_history.push_back(f.residual_norm);
    if (!std::isfinite(f.residual_norm)) throw ConvergenceError("SOR diverged", f.residual_history);
    if (f.residual_norm <= cfg.tol) return f;
    if (f.iterations >= cfg.max_iters)
      throw ConvergenceError("SOR did not reach tol " + std::to_string(cfg.tol) + " in " +
                                 std::to_string(cfg.max_iters) + " sweeps (residual " +
                                 std::to_string(f.residual_norm) + ")",
                             f.residual_history);
    const long todo = std::min<long>(cfg.check_every, cfg.max_iters - f.iterations);
    for (long s = 0; s < todo; ++s) detail::rb_sweep(G, f.phi, sys.b, sys.active, cfg.omega, sys.gauge);
    f.iterations += todo;
    f.fine_sweeps = f.iterations;
  }
}

namespace detail {

/// Arithmetic mean of the 8 children, or (harmonic) the conductive fraction
/// times the harmonic mean of the conductive children, so a coarse cell is
/// conductive exactly when one of its children is.
inline ScalarVolume coarsen_sigma(const ScalarVolume& s, bool harmonic) {
  const auto& d = s.dims();
  Spacing3 sp = s.spacing();
  for (auto& x : sp) x *= 2;
  ScalarVolume c = make_scalar_volume({d[0] / 2, d[1] / 2, d[2] / 2}, sp);
  for (int k = 0; k < d[2] / 2; ++k)
    for (int j = 0; j < d[1] / 2; ++j)
      for (int i = 0; i < d[0] / 2; ++i) {
        double sum = 0, inv = 0;
        int conductive = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double v = s.at(2 * i + dx, 2 * j + dy, 2 * k + dz);
              sum += v;
              if (v > 0.0) {
                inv += 1.0 / v;
                ++conductive;
              }
            }
        if (!harmonic)
          c.at(i, j, k) = sum / 8.0;
        else if (conductive > 0)
          c.at(i, j, k) = conductive / 8.0 * (conductive / inv);
      }
  return c;
}

/// Trilinear interpolation weights from coarse nodes to fine node i along one axis.
inline int parent_weights(int i, std::array<int, 2>& idx, std::array<double, 2>& w) {
  if (i % 2 == 0) {
    idx[0] = i / 2;
    w[0] = 1.0;
    return 1;
  }
  idx = {(i - 1) / 2, (i + 1) / 2};
  w = {0.5, 0.5};
  return 2;
}

template <class F>
void for_each_parent(const Index3& fine_nodes, const Index3& coarse_nodes, F&& f) {
  std::array<int, 2> ix, iy, iz;
  std::array<double, 2> wx, wy, wz;
  std::size_t n = 0;
  for (int k = 0; k < fine_nodes[2]; ++k) {
    const int cz = parent_weights(k, iz, wz);
    for (int j = 0; j < fine_nodes[1]; ++j) {
      const int cy = parent_weights(j, iy, wy);
      for (int i = 0; i < fine_nodes[0]; ++i, ++n) {
        const int cx = parent_weights(i, ix, wx);
        for (int c = 0; c < cz; ++c)
          for (int b = 0; b < cy; ++b)
            for (int a = 0; a < cx; ++a) {
              const std::size_t m =
                  (static_cast<std::size_t>(iz[c]) * coarse_nodes[1] + iy[b]) * coarse_nodes[0] + ix[a];
              f(n, m, wx[a] * wy[b] * wz[c]);
            }
      }
    }
  }
}

struct MgLevel {
  NodeGrid grid;
  std::vector<std::uint8_t> active;
  std::vector<int> component;   ///< connected-component id per active node, -1 otherwise
  int n_components = 0;
  std::vector<double> phi, rhs, res, corr, work, zero;
};

inline void label_components(MgLevel& L) {
  L.component.assign(L.grid.size(), -1);
  L.n_components = 0;
  const auto st = L.grid.strides();
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < L.grid.size(); ++s) {
    if (!L.active[s] || L.component[s] >= 0) continue;
    const int id = L.n_components++;
    L.component[s] = id;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      for (int a = 0; a < 3; ++a) {
        if (n + st[a] < L.grid.size() && L.grid.g[a][n] > 0 && L.component[n + st[a]] < 0 && L.active[n + st[a]]) {
          L.component[n + st[a]] = id;
          stack.push_back(n + st[a]);
        }
        if (n >= st[a] && L.grid.g[a][n - st[a]] > 0 && L.component[n - st[a]] < 0 && L.active[n - st[a]]) {
          L.component[n - st[a]] = id;
          stack.push_back(n - st[a]);
        }
      }
    }
  }
}

/// Removes each component's mean from v so a singular Neumann block stays consistent.
inline void project_out_constants(const MgLevel& L, std::vector<double>& v) {
  std::vector<double> sum(L.n_components, 0.0);
  std::vector<std::size_t> count(L.n_components, 0);
  for (std::size_t n = 0; n < v.size(); ++n)
    if (L.component[n] >= 0) {
      sum[L.component[n]] += v[n];
      ++count[L.component[n]];
    }
  for (std::size_t n = 0; n < v.size(); ++n) {
    if (L.component[n] >= 0)
      v[n] -= sum[L.component[n]] / static_cast<double>(count[L.component[n]]);
    else
      v[n] = 0.0;
  }
}

class VCycle {
public:
  VCycle(const LinearSystem& sys, const ScalarVolume& sigma, const SolverConfig& cfg) : cfg_(cfg) {
    ScalarVolume s = sigma;
    for (int l = 0; l < cfg.mg_levels; ++l) {
      MgLevel L;
      if (l == 0) {
        L.grid = sys.grid;
        L.active = sys.active;
      } else {
        s = coarsen_sigma(s, cfg.mg_harmonic);
        L.grid = NodeGrid::build(s);
        L.active.resize(L.grid.size());
        for (std::size_t n = 0; n < L.grid.size(); ++n) L.active[n] = L.grid.diag[n] > 0;
      }
      L.phi.assign(L.grid.size(), 0.0);
      L.rhs.assign(L.grid.size(), 0.0);
      L.res.assign(L.grid.size(), 0.0);
      L.corr.assign(L.grid.size(), 0.0);
      levels_.push_back(std::move(L));
    }
    label_components(levels_.back());
  }

  MgLevel& finest() { return levels_.front(); }

  void cycle(std::size_t l, long& fine_sweeps) {
    auto& L = levels_[l];
    constexpr auto none = std::numeric_limits<std::size_t>::max();
    if (l + 1 == levels_.size()) {
      solve_coarsest(L, l == 0 ? &fine_sweeps : nullptr);
      return;
    }
    for (int s = 0; s < cfg_.mg_pre_smooths; ++s) rb_sweep(L.grid, L.phi, L.rhs, L.active, cfg_.mg_smooth_omega, none);
    if (l == 0) fine_sweeps += cfg_.mg_pre_smooths;
    residual(L.grid, L.phi, L.rhs, L.res);
    auto& C = levels_[l + 1];
    std::fill(C.rhs.begin(), C.rhs.end(), 0.0);
    std::fill(C.phi.begin(), C.phi.end(), 0.0);
    for_each_parent(L.grid.nodes, C.grid.nodes, [&](std::size_t f, std::size_t c, double w) {
      if (L.active[f]) C.rhs[c] += w * L.res[f];
    });
    cycle(l + 1, fine_sweeps);
    std::fill(L.corr.begin(), L.corr.end(), 0.0);
    for_each_parent(L.grid.nodes, C.grid.nodes, [&](std::size_t f, std::size_t c, double w) {
      if (L.active[f]) L.corr[f] += w * C.phi[c];
    });
    add_scaled_correction(L);
    for (int s = 0; s < cfg_.mg_post_smooths; ++s) rb_sweep(L.grid, L.phi, L.rhs, L.active, cfg_.mg_smooth_omega, none);
    if (l == 0) fine_sweeps += cfg_.mg_post_smooths;
  }

private:
  // Rediscretized coarse operators are not Galerkin, so the correction is
  // scaled to minimise the energy norm of the error along it.
  static void add_scaled_correction(MgLevel& L) {
    if (L.zero.size() != L.grid.size()) L.zero.assign(L.grid.size(), 0.0);
    residual(L.grid, L.corr, L.zero, L.work);  // -A corr
    double num = 0, den = 0;
    for (std::size_t n = 0; n < L.corr.size(); ++n)
      if (L.active[n]) {
        num += L.corr[n] * L.res[n];
        den -= L.corr[n] * L.work[n];
      }
    if (!(den > 0.0)) return;
    const double alpha = num / den;
    for (std::size_t n = 0; n < L.corr.size(); ++n)
      if (L.active[n]) L.phi[n] += alpha * L.corr[n];
  }

  void solve_coarsest(MgLevel& L, long* fine_sweeps) {
    constexpr auto none = std::numeric_limits<std::size_t>::max();
    project_out_constants(L, L.rhs);
    const double rnorm = norm2(L.rhs);
    if (rnorm == 0.0) return;
    for (int s = 0; s < cfg_.mg_coarse_sweeps; s += 10) {
      for (int t = 0; t < 10; ++t) rb_sweep(L.grid, L.phi, L.rhs, L.active, cfg_.omega, none);
      if (fine_sweeps) *fine_sweeps += 10;
      residual(L.grid, L.phi, L.rhs, L.res);
      if (norm2(L.res) <= 1e-3 * rnorm) break;
    }
  }

  SolverConfig cfg_;
  std::vector<MgLevel> levels_;
};

}  // namespace detail

/// Checks that the voxel dims allow cfg.mg_levels - 1 halvings down to >= 2 voxels per axis.
inline void check_mg_levels(const Index3& voxel_dims, int levels) {
  const int f = 1 << (levels - 1);
  for (int d = 0; d < 3; ++d)
    if (voxel_dims[d] % f != 0 || voxel_dims[d] / f < 2)
      throw SpecError("voxel dims " + std::to_string(voxel_dims[0]) + "x" + std::to_string(voxel_dims[1]) + "x" +
                      std::to_string(voxel_dims[2]) + " do not allow " + std::to_string(levels) + " multigrid levels");
}

/// V-cycles with red-black smoothing. The fine system is solved up to a
/// constant, then shifted so the gauge node sits at zero.
inline PotentialField multigrid_solve(const LinearSystem& sys, const ScalarVolume& sigma, const SolverConfig& cfg) {
  cfg.validate();
  check_mg_levels(sys.grid.voxel_dims(), cfg.mg_levels);
  if (sigma.dims() != sys.grid.voxel_dims()) throw ShapeError("multigrid_solve: sigma does not match grid");
  const auto& G = sys.grid;
  PotentialField f{G.nodes, std::vector<double>(G.size(), 0.0), 0, 0, 0, {}};
  const double bnorm = norm2(sys.b);
  if (bnorm == 0.0) return f;
  detail::VCycle mg(sys, sigma, cfg);
  auto& L = mg.finest();
  L.rhs = sys.b;
  std::vector<double> r;
  while (true) {
    residual(G, L.phi, sys.b, r);
    f.residual_norm = norm2(r) / bnorm;
    f.residual_history.push_back(f.residual_norm);
    if (!std::isfinite(f.residual_norm)) throw ConvergenceError("multigrid diverged", f.residual_history);
    if (f.residual_norm <= cfg.tol) break;
    if (f.iterations >= cfg.max_iters)
      throw ConvergenceError("multigrid did not reach tol " + std::to_string(cfg.tol) + " in " +
                                 std::to_string(cfg.max_iters) + " cycles (residual " +
                                 std::to_string(f.residual_norm) + ")",
                             f.residual_history);
    mg.cycle(0, f.fine_sweeps);
    ++f.iterations;
    const double shift = L.phi[sys.gauge];
    for (std::size_t n = 0; n < L.phi.size(); ++n)
      if (L.active[n]) L.phi[n] -= shift;
  }
  f.phi = L.phi;
  return f;
}

inline PotentialField solve(const LinearSystem& sys, const ScalarVolume& sigma, const SolverConfig& cfg) {
  return cfg.method == SolverConfig::Method::sor ? sor_solve(sys, cfg) : multigrid_solve(sys, sigma, cfg);
}

struct EFieldVolume {
  std::array<ScalarVolume, 3> component;  ///< V/m
  ScalarVolume magnitude;
};

/// Each voxel's field component is the mean of -dphi/h over its four edges
/// along that axis. Air voxels are zero.
inline EFieldVolume compute_efield(const PotentialField& f, const NodeGrid& G, const ScalarVolume& sigma) {
  if (sigma.dims() != G.voxel_dims() || f.nodes != G.nodes || f.phi.size() != G.size())
    throw ShapeError("compute_efield: potential, grid and sigma disagree");
  EFieldVolume e;
  for (auto& c : e.component) c = make_scalar_volume(sigma.dims(), sigma.spacing());
  e.magnitude = make_scalar_volume(sigma.dims(), sigma.spacing());
  const auto st = G.strides();
  const auto& d = sigma.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t v = sigma.index(i, j, k);
        if (sigma[v] == 0.0) continue;
        const std::size_t n0 = G.index({i, j, k});
        double mag2 = 0;
        for (int a = 0; a < 3; ++a) {
          const std::size_t sb = st[(a + 1) % 3], sc = st[(a + 2) % 3];
          double s = 0;
          for (std::size_t m : {n0, n0 + sb, n0 + sc, n0 + sb + sc}) s += f.phi[m] - f.phi[m + st[a]];
          const double comp = s / 4.0 / G.h[a];
          e.component[a][v] = comp;
          mag2 += comp * comp;
        }
        e.magnitude[v] = std::sqrt(mag2);
      }
  return e;
}

/// Net current (A) crossing the plane between node layers p and p+1 along `axis`,
/// positive in the +axis direction.
inline double current_audit(const PotentialField& f, const NodeGrid& G, int axis, int p) {
  if (axis < 0 || axis > 2) throw BoundsError("audit axis must be 0, 1 or 2");
  if (p < 0 || p > G.nodes[axis] - 2) throw BoundsError("audit plane outside the node grid");
  if (f.phi.size() != G.size()) throw ShapeError("current_audit: potential does not match grid");
  const auto st = G.strides();
  double total = 0;
  for (int k = 0; k < G.nodes[2]; ++k)
    for (int j = 0; j < G.nodes[1]; ++j)
      for (int i = 0; i < G.nodes[0]; ++i) {
        const Index3 q{i, j, k};
        if (q[axis] != p) continue;
        const std::size_t n = G.index(q);
        total += G.g[axis][n] * (f.phi[n] - f.phi[n + st[axis]]);
      }
  return total;
}

/// Potential stored as a node-grid scalar volume (spacing as the voxels).
inline ScalarVolume potential_volume(const PotentialField& f, const Spacing3& spacing) {
  ScalarVolume v = make_scalar_volume(f.nodes, spacing);
  std::copy(f.phi.begin(), f.phi.end(), v.data().begin());
  return v;
}

}  // namespace subfork
