#pragma once

// Conductivity assignment, electrode rasterization and current injection.

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "subfork/tissues.hpp"
#include "subfork/volume.hpp"

namespace subfork {

struct Tissue {
  std::string name;
  double sigma = 0.0;  ///< S/m
  friend bool operator==(const Tissue&, const Tissue&) = default;
};

/// label -> tissue. Background (label 0) always maps to 0 S/m.
class ConductivityTable {
public:
  ConductivityTable() = default;

  void set(int label, Tissue t) {
    if (label < 0 || label > 255) throw ValidationError("conductivity label out of 0..255");
    if (!(t.sigma >= 0.0) || !std::isfinite(t.sigma))
      throw ValidationError("conductivity of '" + t.name + "' must be finite and >= 0");
    if (label == 0 && t.sigma != 0.0) throw ValidationError("background label 0 must map to 0 S/m");
    entries_[label] = std::move(t);
  }

  std::optional<Tissue> find(int label) const {
    if (auto it = entries_.find(label); it != entries_.end()) return it->second;
    if (label == 0) return Tissue{"Background", 0.0};
    return std::nullopt;
  }

  double sigma(int label) const {
    auto t = find(label);
    if (!t) throw ValidationError("label " + std::to_string(label) + " has no conductivity");
    return t->sigma;
  }

  std::optional<int> label_of(const std::string& name) const {
    for (const auto& [l, t] : entries_)
      if (t.name == name) return l;
    return std::nullopt;
  }

  const std::map<int, Tissue>& entries() const { return entries_; }

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [l, t] : entries_) j[std::to_string(l)] = {{"name", t.name}, {"sigma", t.sigma}};
    return j;
  }

  static ConductivityTable from_json(const Json& j) {
    ConductivityTable t;
    try {
      for (const auto& [key, val] : j.items()) {
        std::size_t used = 0;
        const int label = std::stoi(key, &used);
        if (used != key.size()) throw ValidationError("conductivity key '" + key + "' is not an integer label");
        t.set(label, {val.at("name").get<std::string>(), val.at("sigma").get<double>()});
      }
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("bad conductivity table: ") + e.what());
    } catch (const std::logic_error&) {
      throw ValidationError("conductivity table keys must be integer labels");
    }
    return t;
  }

private:
  std::map<int, Tissue> entries_;
};

/// The nineteen head tissues and their conductivities, numbered as in tissues.hpp.
inline ConductivityTable default_conductivity_table() {
  ConductivityTable t;
  t.set(tissue::kSkin, {"Skin", 0.10});
  t.set(tissue::kFat, {"Fat", 0.08});
  t.set(tissue::kMuscle, {"Muscle", 0.16});
  t.set(tissue::kBoneCortical, {"Bone (Cortical)", 0.008});
  t.set(tissue::kBoneCancellous, {"Bone (Cancellous)", 0.027});
  t.set(tissue::kBlood, {"Blood", 0.70});
  t.set(tissue::kVitreousHumor, {"Vitreous humor", 1.50});
  t.set(tissue::kCsf, {"CSF", 1.80});
  t.set(tissue::kGreyMatter, {"GM", 0.20});
  t.set(tissue::kWhiteMatter, {"WM", 0.14});
  t.set(tissue::kCerebellum, {"Cerebellum", 0.20});
  t.set(tissue::kIntervertebralDisk, {"Intervertebral disk", 0.10});
  t.set(tissue::kDeepOffset + 1, {"Thalamus", 0.20});
  t.set(tissue::kDeepOffset + 2, {"Caudate", 0.20});
  t.set(tissue::kDeepOffset + 3, {"Putamen", 0.20});
  t.set(tissue::kDeepOffset + 4, {"Pallidum", 0.20});
  t.set(tissue::kDeepOffset + 5, {"Hippocampus", 0.20});
  t.set(tissue::kDeepOffset + 6, {"Amygdala", 0.20});
  t.set(tissue::kDeepOffset + 7, {"Nucleus accumbens", 0.20});
  return t;
}

inline ScalarVolume assign_conductivity(const LabelVolume& model, const ConductivityTable& table) {
  ScalarVolume sigma = make_scalar_volume(model.dims(), model.spacing(), DType::f64);
  std::array<std::optional<double>, 256> lut;
  std::set<int> missing;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const int l = model[i];
    if (!lut[l]) {
      if (auto t = table.find(l))
        lut[l] = t->sigma;
      else {
        missing.insert(l);
        continue;
      }
    }
    sigma[i] = *lut[l];
  }
  if (!missing.empty()) {
    std::string list;
    for (int l : missing) list += (list.empty() ? "" : ", ") + std::to_string(l);
    throw ValidationError("labels without conductivity: " + list);
  }
  return sigma;
}

// --- electrodes ----------------------------------------------------------------

enum class Polarity { anode, cathode };

/// Outward face of the grid an electrode sits on: axis 0..2 and direction +-1.
struct Face {
  int axis = 2;
  int direction = 1;

  static Face parse(const std::string& s) {
    if (s.size() != 2 || (s[0] != '+' && s[0] != '-') || s[1] < 'x' || s[1] > 'z')
      throw ValidationError("face/normal must be one of +x,-x,+y,-y,+z,-z, got '" + s + "'");
    return Face{s[1] - 'x', s[0] == '+' ? 1 : -1};
  }
  std::string str() const { return std::string(direction > 0 ? "+" : "-") + static_cast<char>('x' + axis); }
  friend bool operator==(const Face&, const Face&) = default;
};

struct ElectrodeSpec {
  std::array<double, 3> center{};       ///< mm; only the in-plane components locate the footprint
  Face normal{};                        ///< outward normal of the scalp patch
  std::array<double, 2> size{50, 50};   ///< mm along the two in-plane axes, lower axis first
  double sponge_thickness = 5.0;        ///< mm, whole stack including the rubber
  double rubber_thickness = 1.0;        ///< mm, outermost layer of the stack
  double sponge_sigma = 1.6;
  double rubber_sigma = 0.1;
  Polarity polarity = Polarity::anode;

  void validate() const {
    if (!(size[0] > 0 && size[1] > 0)) throw ValidationError("electrode size must be positive");
    if (!(sponge_thickness > 0 && rubber_thickness > 0)) throw ValidationError("electrode thicknesses must be positive");
    if (rubber_thickness > sponge_thickness) throw ValidationError("rubber layer thicker than the sponge stack");
    if (!(sponge_sigma > 0 && rubber_sigma > 0)) throw ValidationError("electrode conductivities must be positive");
  }
};

struct ElectrodeReport {
  std::size_t columns = 0;        ///< footprint columns that reached the scalp
  std::size_t stack_voxels = 0;   ///< saline + rubber
  std::size_t saline_voxels = 0;
  std::size_t rubber_voxels = 0;
  int stack_layers = 0;
  int rubber_layers = 0;
  std::vector<std::size_t> voxels;  ///< every modified voxel index
  Index3 outer_node{};              ///< node nearest the center of the rubber's outer face
};

struct PlacedElectrode {
  ScalarVolume sigma;
  ElectrodeReport report;
};

namespace detail {

inline int voxels_for(double mm, double spacing) {
  return std::max(1, static_cast<int>(std::lround(mm / spacing)));
}

inline std::array<int, 2> in_plane_axes(int normal_axis) {
  std::array<int, 2> a{};
  int k = 0;
  for (int d = 0; d < 3; ++d)
    if (d != normal_axis) a[k++] = d;
  return a;
}

}  // namespace detail

/// Stacks a saline sponge outward from the scalp along the electrode normal,
/// column by column over the footprint, with the rubber sheet as its
/// outermost layers. Thicknesses are rounded to whole voxels (minimum 1).
inline PlacedElectrode place_electrode(const ScalarVolume& sigma, const LabelVolume& model, const ElectrodeSpec& spec) {
  spec.validate();
  if (!sigma.header().same_grid(model.header())) throw ShapeError("place_electrode: sigma/model dims mismatch");
  const auto& dims = model.dims();
  const auto& sp = model.spacing();
  const int n = spec.normal.axis;
  const int dir = spec.normal.direction;
  const auto ax = detail::in_plane_axes(n);

  PlacedElectrode out{sigma, {}};
  auto& rep = out.report;
  rep.stack_layers = detail::voxels_for(spec.sponge_thickness, sp[n]);
  rep.rubber_layers = std::min(rep.stack_layers, detail::voxels_for(spec.rubber_thickness, sp[n]));

  std::array<int, 2> lo{}, count{};
  std::array<double, 2> centre{};
  for (int t = 0; t < 2; ++t) {
    centre[t] = spec.center[ax[t]] / sp[ax[t]];
    count[t] = detail::voxels_for(spec.size[t], sp[ax[t]]);
    lo[t] = static_cast<int>(std::lround(centre[t] - count[t] / 2.0));
  }
  // Rubber-top position of each column, used to locate the injection node.
  std::map<std::pair<int, int>, int> rubber_top;

  for (int v = lo[1]; v < lo[1] + count[1]; ++v)
    for (int u = lo[0]; u < lo[0] + count[0]; ++u) {
      if (u < 0 || v < 0 || u >= dims[ax[0]] || v >= dims[ax[1]]) continue;
      Index3 p{};
      p[ax[0]] = u;
      p[ax[1]] = v;
      int surface = -1;
      if (dir > 0) {
        for (int t = dims[n] - 1; t >= 0 && surface < 0; --t) {
          p[n] = t;
          if (model[model.index(p)] != 0) surface = t;
        }
      } else {
        for (int t = 0; t < dims[n] && surface < 0; ++t) {
          p[n] = t;
          if (model[model.index(p)] != 0) surface = t;
        }
      }
      if (surface < 0) continue;
      ++rep.columns;
      for (int layer = 1; layer <= rep.stack_layers; ++layer) {
        p[n] = surface + dir * layer;
        if (p[n] < 0 || p[n] >= dims[n]) break;
        const auto i = model.index(p);
        if (out.sigma[i] != 0.0) throw PlacementError("electrode overlaps conductive voxels outside the scalp");
        const bool rubber = layer > rep.stack_layers - rep.rubber_layers;
        out.sigma[i] = rubber ? spec.rubber_sigma : spec.sponge_sigma;
        rep.voxels.push_back(i);
        ++(rubber ? rep.rubber_voxels : rep.saline_voxels);
        ++rep.stack_voxels;
        if (layer == rep.stack_layers) rubber_top[{u, v}] = p[n];
      }
    }
  if (rep.columns == 0) throw PlacementError("electrode footprint lies entirely off the scalp");
  if (rep.saline_voxels == 0 || rep.rubber_voxels == 0)
    throw PlacementError("electrode rasterized " + std::to_string(rep.saline_voxels) + " saline and " +
                         std::to_string(rep.rubber_voxels) + " rubber voxels; both must be nonzero");

  // Node nearest the footprint center; its normal coordinate is the rubber's
  // outer face in the column nearest that center.
  std::array<int, 2> node_uv{};
  std::pair<int, int> best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 2; ++t) node_uv[t] = static_cast<int>(std::lround(lo[t] + count[t] / 2.0));
  for (const auto& [col, top] : rubber_top) {
    const double du = col.first + 0.5 - (lo[0] + count[0] / 2.0), dv = col.second + 0.5 - (lo[1] + count[1] / 2.0);
    const double d = du * du + dv * dv;
    if (d < best_d) {
      best_d = d;
      best = col;
    }
  }
  if (rubber_top.empty()) throw PlacementError("no column holds a complete electrode stack");
  rep.outer_node[ax[0]] = std::clamp(node_uv[0], best.first, best.first + 1);
  rep.outer_node[ax[1]] = std::clamp(node_uv[1], best.second, best.second + 1);
  const int top = rubber_top.at(best);
  rep.outer_node[n] = dir > 0 ? top + 1 : top;
  return out;
}

/// Node receiving a share of the injected current (weights of one side sum to 1).
struct Terminal {
  Index3 node{};
  double weight = 1.0;
};

struct Montage {
  ScalarVolume sigma;
  std::vector<Terminal> sources;  ///< sources.front() is the nominal source node
  std::vector<Terminal> sinks;    ///< sinks.front() is the gauge (zero-potential) node
  double injected_current = 2e-3; ///< A

  const Index3& source_node() const { return sources.front().node; }
  const Index3& sink_node() const { return sinks.front().node; }

  void validate() const {
    if (sources.empty() || sinks.empty()) throw ValidationError("montage needs a source and a sink");
    if (!(injected_current > 0.0)) throw ValidationError("injected current must be positive");
    if (source_node() == sink_node()) throw PlacementError("source and sink coincide");
    for (const auto* side : {&sources, &sinks}) {
      double w = 0;
      for (const auto& t : *side) {
        for (int d = 0; d < 3; ++d)
          if (t.node[d] < 0 || t.node[d] > sigma.dims()[d]) throw BoundsError("terminal node outside the node grid");
        w += t.weight;
      }
      if (std::abs(w - 1.0) > 1e-12) throw ValidationError("terminal weights must sum to 1");
    }
  }
};

struct MontageBuild {
  Montage montage;
  ElectrodeReport anode;
  ElectrodeReport cathode;
};

/// Places both electrodes and injects the current at the center of each
/// rubber sheet's outer face.
inline MontageBuild build_montage(const ScalarVolume& sigma, const LabelVolume& model, const ElectrodeSpec& anode,
                                  const ElectrodeSpec& cathode, double current) {
  if (!(current > 0.0)) throw ValidationError("injected current must be positive");
  auto a = place_electrode(sigma, model, anode);
  PlacedElectrode c;
  try {
    c = place_electrode(a.sigma, model, cathode);
  } catch (const PlacementError& e) {
    throw PlacementError(std::string("cathode: ") + e.what());
  }
  if (a.report.outer_node == c.report.outer_node) throw PlacementError("anode and cathode share an injection node");
  MontageBuild b;
  b.montage.sigma = std::move(c.sigma);
  b.montage.sources = {{a.report.outer_node, 1.0}};
  b.montage.sinks = {{c.report.outer_node, 1.0}};
  b.montage.injected_current = current;
  b.anode = std::move(a.report);
  b.cathode = std::move(c.report);
  b.montage.validate();
  return b;
}

/// Terminals spread over every node of a grid face, weighted by the mean
/// conductivity of the face voxels touching each node, so a uniform slab
/// receives a uniform current density. The node nearest the face center comes first.
inline std::vector<Terminal> plate_terminals(const ScalarVolume& sigma, Face face) {
  const auto& dims = sigma.dims();
  const int n = face.axis;
  const auto ax = detail::in_plane_axes(n);
  const int node_layer = face.direction > 0 ? dims[n] : 0;
  const int voxel_layer = face.direction > 0 ? dims[n] - 1 : 0;
  std::vector<Terminal> ts;
  double total = 0;
  for (int v = 0; v <= dims[ax[1]]; ++v)
    for (int u = 0; u <= dims[ax[0]]; ++u) {
      double w = 0;
      for (int dv = -1; dv <= 0; ++dv)
        for (int du = -1; du <= 0; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= dims[ax[0]] || vv >= dims[ax[1]]) continue;
          Index3 p{};
          p[n] = voxel_layer;
          p[ax[0]] = uu;
          p[ax[1]] = vv;
          w += sigma[sigma.index(p)] / 4.0;
        }
      if (w <= 0) continue;
      Index3 node{};
      node[n] = node_layer;
      node[ax[0]] = u;
      node[ax[1]] = v;
      ts.push_back({node, w});
      total += w;
    }
  if (ts.empty()) throw PlacementError("plate face " + face.str() + " touches no conductive voxel");
  for (auto& t : ts) t.weight /= total;
  const double cu = dims[ax[0]] / 2.0, cv = dims[ax[1]] / 2.0;
  auto dist = [&](const Terminal& t) {
    return std::pow(t.node[ax[0]] - cu, 2) + std::pow(t.node[ax[1]] - cv, 2);
  };
  std::stable_sort(ts.begin(), ts.end(), [&](const Terminal& a, const Terminal& b) { return dist(a) < dist(b); });
  // Renormalize after sorting so the weights sum to exactly one in this order.
  double s = 0;
  for (const auto& t : ts) s += t.weight;
  for (auto& t : ts) t.weight /= s;
  return ts;
}

/// Montage descriptor file. Either two pads,
///   {"type": "pads", "current": A, "anode": {...}, "cathode": {...}}
/// with electrode fields center, normal, size, sponge_thickness,
/// rubber_thickness, sponge_sigma, rubber_sigma (all but center and normal
/// optional), or two full-face plates on a box model,
///   {"type": "plates", "current": A, "anode": "-z", "cathode": "+z"}.
struct MontageDescriptor {
  bool plates = false;
  ElectrodeSpec anode, cathode;
  Face anode_face, cathode_face;
  double current = 2e-3;

  static MontageDescriptor from_json(const Json& j) {
    MontageDescriptor d;
    try {
      const auto type = j.value("type", std::string("pads"));
      if (type != "pads" && type != "plates") throw ValidationError("montage type must be 'pads' or 'plates'");
      d.plates = type == "plates";
      d.current = j.value("current", 2e-3);
      if (d.plates) {
        d.anode_face = Face::parse(j.at("anode").get<std::string>());
        d.cathode_face = Face::parse(j.at("cathode").get<std::string>());
      } else {
        d.anode = electrode(j.at("anode"), Polarity::anode);
        d.cathode = electrode(j.at("cathode"), Polarity::cathode);
      }
    } catch (const Json::exception& e) {
      throw ValidationError(std::string("bad montage descriptor: ") + e.what());
    }
    if (!(d.current > 0.0)) throw ValidationError("injected current must be positive");
    return d;
  }

  MontageBuild build(const ScalarVolume& sigma, const LabelVolume& model) const {
    if (!plates) return build_montage(sigma, model, anode, cathode, current);
    if (anode_face.axis == cathode_face.axis && anode_face.direction == cathode_face.direction)
      throw PlacementError("anode and cathode plates share a face");
    MontageBuild b;
    b.montage.sigma = sigma;
    b.montage.sources = plate_terminals(sigma, anode_face);
    b.montage.sinks = plate_terminals(sigma, cathode_face);
    b.montage.injected_current = current;
    b.montage.validate();
    return b;
  }

private:
  static ElectrodeSpec electrode(const Json& j, Polarity p) {
    ElectrodeSpec e;
    const auto c = j.at("center").get<std::vector<double>>();
    if (c.size() != 3) throw ValidationError("electrode center must have 3 entries");
    e.center = {c[0], c[1], c[2]};
    e.normal = Face::parse(j.at("normal").get<std::string>());
    if (j.contains("size")) {
      const auto s = j.at("size").get<std::vector<double>>();
      if (s.size() != 2) throw ValidationError("electrode size must have 2 entries");
      e.size = {s[0], s[1]};
    }
    e.sponge_thickness = j.value("sponge_thickness", e.sponge_thickness);
    e.rubber_thickness = j.value("rubber_thickness", e.rubber_thickness);
    e.sponge_sigma = j.value("sponge_sigma", e.sponge_sigma);
    e.rubber_sigma = j.value("rubber_sigma", e.rubber_sigma);
    e.polarity = p;
    e.validate();
    return e;
  }
};

}  // namespace subfork
