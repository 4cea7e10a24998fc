#pragma once

// Voxel-grid containers, the .vvol container format and slice/mask/embed
// operations shared by every other module.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "subfork/error.hpp"

namespace subfork {

using Json = nlohmann::json;
using Index3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;
using LabelSet = std::set<int>;

enum class DType : std::uint8_t { u8, i16, f32, f64 };
enum class VolumeKind : std::uint8_t { scalar, label };

/// Slicing direction. axial fixes z, sagittal fixes x, coronal fixes y.
enum class Axis : std::uint8_t { axial, sagittal, coronal };

inline constexpr std::array<Axis, 3> kAllAxes{Axis::axial, Axis::sagittal, Axis::coronal};

inline std::string to_string(DType t) {
  switch (t) {
    case DType::u8: return "u8";
    case DType::i16: return "i16";
    case DType::f32: return "f32";
    case DType::f64: return "f64";
  }
  return "?";
}

inline DType parse_dtype(const std::string& s) {
  if (s == "u8") return DType::u8;
  if (s == "i16") return DType::i16;
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("unknown dtype '" + s + "'");
}

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::u8: return 1;
    case DType::i16: return 2;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  return 0;
}

inline std::string to_string(Axis a) {
  switch (a) {
    case Axis::axial: return "axial";
    case Axis::sagittal: return "sagittal";
    case Axis::coronal: return "coronal";
  }
  return "?";
}

inline Axis parse_axis(const std::string& s) {
  if (s == "axial") return Axis::axial;
  if (s == "sagittal") return Axis::sagittal;
  if (s == "coronal") return Axis::coronal;
  throw ValidationError("unknown axis '" + s + "' (expected axial, sagittal or coronal)");
}

/// Grid axis (0=x, 1=y, 2=z) held fixed by a slicing direction.
inline int fixed_dim(Axis a) {
  switch (a) {
    case Axis::axial: return 2;
    case Axis::sagittal: return 0;
    case Axis::coronal: return 1;
  }
  return 2;
}

/// Grid axes spanned by the in-plane (u, v) coordinates of a slice.
inline std::array<int, 2> plane_dims(Axis a) {
  switch (a) {
    case Axis::axial: return {0, 1};
    case Axis::sagittal: return {1, 2};
    case Axis::coronal: return {0, 2};
  }
  return {0, 1};
}

inline Index3 plane_to_voxel(Axis a, int index, int u, int v) {
  Index3 p{};
  const auto pd = plane_dims(a);
  p[fixed_dim(a)] = index;
  p[pd[0]] = u;
  p[pd[1]] = v;
  return p;
}

struct VolumeHeader {
  Index3 dims{1, 1, 1};
  Spacing3 spacing{1.0, 1.0, 1.0};
  DType dtype = DType::f64;
  VolumeKind kind = VolumeKind::scalar;
  int n_labels = 0;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  void validate() const {
    for (int d = 0; d < 3; ++d) {
      if (dims[d] < 1) throw ValidationError("volume dims must be >= 1");
      if (!(spacing[d] > 0.0) || !std::isfinite(spacing[d]))
        throw ValidationError("volume spacing must be positive and finite");
    }
    if (kind == VolumeKind::label) {
      if (dtype != DType::u8) throw ValidationError("label volumes must use dtype u8");
      if (n_labels < 1 || n_labels > 255) throw ValidationError("label volume n_labels must be in 1..255");
    }
  }

  bool same_grid(const VolumeHeader& o) const { return dims == o.dims; }

  friend bool operator==(const VolumeHeader&, const VolumeHeader&) = default;
};

/// Dense 3D grid, x-fastest ordering.
template <class T>
class Volume {
public:
  using value_type = T;

  Volume() = default;

  Volume(VolumeHeader header, std::vector<T> data) : header_(header), data_(std::move(data)) {
    header_.validate();
    if (data_.size() != header_.voxel_count()) throw ShapeError("volume data length does not match dims");
  }

  const VolumeHeader& header() const { return header_; }
  const Index3& dims() const { return header_.dims; }
  const Spacing3& spacing() const { return header_.spacing; }
  int n_labels() const { return header_.n_labels; }
  DType dtype() const { return header_.dtype; }

  void set_n_labels(int n) {
    header_.n_labels = n;
    header_.validate();
  }
  void set_dtype(DType t) {
    header_.dtype = t;
    header_.validate();
  }

  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(header_.dims[1]) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(header_.dims[0]) +
           static_cast<std::size_t>(x);
  }
  std::size_t index(const Index3& p) const { return index(p[0], p[1], p[2]); }

  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < header_.dims[0] && y < header_.dims[1] && z < header_.dims[2];
  }

  T& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

private:
  VolumeHeader header_{};
  std::vector<T> data_;
};

using ScalarVolume = Volume<double>;
using LabelVolume = Volume<std::uint8_t>;

inline ScalarVolume make_scalar_volume(Index3 dims, Spacing3 spacing = {1, 1, 1}, DType dtype = DType::f64,
                                       double fill = 0.0) {
  VolumeHeader h{dims, spacing, dtype, VolumeKind::scalar, 0};
  h.validate();
  return ScalarVolume(h, std::vector<double>(h.voxel_count(), fill));
}

inline LabelVolume make_label_volume(Index3 dims, int n_labels, Spacing3 spacing = {1, 1, 1}) {
  VolumeHeader h{dims, spacing, DType::u8, VolumeKind::label, n_labels};
  h.validate();
  return LabelVolume(h, std::vector<std::uint8_t>(h.voxel_count(), 0));
}

/// One plane of a volume. values are u-fastest.
template <class T>
struct Plane {
  int width = 0;
  int height = 0;
  Axis axis = Axis::axial;
  int index = 0;
  std::vector<T> values;

  T& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
  const T& at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }

  friend bool operator==(const Plane&, const Plane&) = default;
};

using Slice2D = Plane<double>;
using LabelSlice = Plane<std::uint8_t>;

inline int axis_extent(const Index3& dims, Axis a) { return dims[fixed_dim(a)]; }

template <class T>
Plane<T> extract_slice(const Volume<T>& v, Axis axis, int index) {
  const int extent = axis_extent(v.dims(), axis);
  if (index < 0 || index >= extent)
    throw BoundsError("slice index " + std::to_string(index) + " outside [0," + std::to_string(extent) + ")");
  const auto pd = plane_dims(axis);
  Plane<T> p;
  p.width = v.dims()[pd[0]];
  p.height = v.dims()[pd[1]];
  p.axis = axis;
  p.index = index;
  p.values.resize(static_cast<std::size_t>(p.width) * p.height);
  for (int q = 0; q < p.height; ++q)
    for (int u = 0; u < p.width; ++u) p.at(u, q) = v[v.index(plane_to_voxel(axis, index, u, q))];
  return p;
}

template <class T>
void insert_slice(Volume<T>& v, const Plane<T>& p) {
  const int extent = axis_extent(v.dims(), p.axis);
  if (p.index < 0 || p.index >= extent) throw BoundsError("slice index outside volume");
  const auto pd = plane_dims(p.axis);
  if (p.width != v.dims()[pd[0]] || p.height != v.dims()[pd[1]])
    throw ShapeError("slice extent does not match the volume's in-plane dims");
  for (int q = 0; q < p.height; ++q)
    for (int u = 0; u < p.width; ++u) v[v.index(plane_to_voxel(p.axis, p.index, u, q))] = p.at(u, q);
}

/// Keeps v where the mask label is in `keep`, zero elsewhere.
inline ScalarVolume apply_mask(const ScalarVolume& v, const LabelVolume& mask, const LabelSet& keep) {
  if (!v.header().same_grid(mask.header())) throw ShapeError("apply_mask: dims mismatch");
  ScalarVolume out = v;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!keep.contains(mask[i])) out[i] = 0.0;
  return out;
}

/// Writes deep labels (shifted by label_offset) over base wherever deep > 0.
/// The result's n_labels is max(base.n_labels, label_offset + deep.n_labels),
/// which keeps every stored label in range and makes the operation idempotent.
inline LabelVolume embed_labels(const LabelVolume& base, const LabelVolume& deep, int label_offset) {
  if (!base.header().same_grid(deep.header())) throw ShapeError("embed_labels: dims mismatch");
  if (label_offset < 0) throw ValidationError("embed_labels: negative label offset");
  const int top = label_offset + deep.n_labels();
  if (top > 255 || base.n_labels() + deep.n_labels() > 255)
    throw ValidationError("embed_labels: labels overflow u8 (offset " + std::to_string(label_offset) + " + " +
                          std::to_string(deep.n_labels()) + ")");
  LabelVolume out = base;
  out.set_n_labels(std::max(base.n_labels(), top));
  for (std::size_t i = 0; i < out.size(); ++i)
    if (deep[i] > 0) out[i] = static_cast<std::uint8_t>(deep[i] + label_offset);
  return out;
}

/// Binary label volume (1 inside) selecting voxels whose label is in `labels`.
inline LabelVolume select_labels(const LabelVolume& model, const LabelSet& labels) {
  LabelVolume out = make_label_volume(model.dims(), 1, model.spacing());
  for (std::size_t i = 0; i < model.size(); ++i) out[i] = labels.contains(model[i]) ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// .vvol container: one JSON header line, '\n', then raw little-endian payload.

namespace detail {

template <class T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T read_le(const char* p) {
  char buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

struct Container {
  Json header;
  std::string payload;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

inline Container split_container(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("missing header record");
  Container c;
  try {
    c.header = Json::parse(bytes.substr(0, nl));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (!c.header.is_object() || c.header.value("format", "") != "vvol")
    throw FormatError("header is not a vvol record");
  c.payload = bytes.substr(nl + 1);
  return c;
}

inline std::string join_container(const Json& header) { return header.dump() + "\n"; }

inline VolumeHeader parse_header(const Json& j) {
  VolumeHeader h;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "scalar")
      h.kind = VolumeKind::scalar;
    else if (kind == "label")
      h.kind = VolumeKind::label;
    else
      throw FormatError("unsupported kind '" + kind + "'");
    h.dtype = parse_dtype(j.at("dtype").get<std::string>());
    const auto dims = j.at("dims").get<std::vector<int>>();
    const auto spacing = j.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw FormatError("dims/spacing must have 3 entries");
    for (int d = 0; d < 3; ++d) {
      h.dims[d] = dims[d];
      h.spacing[d] = spacing[d];
    }
    h.n_labels = j.value("n_labels", 0);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  try {
    h.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  return h;
}

inline Json header_json(const VolumeHeader& h) {
  Json j;
  j["format"] = "vvol";
  j["version"] = 1;
  j["kind"] = h.kind == VolumeKind::label ? "label" : "scalar";
  j["dtype"] = to_string(h.dtype);
  j["dims"] = {h.dims[0], h.dims[1], h.dims[2]};
  j["spacing"] = {h.spacing[0], h.spacing[1], h.spacing[2]};
  j["n_labels"] = h.n_labels;
  return j;
}

}  // namespace detail

inline std::string encode_volume(const ScalarVolume& v) {
  std::string out = detail::join_container(detail::header_json(v.header()));
  out.reserve(out.size() + v.size() * dtype_size(v.dtype()));
  for (double x : v.data()) {
    if (!std::isfinite(x)) throw ValidationError("scalar volume holds a non-finite value");
    switch (v.dtype()) {
      case DType::u8: detail::append_le(out, static_cast<std::uint8_t>(std::clamp(std::round(x), 0.0, 255.0))); break;
      case DType::i16:
        detail::append_le(out, static_cast<std::int16_t>(std::clamp(std::round(x), -32768.0, 32767.0)));
        break;
      case DType::f32: detail::append_le(out, static_cast<float>(x)); break;
      case DType::f64: detail::append_le(out, x); break;
    }
  }
  return out;
}

inline std::string encode_volume(const LabelVolume& v) {
  std::string out = detail::join_container(detail::header_json(v.header()));
  out.append(reinterpret_cast<const char*>(v.data().data()), v.size());
  return out;
}

using AnyVolume = std::variant<ScalarVolume, LabelVolume>;

inline AnyVolume decode_volume(const std::string& bytes) {
  auto c = detail::split_container(bytes);
  const VolumeHeader h = detail::parse_header(c.header);
  const std::size_t n = h.voxel_count();
  const std::size_t need = n * dtype_size(h.dtype);
  if (c.payload.size() != need)
    throw FormatError("payload holds " + std::to_string(c.payload.size()) + " bytes, header requires " +
                      std::to_string(need));
  const char* p = c.payload.data();
  if (h.kind == VolumeKind::label) {
    std::vector<std::uint8_t> data(n);
    std::memcpy(data.data(), p, n);
    for (auto x : data)
      if (x > h.n_labels)
        throw ValidationError("label value " + std::to_string(x) + " exceeds n_labels " + std::to_string(h.n_labels));
    return LabelVolume(h, std::move(data));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (h.dtype) {
      case DType::u8: data[i] = static_cast<std::uint8_t>(p[i]); break;
      case DType::i16: data[i] = detail::read_le<std::int16_t>(p + 2 * i); break;
      case DType::f32: data[i] = detail::read_le<float>(p + 4 * i); break;
      case DType::f64: data[i] = detail::read_le<double>(p + 8 * i); break;
    }
    if (!std::isfinite(data[i])) throw ValidationError("scalar payload holds a non-finite value");
  }
  return ScalarVolume(h, std::move(data));
}

inline AnyVolume load_volume(const std::string& path) { return decode_volume(detail::read_file(path)); }

inline ScalarVolume load_scalar(const std::string& path) {
  auto v = load_volume(path);
  if (auto* s = std::get_if<ScalarVolume>(&v)) return std::move(*s);
  throw FormatError("'" + path + "' holds a label volume, expected scalar");
}

inline LabelVolume load_labels(const std::string& path) {
  auto v = load_volume(path);
  if (auto* s = std::get_if<LabelVolume>(&v)) return std::move(*s);
  throw FormatError("'" + path + "' holds a scalar volume, expected labels");
}

inline void save_volume(const std::string& path, const ScalarVolume& v) { detail::write_file(path, encode_volume(v)); }
inline void save_volume(const std::string& path, const LabelVolume& v) { detail::write_file(path, encode_volume(v)); }

}  // namespace subfork
