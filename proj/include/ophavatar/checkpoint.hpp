#pragma once

#include "ophavatar/avatar.hpp"
#include "ophavatar/image_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace opha {

// Binary avatar checkpoint; all numbers little-endian, 64-bit unless noted.
//   "OPHA" u32 version
//   config echo (u64 length + bytes)
//   grid config, tables        | mlp config, parameters
//   render config, influence radius
//   rig (canonical mesh, blendshapes, markers) | provenance
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class Writer {
public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void vec(const Vec3& v) {
    for (int i = 0; i < 3; ++i) f64(v[i]);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  const std::string& data() const { return buf_; }

private:
  std::string buf_;
};

class Reader {
public:
  explicit Reader(std::string_view data) : data_(data) {}
  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw IoError("checkpoint: truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  int i32v() { return static_cast<int>(i64()); }
  double f64() { return pod<double>(); }
  Vec3 vec() {
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = f64();
    return v;
  }
  std::size_t count(std::size_t elem_size) {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / std::max<std::size_t>(1, elem_size))
      throw IoError("checkpoint: corrupt length field");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(count(1), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  std::vector<double> f64s() {
    std::vector<double> v(count(8));
    bytes(v.data(), v.size() * 8);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Avatar& a, const std::string& config_echo = {}) {
  detail::Writer w;
  w.bytes("OPHA", 4);
  w.u32(kCheckpointVersion);
  w.str(config_echo);

  const HashGridConfig& g = a.grid.config();
  w.i64(g.levels);
  w.i64(g.base_resolution);
  w.f64(g.growth);
  w.i64(g.log2_table_size);
  w.i64(g.features);
  w.vec(g.domain_min);
  w.vec(g.domain_max);
  w.f64s(a.grid.params());

  const FieldConfig& m = a.mlp.config();
  w.i64(m.input_dim);
  w.i64(m.hidden);
  w.i64(m.geo_features);
  w.f64s(a.mlp.params());

  const RenderConfig& r = a.render;
  w.i64(r.n_samples);
  w.vec(r.background);
  w.i64(r.stratified ? 1 : 0);
  w.f64(r.density_scale);
  w.f64(r.early_stop_transmittance);
  w.i64(r.segment_samples);
  w.f64(a.influence_radius);

  const BlendshapeRig& rig = a.rig;
  w.u64(rig.canonical.vertices.size());
  for (const Vec3& v : rig.canonical.vertices) w.vec(v);
  w.u64(rig.canonical.triangles.size());
  for (const auto& [i0, i1, i2] : rig.canonical.triangles) {
    w.i64(i0);
    w.i64(i1);
    w.i64(i2);
  }
  w.u64(rig.deltas.size());
  for (const auto& shape : rig.deltas)
    for (const Vec3& d : shape) w.vec(d);
  w.u64(rig.markers.size());
  for (int mk : rig.markers) w.i64(mk);

  w.i64(a.provenance.rounds_completed);
  w.u64(a.provenance.iterations);
  w.u64(a.provenance.seeds.size());
  for (std::uint64_t s : a.provenance.seeds) w.u64(s);
  return w.data();
}

struct LoadedCheckpoint {
  Avatar avatar;
  std::string config_echo;
};

inline LoadedCheckpoint deserialize_checkpoint(std::string_view data) {
  detail::Reader r(data);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "OPHA", 4) != 0) throw IoError("checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  LoadedCheckpoint out;
  out.config_echo = r.str();
  Avatar& a = out.avatar;

  try {
    HashGridConfig g;
    g.levels = r.i32v();
    g.base_resolution = r.i32v();
    g.growth = r.f64();
    g.log2_table_size = r.i32v();
    g.features = r.i32v();
    g.domain_min = r.vec();
    g.domain_max = r.vec();
    a.grid = HashGrid(g);
    const auto tables = r.f64s();
    if (tables.size() != a.grid.params().size()) throw IoError("checkpoint: hash table size mismatch");
    std::copy(tables.begin(), tables.end(), a.grid.params().begin());

    FieldConfig m;
    m.input_dim = r.i32v();
    m.hidden = r.i32v();
    m.geo_features = r.i32v();
    a.mlp = FieldMLP(m);
    const auto params = r.f64s();
    if (params.size() != a.mlp.params().size()) throw IoError("checkpoint: MLP parameter count mismatch");
    std::copy(params.begin(), params.end(), a.mlp.params().begin());

    RenderConfig& rc = a.render;
    rc.n_samples = r.i32v();
    rc.background = r.vec();
    rc.stratified = r.i64() != 0;
    rc.density_scale = r.f64();
    rc.early_stop_transmittance = r.f64();
    rc.segment_samples = r.i32v();
    rc.validate();
    a.influence_radius = r.f64();

    BlendshapeRig& rig = a.rig;
    rig.canonical.vertices.resize(r.count(24));
    for (Vec3& v : rig.canonical.vertices) v = r.vec();
    rig.canonical.triangles.resize(r.count(24));
    for (auto& [i0, i1, i2] : rig.canonical.triangles) {
      i0 = r.i32v();
      i1 = r.i32v();
      i2 = r.i32v();
    }
    rig.deltas.resize(r.count(0));
    for (auto& shape : rig.deltas) {
      shape.resize(rig.canonical.vertices.size());
      for (Vec3& d : shape) d = r.vec();
    }
    rig.markers.resize(r.count(8));
    for (int& mk : rig.markers) mk = r.i32v();
    rig.validate();

    a.provenance.rounds_completed = r.i32v();
    a.provenance.iterations = r.u64();
    a.provenance.seeds.resize(r.count(8));
    for (auto& s : a.provenance.seeds) s = r.u64();
  } catch (const InvalidInput& e) {
    throw IoError(std::string("checkpoint: invalid contents: ") + e.what());
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Avatar& a, const std::string& config_echo = {}) {
  const std::string data = serialize_checkpoint(a, config_echo);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace opha
