#pragma once

#include "ophavatar/image_io.hpp"
#include "ophavatar/synthdata.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace opha {

// Dataset directory:
//   meta.txt               text metadata (rig, cameras, expressions, poses, degradation, seed)
//   coarse/frame_%04d.png  training images (+ .f64 sidecars)
//   clean/frame_%04d.png   ground truth, when present
//   config.yaml            config echo, when given
constexpr const char* kDatasetMagic = "ophavatar-dataset 1";

namespace detail {

inline std::string nums(std::initializer_list<double> v) {
  std::string s;
  for (double x : v) {
    if (!s.empty()) s += ' ';
    s += format_number(x);
  }
  return s;
}

inline std::string vec_text(const Vec3& v) { return nums({v.x(), v.y(), v.z()}); }

class MetaReader {
public:
  MetaReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  // Next line split into tokens; the first token must equal `key`.
  std::istringstream line(const std::string& key) {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_no_;
      if (!text.empty()) break;
    }
    if (!in_ && text.empty()) fail("unexpected end of file, expected '" + key + "'");
    std::istringstream ss(text);
    std::string head;
    ss >> head;
    if (head != key) fail("expected '" + key + "', found '" + head + "'");
    return ss;
  }
  template <class... T>
  void read(const std::string& key, T&... out) {
    auto ss = line(key);
    (ss >> ... >> out);
    if (!ss) fail("malformed '" + key + "' line");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(path_ + ":" + std::to_string(line_no_) + ": " + msg);
  }

private:
  std::istream& in_;
  std::string path_;
  int line_no_ = 0;
};

inline Vec3 read_vec(std::istream& ss) {
  Vec3 v;
  ss >> v.x() >> v.y() >> v.z();
  return v;
}

}  // namespace detail

inline std::string dataset_meta(const Dataset& ds) {
  using detail::nums;
  std::ostringstream o;
  o << kDatasetMagic << "\n";
  o << "rig_preset " << (ds.rig_preset.empty() ? "-" : ds.rig_preset) << "\n";
  o << "seed " << ds.seed << "\n";
  o << "size " << ds.width() << " " << ds.height() << "\n";
  o << "degradation "
    << nums({ds.degradation.blur_sigma0, ds.degradation.blur_gain, ds.degradation.noise_sigma}) << " "
    << ds.degradation.quant_levels << " " << ds.degradation.seed << "\n";
  o << "shading " << detail::vec_text(ds.shading.light_direction) << " " << detail::vec_text(ds.shading.background)
    << "\n";
  o << "camera_spec " << ds.camera_spec.width << " " << ds.camera_spec.height << " "
    << nums({ds.camera_spec.distance, ds.camera_spec.focal_scale}) << "\n";
  o << "trajectory "
    << nums({ds.trajectory.expression_range, ds.trajectory.yaw_range_deg, ds.trajectory.pitch_range_deg,
             ds.trajectory.min_cycles, ds.trajectory.max_cycles})
    << " " << (ds.trajectory.fixed ? 1 : 0) << "\n";
  const auto& rig = ds.rig;
  o << "rig " << rig.canonical.vertices.size() << " " << rig.canonical.triangles.size() << " " << rig.dimension()
    << " " << rig.markers.size() << "\n";
  for (const Vec3& v : rig.canonical.vertices) o << "v " << detail::vec_text(v) << "\n";
  for (const auto& [a, b, c] : rig.canonical.triangles) o << "f " << a << " " << b << " " << c << "\n";
  for (const auto& shape : rig.deltas)
    for (const Vec3& d : shape) o << "d " << detail::vec_text(d) << "\n";
  o << "markers";
  for (int m : rig.markers) o << " " << m;
  o << "\n";
  o << "frames " << ds.frames.size() << " " << (ds.has_clean() ? 1 : 0) << "\n";
  for (const Frame& f : ds.frames) {
    o << "frame " << f.index << " " << f.tier << " " << nums({f.yaw, f.pitch});
    for (double e : f.expression) o << " " << format_number(e);
    o << "\n";
    const Camera& c = f.camera;
    o << "camera " << c.width << " " << c.height << " " << nums({c.fx, c.fy, c.cx, c.cy}) << " "
      << detail::vec_text(c.position);
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) o << " " << format_number(c.rotation(r, k));
    o << "\n";
  }
  return o.str();
}

// Writes a dataset directory. The directory may exist but must not contain
// a previous dataset.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& config_echo = {}) {
  namespace fs = std::filesystem;
  ds.validate();
  fs::create_directories(dir / "coarse");
  if (fs::exists(dir / "meta.txt")) throw IoError("'" + dir.string() + "' already holds a dataset");
  for (std::size_t i = 0; i < ds.frames.size(); ++i)
    write_image(dir / "coarse" / frame_name(static_cast<int>(i)), ds.frames[i].image);
  if (ds.has_clean()) {
    fs::create_directories(dir / "clean");
    for (std::size_t i = 0; i < ds.clean.size(); ++i)
      write_image(dir / "clean" / frame_name(static_cast<int>(i)), ds.clean[i]);
  }
  if (!config_echo.empty()) {
    std::ofstream cfg(dir / "config.yaml");
    cfg << config_echo;
  }
  // meta.txt last: its presence marks a complete dataset.
  std::ofstream meta(dir / "meta.txt");
  meta << dataset_meta(ds);
  if (!meta) throw IoError("failed writing '" + (dir / "meta.txt").string() + "'");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.txt";
  std::ifstream in(meta_path);
  if (!in) throw IoError("'" + dir.string() + "' has no meta.txt");
  detail::MetaReader r(in, meta_path.string());
  int version = 0;
  r.read("ophavatar-dataset", version);
  if (version != 1) r.fail("unsupported dataset version " + std::to_string(version));

  Dataset ds;
  r.read("rig_preset", ds.rig_preset);
  if (ds.rig_preset == "-") ds.rig_preset.clear();
  r.read("seed", ds.seed);
  int width = 0, height = 0;
  r.read("size", width, height);
  r.read("degradation", ds.degradation.blur_sigma0, ds.degradation.blur_gain, ds.degradation.noise_sigma,
         ds.degradation.quant_levels, ds.degradation.seed);
  {
    auto ss = r.line("shading");
    ds.shading.light_direction = detail::read_vec(ss);
    ds.shading.background = detail::read_vec(ss);
    if (!ss) r.fail("malformed shading line");
  }
  r.read("camera_spec", ds.camera_spec.width, ds.camera_spec.height, ds.camera_spec.distance,
         ds.camera_spec.focal_scale);
  int fixed = 0;
  r.read("trajectory", ds.trajectory.expression_range, ds.trajectory.yaw_range_deg, ds.trajectory.pitch_range_deg,
         ds.trajectory.min_cycles, ds.trajectory.max_cycles, fixed);
  ds.trajectory.fixed = fixed != 0;

  std::size_t nv = 0, nt = 0, nd = 0, nm = 0;
  r.read("rig", nv, nt, nd, nm);
  auto& rig = ds.rig;
  rig.canonical.vertices.resize(nv);
  for (auto& v : rig.canonical.vertices) {
    auto ss = r.line("v");
    v = detail::read_vec(ss);
    if (!ss) r.fail("malformed vertex");
  }
  rig.canonical.triangles.resize(nt);
  for (auto& [a, b, c] : rig.canonical.triangles) r.read("f", a, b, c);
  rig.deltas.assign(nd, std::vector<Vec3>(nv));
  for (auto& shape : rig.deltas)
    for (auto& d : shape) {
      auto ss = r.line("d");
      d = detail::read_vec(ss);
      if (!ss) r.fail("malformed blendshape delta");
    }
  {
    auto ss = r.line("markers");
    rig.markers.resize(nm);
    for (int& m : rig.markers) ss >> m;
    if (!ss) r.fail("malformed markers line");
  }
  std::size_t n_frames = 0;
  int has_clean = 0;
  r.read("frames", n_frames, has_clean);
  ds.frames.resize(n_frames);
  for (Frame& f : ds.frames) {
    {
      auto ss = r.line("frame");
      ss >> f.index >> f.tier >> f.yaw >> f.pitch;
      f.expression.resize(nd);
      for (double& e : f.expression) ss >> e;
      if (!ss) r.fail("malformed frame line");
    }
    auto ss = r.line("camera");
    Camera& c = f.camera;
    ss >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy;
    c.position = detail::read_vec(ss);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) ss >> c.rotation(i, k);
    if (!ss) r.fail("malformed camera line");
  }
  for (std::size_t i = 0; i < n_frames; ++i) {
    ds.frames[i].image = read_image(dir / "coarse" / frame_name(static_cast<int>(i)));
    if (ds.frames[i].image.width != width || ds.frames[i].image.height != height)
      throw IoError(dir.string() + ": frame " + std::to_string(i) + " does not match the recorded size");
  }
  if (has_clean) {
    ds.clean.resize(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i)
      ds.clean[i] = read_image(dir / "clean" / frame_name(static_cast<int>(i)));
  }
  try {
    ds.validate();
  } catch (const InvalidInput& e) {
    throw IoError(dir.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace opha
