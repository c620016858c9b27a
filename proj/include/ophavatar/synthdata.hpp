#pragma once

#include "ophavatar/geometry.hpp"
#include "ophavatar/image.hpp"
#include "ophavatar/parallel.hpp"

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace opha {

// ---------------------------------------------------------------------------
// Synthetic blendshape rig
// ---------------------------------------------------------------------------

// Unit icosphere: icosahedron with `subdivisions` rounds of 4-way splits.
inline TriMesh icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh mesh;
  mesh.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                   {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& v : mesh.vertices) v.normalize();
  mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const int id = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoints.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& [a, b, c] : mesh.triangles) {
      const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.triangles = std::move(next);
  }
  return mesh;
}

// Blendshape falloffs, all functions of the canonical vertex position.
namespace falloff {

inline double smooth_band(double y, double lo, double hi) {
  if (y <= lo || y >= hi) return 0.0;
  const double s = std::sin(kPi * (y - lo) / (hi - lo));
  return s * s;
}

// Jaw stretch: quadratic ramp below y = -0.2, reaching 1 at y = -1.
inline double jaw(const Vec3& c) {
  const double s = std::clamp((-0.2 - c.y()) / 0.8, 0.0, 1.0);
  return s * s;
}
// Cheek bulge: sin^2 band over y in (-0.5, 0.2).
inline double cheek(const Vec3& c) { return smooth_band(c.y(), -0.5, 0.2); }
// Brow lift: sin^2 band over y in (0.25, 0.75), front half only (weighted by z).
inline double brow(const Vec3& c) { return smooth_band(c.y(), 0.25, 0.75) * std::max(0.0, c.z()); }

constexpr double kJawAmplitude = 0.15;
constexpr double kCheekAmplitude = 0.10;
constexpr double kBrowAmplitude = 0.12;

}  // namespace falloff

inline std::vector<std::string> rig_presets() { return {"sphere_head", "ellipsoid_face"}; }

// Synthetic stand-in for a tracked face model: subdivided icosphere (1280
// triangles) with jaw-stretch, cheek-bulge and brow-lift blendshapes.
inline BlendshapeRig make_rig(const std::string& preset) {
  Vec3 scale;
  if (preset == "sphere_head") scale = Vec3(1.0, 1.0, 1.0);
  else if (preset == "ellipsoid_face") scale = Vec3(0.85, 1.0, 0.9);
  else throw InvalidInput("make_rig: unknown preset '" + preset + "'");

  BlendshapeRig rig;
  rig.canonical = icosphere(3);
  for (Vec3& v : rig.canonical.vertices) v = v.cwiseProduct(scale);
  const std::size_t nv = rig.canonical.vertices.size();
  rig.deltas.assign(3, std::vector<Vec3>(nv, Vec3::Zero()));
  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3& c = rig.canonical.vertices[i];
    rig.deltas[0][i] = Vec3(0.0, -falloff::kJawAmplitude * falloff::jaw(c), 0.0);
    const double rxz = std::hypot(c.x(), c.z());
    if (rxz > 1e-9)
      rig.deltas[1][i] = falloff::kCheekAmplitude * falloff::cheek(c) * Vec3(c.x() / rxz, 0.0, c.z() / rxz);
    rig.deltas[2][i] = Vec3(0.0, falloff::kBrowAmplitude * falloff::brow(c), 0.0);
  }

  // Markers: vertices nearest to fixed facial directions.
  const std::vector<Vec3> targets = {
      {0.0, 0.0, 1.0},    {0.0, -0.7, 0.7},  {0.7, -0.2, 0.7}, {-0.7, -0.2, 0.7},
      {0.35, 0.5, 0.8},   {-0.35, 0.5, 0.8}, {0.6, -0.6, 0.5}, {-0.6, -0.6, 0.5},
      {0.0, 0.8, 0.6},    {0.0, -0.4, 0.9}};
  for (const Vec3& dir : targets) {
    const Vec3 target = dir.normalized().cwiseProduct(scale);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nv; ++i) {
      const double d = (rig.canonical.vertices[i] - target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    if (std::find(rig.markers.begin(), rig.markers.end(), best) == rig.markers.end())
      rig.markers.push_back(best);
  }
  rig.validate();
  return rig;
}

// ---------------------------------------------------------------------------
// Ground-truth renderer (ray/triangle intersection, independent of the
// volumetric renderer)
// ---------------------------------------------------------------------------

struct ShadingConfig {
  Vec3 light_direction = Vec3(0.3, 0.4, 1.0).normalized();
  Vec3 background = Vec3::Ones();
  bool operator==(const ShadingConfig&) const = default;
};

// Procedural albedo of a canonical surface point.
inline Vec3 albedo(const Vec3& c) {
  const double s = std::sin(13.0 * c.x()) * std::sin(13.0 * c.y() + 1.3) * std::sin(13.0 * c.z() + 0.7);
  const Vec3 a = Vec3(0.80, 0.60, 0.50) + s * Vec3(0.18, 0.15, 0.12) + c.y() * Vec3(0.05, 0.03, -0.02);
  return a.cwiseMax(0.0).cwiseMin(1.0);
}

struct GroundTruthImage {
  Image rgb;
  Image alpha;  // 1 channel hit mask
};

// Moller-Trumbore; returns (t, u, v) for the hit with barycentrics (1-u-v, u, v).
inline std::optional<Vec3> ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b,
                                        const Vec3& c) {
  // Edge slack keeps rays through shared edges and vertices from slipping between triangles.
  constexpr double kEdge = 1e-12;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = d.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = o - a;
  const double u = tv.dot(pv) * inv;
  if (u < -kEdge || u > 1.0 + kEdge) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = d.dot(qv) * inv;
  if (v < -kEdge || u + v > 1.0 + kEdge) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (t <= 0.0) return std::nullopt;
  return Vec3(t, u, v);
}

inline GroundTruthImage ground_truth_render(const BlendshapeRig& rig, std::span<const double> expression,
                                            const Camera& camera, const ShadingConfig& shading = {}) {
  camera.validate();
  const TriMesh mesh = instance(rig, expression);
  const std::vector<Vec3> normals = vertex_normals(mesh);
  Vec3 center = Vec3::Zero();
  for (const Vec3& v : mesh.vertices) center += v;
  center /= static_cast<double>(mesh.vertices.size());
  double radius = 0.0;
  for (const Vec3& v : mesh.vertices) radius = std::max(radius, (v - center).norm());

  GroundTruthImage out{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1)};
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const Ray ray = generate_ray(camera, x, y);
      Vec3 color = shading.background;
      // Bounding-sphere rejection before the triangle loop.
      const Vec3 oc = ray.origin - center;
      const double b = oc.dot(ray.direction);
      const double disc = b * b - (oc.squaredNorm() - radius * radius);
      if (disc >= 0.0) {
        double best_t = std::numeric_limits<double>::infinity();
        int best_tri = -1;
        double bu = 0.0, bv = 0.0;
        for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
          const auto& [i0, i1, i2] = mesh.triangles[t];
          const auto hit = ray_triangle(ray.origin, ray.direction, mesh.vertices[i0], mesh.vertices[i1],
                                        mesh.vertices[i2]);
          if (hit && (*hit)[0] < best_t) {
            best_t = (*hit)[0];
            best_tri = t;
            bu = (*hit)[1];
            bv = (*hit)[2];
          }
        }
        if (best_tri >= 0) {
          const auto& [i0, i1, i2] = mesh.triangles[best_tri];
          const double bw = 1.0 - bu - bv;
          const Vec3 n = (bw * normals[i0] + bu * normals[i1] + bv * normals[i2]).normalized();
          const Vec3 canon = bw * rig.canonical.vertices[i0] + bu * rig.canonical.vertices[i1] +
                             bv * rig.canonical.vertices[i2];
          color = albedo(canon) * std::max(0.0, n.dot(shading.light_direction));
          out.alpha.at(x, y) = 1.0;
        }
      }
      for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = color[c];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

struct DegradationParams {
  double blur_sigma0 = 0.5;
  double blur_gain = 1.5;
  double noise_sigma = 0.06;
  int quant_levels = 32;
  std::uint64_t seed = 0;

  void validate() const {
    require(blur_sigma0 >= 0.0 && blur_gain >= 0.0 && noise_sigma >= 0.0,
            "degradation: parameters must be non-negative");
    require(quant_levels >= 2, "degradation: quant_levels must be >= 2");
  }
  bool operator==(const DegradationParams&) const = default;
};

// View-dependent blur, additive Gaussian noise (clamped), then uniform
// quantization to quant_levels. Deterministic per (params.seed, frame_seed).
inline Image degrade(const Image& image, double view_yaw, const DegradationParams& params,
                     std::uint64_t frame_seed) {
  params.validate();
  Image out = gaussian_blur(image, params.blur_sigma0 + params.blur_gain * std::abs(view_yaw));
  if (params.noise_sigma > 0.0) {
    std::mt19937_64 rng(derive_seed(params.seed, 0x6e6f6973, frame_seed));
    for (double& v : out.data) v += params.noise_sigma * normal01(rng);
  }
  clamp01(out);
  const double q = params.quant_levels - 1;
  for (double& v : out.data) v = std::round(v * q) / q;
  return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Frame {
  int index = 0;
  Image image;
  Camera camera;
  std::vector<double> expression;
  double yaw = 0.0;
  double pitch = 0.0;
  // 0 = coarse input, k = produced by dataset-update round k.
  int tier = 0;

  bool operator==(const Frame&) const = default;
};

struct TrajectorySpec {
  double expression_range = 1.0;  // |E_d| <= range
  double yaw_range_deg = 45.0;
  double pitch_range_deg = 15.0;
  double min_cycles = 1.0;
  double max_cycles = 3.0;
  bool fixed = false;  // every frame at E = 0, yaw = pitch = 0
  bool operator==(const TrajectorySpec&) const = default;
};

struct CameraSpec {
  int width = 48;
  int height = 48;
  double distance = 3.2;
  double focal_scale = 1.25;
  bool operator==(const CameraSpec&) const = default;
};

struct Dataset {
  std::string rig_preset;
  BlendshapeRig rig;
  std::vector<Frame> frames;
  DegradationParams degradation;
  ShadingConfig shading;
  CameraSpec camera_spec;
  TrajectorySpec trajectory;
  std::uint64_t seed = 0;
  // Ground-truth images per frame (synthetic/oracle mode only).
  std::vector<Image> clean;

  bool has_clean() const { return !clean.empty(); }
  int width() const { return frames.empty() ? 0 : frames.front().image.width; }
  int height() const { return frames.empty() ? 0 : frames.front().image.height; }

  void validate() const {
    rig.validate();
    require(!frames.empty(), "dataset: no frames");
    for (const Frame& f : frames) {
      require(f.image.width == width() && f.image.height == height() && f.image.channels == 3,
              "dataset: frame " + std::to_string(f.index) + " has mismatched image size");
      require(static_cast<int>(f.expression.size()) == rig.dimension(),
              "dataset: frame " + std::to_string(f.index) + " has wrong expression dimension");
      require(in_unit_range(f.image), "dataset: frame " + std::to_string(f.index) + " out of range");
      f.camera.validate();
    }
    if (has_clean()) {
      require(clean.size() == frames.size(), "dataset: clean image count mismatch");
      for (const Image& c : clean) require(c.width == width() && c.height == height(), "dataset: clean size mismatch");
    }
  }

  bool operator==(const Dataset&) const = default;
};

struct Condition {
  std::vector<double> expression;
  double yaw = 0.0;
  double pitch = 0.0;
};

// Smooth pseudo-random trajectories: every expression dimension and the
// camera yaw/pitch follow a low-frequency sinusoid with seeded frequency and phase.
inline std::vector<Condition> sample_trajectory(int n_frames, int dimension, const TrajectorySpec& spec,
                                                std::uint64_t seed) {
  require(n_frames >= 1, "trajectory: n_frames must be >= 1");
  std::vector<Condition> out(n_frames);
  if (spec.fixed) {
    for (auto& c : out) c.expression.assign(dimension, 0.0);
    return out;
  }
  std::mt19937_64 rng(derive_seed(seed, 0x747261));
  struct Wave {
    double cycles, phase;
  };
  auto wave = [&] { return Wave{uniform(rng, spec.min_cycles, spec.max_cycles), uniform(rng, 0.0, 2.0 * kPi)}; };
  std::vector<Wave> expr(dimension);
  for (auto& w : expr) w = wave();
  const Wave yaw = wave(), pitch = wave();
  for (int i = 0; i < n_frames; ++i) {
    const double tau = static_cast<double>(i) / n_frames;
    Condition& c = out[i];
    c.expression.resize(dimension);
    for (int d = 0; d < dimension; ++d)
      c.expression[d] = spec.expression_range * std::sin(2.0 * kPi * expr[d].cycles * tau + expr[d].phase);
    c.yaw = deg2rad(spec.yaw_range_deg) * std::sin(2.0 * kPi * yaw.cycles * tau + yaw.phase);
    c.pitch = deg2rad(spec.pitch_range_deg) * std::sin(2.0 * kPi * pitch.cycles * tau + pitch.phase);
  }
  return out;
}

// Independent uniform draws inside the trajectory ranges (held-out conditions).
inline std::vector<Condition> sample_conditions(int n, int dimension, const TrajectorySpec& spec,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x686f6c64));
  std::vector<Condition> out(n);
  for (auto& c : out) {
    c.expression.resize(dimension);
    for (double& e : c.expression) e = uniform(rng, -spec.expression_range, spec.expression_range);
    c.yaw = deg2rad(uniform(rng, -spec.yaw_range_deg, spec.yaw_range_deg));
    c.pitch = deg2rad(uniform(rng, -spec.pitch_range_deg, spec.pitch_range_deg));
  }
  return out;
}

inline Camera camera_for(const CameraSpec& spec, double yaw, double pitch) {
  return orbit_camera(yaw, pitch, spec.distance, spec.width, spec.height, spec.focal_scale);
}

inline Dataset make_dataset(const BlendshapeRig& rig, int n_frames, const TrajectorySpec& trajectory,
                            const CameraSpec& camera_spec, const DegradationParams& params,
                            std::uint64_t seed, bool keep_clean = true, const ShadingConfig& shading = {},
                            int threads = 0) {
  rig.validate();
  params.validate();
  Dataset ds;
  ds.rig = rig;
  ds.degradation = params;
  ds.shading = shading;
  ds.camera_spec = camera_spec;
  ds.trajectory = trajectory;
  ds.seed = seed;
  const auto conditions = sample_trajectory(n_frames, rig.dimension(), trajectory, seed);
  ds.frames.resize(n_frames);
  std::vector<Image> clean(n_frames);
  parallel_for(
      static_cast<std::size_t>(n_frames),
      [&](std::size_t i) {
        const Condition& c = conditions[i];
        Frame& f = ds.frames[i];
        f.index = static_cast<int>(i);
        f.camera = camera_for(camera_spec, c.yaw, c.pitch);
        f.expression = c.expression;
        f.yaw = c.yaw;
        f.pitch = c.pitch;
        f.tier = 0;
        clean[i] = ground_truth_render(rig, f.expression, f.camera, shading).rgb;
        f.image = degrade(clean[i], c.yaw, params, i);
      },
      threads);
  if (keep_clean) ds.clean = std::move(clean);
  ds.validate();
  return ds;
}

}  // namespace opha
