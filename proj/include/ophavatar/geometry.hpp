#pragma once

#include "ophavatar/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <climits>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace opha {

// The canonical head fits in [-1, 1]^3; everything the renderer samples
// lives in this slightly larger box.
constexpr double kSceneBoxMin = -1.2;
constexpr double kSceneBoxMax = 1.2;

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

// Pinhole camera. Camera space looks down -z with +y up and +x right; image
// rows grow downward. world_from_camera maps camera-space directions to world.
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.5, cy = 0.5;
  int width = 1, height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  void validate() const {
    require(width > 0 && height > 0, "camera: image size must be positive");
    require(fx > 0.0 && fy > 0.0, "camera: focal lengths must be positive");
    require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height,
            "camera: principal point outside the image");
    require(all_finite(position), "camera: non-finite position");
    const Mat3 gram = rotation.transpose() * rotation;
    require((gram - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9,
            "camera: rotation is not orthonormal");
    require(std::abs(rotation.determinant() - 1.0) <= 1e-9, "camera: rotation determinant != +1");
  }

  bool operator==(const Camera&) const = default;
};

// Camera on a sphere of radius `distance` around the origin, looking at the
// origin. yaw rotates about +y (yaw = 0 sees the face, which points to +z);
// pitch lifts the camera toward +y.
inline Camera orbit_camera(double yaw, double pitch, double distance, int width, int height,
                           double focal_scale = 1.25) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = focal_scale * width;
  cam.fy = focal_scale * width;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.position = distance * Vec3(std::sin(yaw) * std::cos(pitch), std::sin(pitch),
                                 std::cos(yaw) * std::cos(pitch));
  const Vec3 z_axis = cam.position.normalized();
  const Vec3 x_axis = Vec3::UnitY().cross(z_axis).normalized();
  const Vec3 y_axis = z_axis.cross(x_axis);
  cam.rotation.col(0) = x_axis;
  cam.rotation.col(1) = y_axis;
  cam.rotation.col(2) = z_axis;
  return cam;
}

// Continuous image coordinates of a world point (pixel (i, j) covers
// [i, i+1) x [j, j+1)); nullopt when the point is not in front of the camera.
inline std::optional<Eigen::Vector2d> project(const Camera& cam, const Vec3& p) {
  const Vec3 local = cam.rotation.transpose() * (p - cam.position);
  if (local.z() >= 0.0) return std::nullopt;
  const double depth = -local.z();
  return Eigen::Vector2d(cam.cx + cam.fx * local.x() / depth, cam.cy - cam.fy * local.y() / depth);
}

// ---------------------------------------------------------------------------
// Rays
// ---------------------------------------------------------------------------

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;
  // false when the ray misses the scene box; such rays render as background.
  bool hit = false;

  Vec3 at(double t) const { return origin + t * direction; }
};

// Slab test against an axis-aligned box. Returns [t0, t1] clipped to t >= 0.
inline std::optional<std::pair<double, double>> intersect_box(const Vec3& origin, const Vec3& dir,
                                                              double lo, double hi) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < lo || origin[a] > hi) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / dir[a];
    double ta = (lo - origin[a]) * inv;
    double tb = (hi - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

// Ray through continuous image coordinates (u, v).
inline Ray ray_through(const Camera& cam, double u, double v) {
  const Vec3 local((u - cam.cx) / cam.fx, -(v - cam.cy) / cam.fy, -1.0);
  Ray ray;
  ray.origin = cam.position;
  ray.direction = (cam.rotation * local).normalized();
  if (auto span = intersect_box(ray.origin, ray.direction, kSceneBoxMin, kSceneBoxMax)) {
    ray.t_near = span->first;
    ray.t_far = span->second;
    ray.hit = true;
  }
  return ray;
}

// Ray through the center of pixel (px, py).
inline Ray generate_ray(const Camera& cam, int px, int py) {
  require(px >= 0 && px < cam.width && py >= 0 && py < cam.height,
          "generate_ray: pixel outside the image");
  return ray_through(cam, px + 0.5, py + 0.5);
}

// ---------------------------------------------------------------------------
// Meshes and blendshape rigs
// ---------------------------------------------------------------------------

using Triangle = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  void validate() const {
    require(!triangles.empty(), "mesh: no triangles");
    const int nv = static_cast<int>(vertices.size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      for (int i : triangles[t])
        require(i >= 0 && i < nv, "mesh: triangle " + std::to_string(t) + " has invalid index");
      require(area(t) > 1e-12, "mesh: triangle " + std::to_string(t) + " is degenerate");
    }
    for (const Vec3& v : vertices) require(all_finite(v), "mesh: non-finite vertex");
  }

  double area(std::size_t t) const {
    const auto& [a, b, c] = triangles[t];
    return 0.5 * (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]).norm();
  }

  bool same_topology(const TriMesh& o) const {
    return vertices.size() == o.vertices.size() && triangles == o.triangles;
  }

  bool operator==(const TriMesh&) const = default;
};

// Area-weighted vertex normals (normalized sum of unnormalized face normals).
inline std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (const auto& [a, b, c] : mesh.triangles) {
    const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
    normals[a] += n;
    normals[b] += n;
    normals[c] += n;
  }
  for (Vec3& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

struct BlendshapeRig {
  TriMesh canonical;
  std::vector<std::vector<Vec3>> deltas;
  std::vector<int> markers;

  int dimension() const { return static_cast<int>(deltas.size()); }

  void validate() const {
    canonical.validate();
    require(!deltas.empty(), "rig: at least one blendshape is required");
    for (const auto& d : deltas)
      require(d.size() == canonical.vertices.size(), "rig: blendshape vertex count mismatch");
    for (int m : markers)
      require(m >= 0 && m < static_cast<int>(canonical.vertices.size()), "rig: invalid marker");
  }

  bool operator==(const BlendshapeRig&) const = default;
};

// canonical + sum_d E_d * delta_d, same topology.
inline TriMesh instance(const BlendshapeRig& rig, std::span<const double> expression) {
  if (static_cast<int>(expression.size()) != rig.dimension())
    throw InvalidInput("instance: expected " + std::to_string(rig.dimension()) +
                       " expression coefficients, got " + std::to_string(expression.size()));
  TriMesh mesh = rig.canonical;
  for (std::size_t d = 0; d < rig.deltas.size(); ++d) {
    const double e = expression[d];
    if (e == 0.0) continue;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) mesh.vertices[v] += e * rig.deltas[d][v];
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Point-triangle queries
// ---------------------------------------------------------------------------

struct ClosestPoint {
  Vec3 point;
  Vec3 bary;  // weights of (a, b, c)
};

// Closest point on triangle abc via Voronoi-region classification.
inline ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                              const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return {a, Vec3(1, 0, 0)};

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return {b, Vec3(0, 1, 0)};

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return {(1.0 - v) * a + v * b, Vec3(1.0 - v, v, 0.0)};
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return {c, Vec3(0, 0, 1)};

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return {(1.0 - w) * a + w * c, Vec3(1.0 - w, 0.0, w)};
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {(1.0 - w) * b + w * c, Vec3(0.0, 1.0 - w, w)};
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  const double u = std::max(0.0, 1.0 - v - w);
  return {u * a + v * b + w * c, Vec3(u, v, w)};
}

struct NearestTriangle {
  int triangle = -1;
  Vec3 bary = Vec3::Zero();
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
};

namespace detail {

// Strict ordering on (squared distance, triangle index): lowest index wins ties.
inline bool closer(double d2, int tri, double best_d2, int best_tri) {
  return d2 < best_d2 || (d2 == best_d2 && tri < best_tri);
}

}  // namespace detail

// Linear scan over all triangles; the reference the BVH is checked against.
inline NearestTriangle nearest_triangle_brute(const Vec3& p, const TriMesh& mesh) {
  require(!mesh.triangles.empty(), "nearest_triangle: empty mesh");
  double best_d2 = std::numeric_limits<double>::infinity();
  int best_tri = INT_MAX;
  ClosestPoint best_cp{};
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const auto& [a, b, c] = mesh.triangles[t];
    const ClosestPoint cp =
        closest_point_on_triangle(p, mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    const double d2 = (p - cp.point).squaredNorm();
    if (detail::closer(d2, t, best_d2, best_tri)) {
      best_d2 = d2;
      best_tri = t;
      best_cp = cp;
    }
  }
  return {best_tri, best_cp.bary, best_cp.point, std::sqrt(best_d2)};
}

// Static axis-aligned bounding volume hierarchy over the triangles of one
// mesh instance. Queries return exactly what nearest_triangle_brute returns.
class MeshBvh {
public:
  static constexpr int kLeafSize = 4;

  MeshBvh() = default;

  explicit MeshBvh(const TriMesh& mesh) {
    require(!mesh.triangles.empty(), "bvh: empty mesh");
    const int n = static_cast<int>(mesh.triangles.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Vec3> centroids(n);
    for (int t = 0; t < n; ++t) {
      const auto& [a, b, c] = mesh.triangles[t];
      centroids[t] = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]) / 3.0;
    }
    nodes_.reserve(4 * n / kLeafSize + 1);
    nodes_.emplace_back();
    build(0, mesh, centroids, order, 0, n);
    tri_ids_ = order;
    corners_.reserve(3 * n);
    for (int t : order)
      for (int v : mesh.triangles[t]) corners_.push_back(mesh.vertices[v]);
  }

  // Nearest triangle within max_distance (inclusive); nullopt if none.
  std::optional<NearestTriangle> nearest(
      const Vec3& p, double max_distance = std::numeric_limits<double>::infinity()) const {
    double best_d2 = max_distance * max_distance;
    int best_tri = INT_MAX;
    ClosestPoint best_cp{};
    if (nodes_.empty()) return std::nullopt;

    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (node.box.squaredExteriorDistance(p) > best_d2) continue;
      if (node.count > 0) {
        for (int k = node.first; k < node.first + node.count; ++k) {
          const ClosestPoint cp =
              closest_point_on_triangle(p, corners_[3 * k], corners_[3 * k + 1], corners_[3 * k + 2]);
          const double d2 = (p - cp.point).squaredNorm();
          if (detail::closer(d2, tri_ids_[k], best_d2, best_tri)) {
            best_d2 = d2;
            best_tri = tri_ids_[k];
            best_cp = cp;
          }
        }
        continue;
      }
      const int l = node.first, r = node.first + 1;
      const double dl = nodes_[l].box.squaredExteriorDistance(p);
      const double dr = nodes_[r].box.squaredExteriorDistance(p);
      // Push the farther child first so the nearer one is popped next.
      if (dl <= dr) {
        stack[top++] = r;
        stack[top++] = l;
      } else {
        stack[top++] = l;
        stack[top++] = r;
      }
    }
    if (best_tri == INT_MAX) return std::nullopt;
    return NearestTriangle{best_tri, best_cp.bary, best_cp.point, std::sqrt(best_d2)};
  }

  Eigen::AlignedBox3d bounds() const { return nodes_.empty() ? Eigen::AlignedBox3d() : nodes_[0].box; }
  std::size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Eigen::AlignedBox3d box;
    int first = 0;  // leaf: offset into tri_ids_; inner: index of left child (right = first + 1)
    int count = 0;  // > 0 for leaves
  };

  void build(int index, const TriMesh& mesh, const std::vector<Vec3>& centroids,
             std::vector<int>& order, int begin, int end) {
    Eigen::AlignedBox3d box, cbox;
    for (int k = begin; k < end; ++k) {
      for (int v : mesh.triangles[order[k]]) box.extend(mesh.vertices[v]);
      cbox.extend(centroids[order[k]]);
    }
    nodes_[index].box = box;
    if (end - begin <= kLeafSize) {
      nodes_[index].first = begin;
      nodes_[index].count = end - begin;
      return;
    }
    int axis = 0;
    cbox.sizes().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [&](int a, int b) {
                       const double ca = centroids[a][axis], cb = centroids[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    // Children are allocated as an adjacent pair.
    const int left = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[index].first = left;
    nodes_[index].count = 0;
    build(left, mesh, centroids, order, begin, mid);
    build(left + 1, mesh, centroids, order, mid, end);
  }

  std::vector<Node> nodes_;
  std::vector<int> tri_ids_;
  std::vector<Vec3> corners_;
};

// ---------------------------------------------------------------------------
// OBJ subset (v / f lines only)
// ---------------------------------------------------------------------------

inline void write_obj(std::ostream& out, const TriMesh& mesh) {
  for (const Vec3& v : mesh.vertices)
    out << "v " << format_number(v.x()) << ' ' << format_number(v.y()) << ' '
        << format_number(v.z()) << '\n';
  for (const auto& [a, b, c] : mesh.triangles)
    out << "f " << a + 1 << ' ' << b + 1 << ' ' << c + 1 << '\n';
}

inline TriMesh read_obj(std::istream& in) {
  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z()))
        throw InvalidInput("obj line " + std::to_string(line_no) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      if (idx.size() != 3)
        throw InvalidInput("obj line " + std::to_string(line_no) + ": only triangles are supported");
      mesh.triangles.push_back({idx[0], idx[1], idx[2]});
    }
  }
  mesh.validate();
  return mesh;
}

}  // namespace opha
