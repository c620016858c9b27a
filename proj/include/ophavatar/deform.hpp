#pragma once

#include "ophavatar/geometry.hpp"

#include <vector>

namespace opha {

constexpr double kDefaultInfluenceRadius = 0.15;

// Orthonormal frame of triangle abc: columns (unit edge a->b, normal x edge, unit normal).
inline Mat3 triangle_frame(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = (b - a).normalized();
  const Vec3 n = (b - a).cross(c - a).normalized();
  Mat3 frame;
  frame.col(0) = e1;
  frame.col(1) = n.cross(e1);
  frame.col(2) = n;
  return frame;
}

struct CanonicalPoint {
  Vec3 point = Vec3::Zero();
  // Rotation carrying deformed-space directions into canonical space.
  Mat3 rotation = Mat3::Identity();
  int triangle = -1;
  double distance = 0.0;
  bool valid = false;
};

// Per-frame mapping from the deformed (posed) mesh back to the canonical
// mesh: a point is attached to its nearest deformed triangle and carried
// rigidly with that triangle's local frame.
class DeformationContext {
public:
  DeformationContext(TriMesh deformed, TriMesh canonical,
                     double influence_radius = kDefaultInfluenceRadius)
      : deformed_(std::move(deformed)),
        canonical_(std::move(canonical)),
        radius_(influence_radius),
        bvh_(deformed_) {
    require(deformed_.same_topology(canonical_), "deformation: meshes must share topology");
    require(influence_radius > 0.0, "deformation: influence radius must be positive");
    const std::size_t n = deformed_.triangles.size();
    transport_.resize(n);
    frames_deformed_.resize(n);
    frames_canonical_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto& [a, b, c] = deformed_.triangles[t];
      frames_deformed_[t] =
          triangle_frame(deformed_.vertices[a], deformed_.vertices[b], deformed_.vertices[c]);
      frames_canonical_[t] =
          triangle_frame(canonical_.vertices[a], canonical_.vertices[b], canonical_.vertices[c]);
      transport_[t] = frames_canonical_[t] * frames_deformed_[t].transpose();
    }
  }

  // Full mapping for any p; valid reports whether p lies inside the shell.
  CanonicalPoint canonical_map(const Vec3& p) const {
    const auto hit = bvh_.nearest(p);
    return finish(p, *hit);
  }

  // Renderer fast path: the BVH query is cut off at the influence radius, so
  // points outside the shell cost one box test and come back invalid.
  CanonicalPoint canonical_map_bounded(const Vec3& p) const {
    const auto hit = bvh_.nearest(p, radius_);
    if (!hit) return {};
    return finish(p, *hit);
  }

  const TriMesh& deformed() const { return deformed_; }
  const TriMesh& canonical() const { return canonical_; }
  double influence_radius() const { return radius_; }
  const Mat3& deformed_frame(int t) const { return frames_deformed_[t]; }
  const Mat3& canonical_frame(int t) const { return frames_canonical_[t]; }
  const MeshBvh& bvh() const { return bvh_; }

private:
  CanonicalPoint finish(const Vec3& p, const NearestTriangle& hit) const {
    const auto& [a, b, c] = canonical_.triangles[hit.triangle];
    const Vec3 q_canon = hit.bary[0] * canonical_.vertices[a] + hit.bary[1] * canonical_.vertices[b] +
                         hit.bary[2] * canonical_.vertices[c];
    CanonicalPoint out;
    out.rotation = transport_[hit.triangle];
    out.point = q_canon + out.rotation * (p - hit.point);
    out.triangle = hit.triangle;
    out.distance = hit.distance;
    out.valid = hit.distance <= radius_;
    return out;
  }

  TriMesh deformed_;
  TriMesh canonical_;
  double radius_;
  MeshBvh bvh_;
  std::vector<Mat3> frames_deformed_;
  std::vector<Mat3> frames_canonical_;
  std::vector<Mat3> transport_;
};

}  // namespace opha
