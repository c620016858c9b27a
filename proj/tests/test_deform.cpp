#include "helpers.hpp"
#include "ophavatar/deform.hpp"
#include "ophavatar/synthdata.hpp"

#include <gtest/gtest.h>

using namespace opha;
using opha::test::Gen;

namespace {

// Point within `shell` of a random surface point of mesh.
Vec3 near_surface(Gen& g, const TriMesh& mesh, double shell, int* tri = nullptr, Vec3* bary = nullptr) {
  const int t = g.integer(0, static_cast<int>(mesh.triangles.size()) - 1);
  double u = g.uniform(0, 1), v = g.uniform(0, 1);
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  const auto& [a, b, c] = mesh.triangles[t];
  const Vec3 p = (1 - u - v) * mesh.vertices[a] + u * mesh.vertices[b] + v * mesh.vertices[c];
  if (tri) *tri = t;
  if (bary) *bary = Vec3(1 - u - v, u, v);
  return p + shell * g.uniform(-1, 1) * g.unit();
}

}  // namespace

TEST(Deform, IdentityMeshGivesIdentityMap) {
  const TriMesh mesh = make_rig("sphere_head").canonical;
  const DeformationContext ctx(mesh, mesh, 0.2);
  Gen g(10);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p = near_surface(g, mesh, 0.15);
    const CanonicalPoint c = ctx.canonical_map(p);
    EXPECT_LT((c.point - p).norm(), 1e-12);
    EXPECT_LT((c.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Deform, RigidMotionIsUndone) {
  const TriMesh canonical = make_rig("ellipsoid_face").canonical;
  Gen g(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 R = g.rotation();
    const Vec3 t = g.vec(-0.5, 0.5);
    TriMesh moved = canonical;
    for (Vec3& v : moved.vertices) v = R * v + t;
    const DeformationContext ctx(moved, canonical, 0.2);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p = near_surface(g, moved, 0.1);
      const CanonicalPoint c = ctx.canonical_map(p);
      EXPECT_LT((c.point - R.transpose() * (p - t)).norm(), 1e-6);
      EXPECT_LT((c.rotation - R.transpose()).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Deform, SurfacePointsLandOnCanonicalSurface) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const std::vector<double> e = {0.9, -0.6, 0.8};
  const TriMesh deformed = instance(rig, e);
  const DeformationContext ctx(deformed, rig.canonical);
  Gen g(12);
  for (int i = 0; i < 2000; ++i) {
    int tri = 0;
    Vec3 bary;
    const Vec3 p = near_surface(g, deformed, 0.0, &tri, &bary);
    const CanonicalPoint c = ctx.canonical_map(p);
    EXPECT_LT(c.distance, 1e-9);
    EXPECT_LT(nearest_triangle_brute(c.point, rig.canonical).distance, 1e-9);
  }
}

TEST(Deform, ContinuousForTinyExpression) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const std::vector<double> e = {1e-6, 1e-6, 1e-6};
  const DeformationContext ctx(instance(rig, e), rig.canonical);
  Gen g(13);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = near_surface(g, rig.canonical, 0.1);
    EXPECT_LT((ctx.canonical_map(p).point - p).norm(), 1e-5);
  }
}

TEST(Deform, BoundedMapAgreesInsideShell) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const std::vector<double> e = {-0.5, 0.3, 0.2};
  const DeformationContext ctx(instance(rig, e), rig.canonical, 0.15);
  Gen g(14);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = g.vec(-1.3, 1.3);
    const CanonicalPoint full = ctx.canonical_map(p);
    const CanonicalPoint bounded = ctx.canonical_map_bounded(p);
    ASSERT_EQ(full.valid, bounded.valid);
    if (full.valid) EXPECT_EQ(full.point, bounded.point);
  }
}

TEST(Deform, TransportIsRotation) {
  const BlendshapeRig rig = make_rig("ellipsoid_face");
  const std::vector<double> e = {1.0, 1.0, -1.0};
  const DeformationContext ctx(instance(rig, e), rig.canonical);
  for (std::size_t t = 0; t < rig.canonical.triangles.size(); t += 17) {
    const Mat3 f = ctx.deformed_frame(static_cast<int>(t));
    EXPECT_LT((f.transpose() * f - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(f.determinant(), 1.0, 1e-12);
  }
}

TEST(Deform, RejectsTopologyMismatch) {
  const TriMesh a = make_rig("sphere_head").canonical;
  TriMesh b = a;
  b.triangles.pop_back();
  EXPECT_THROW(DeformationContext(a, b), InvalidInput);
  EXPECT_THROW(DeformationContext(a, a, 0.0), InvalidInput);
}
