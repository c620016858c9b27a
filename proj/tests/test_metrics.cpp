#include "helpers.hpp"
#include "ophavatar/metrics.hpp"
#include "ophavatar/synthdata.hpp"

#include <gtest/gtest.h>

using namespace opha;
using opha::test::Gen;

TEST(Psnr, UniformOffsetGivesTwentyDecibels) {
  Gen g(60);
  for (int i = 0; i < 20; ++i) {
    const Image a = g.image(g.integer(3, 30), g.integer(3, 30));
    Image b = a;
    for (double& v : b.data) v += (g.uniform(0, 1) < 0.5 ? 0.1 : -0.1);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  }
}

TEST(Psnr, IdenticalImagesHitTheCap) {
  Gen g(61);
  const Image a = g.image(8, 8);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_THROW(psnr(a, g.image(8, 9)), InvalidInput);
}

TEST(Psnr, SymmetricAndMonotoneInError) {
  Gen g(62);
  const Image a = g.image(16, 16), b = g.image(16, 16);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  Image near = a;
  for (std::size_t i = 0; i < near.data.size(); ++i) near.data[i] = 0.9 * a.data[i] + 0.1 * b.data[i];
  EXPECT_GT(psnr(a, near), psnr(a, b));
}

TEST(Ssim, IdenticalImagesScoreOne) {
  Gen g(63);
  for (int i = 0; i < 10; ++i) {
    const Image a = g.image(g.integer(4, 40), g.integer(4, 40));
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  }
  const Image flat = filled(12, 12, Vec3(0.4, 0.4, 0.4));
  EXPECT_NEAR(ssim(flat, flat), 1.0, 1e-9);
}

TEST(Ssim, DropsWithNoiseAndIsSymmetric) {
  const Image clean = opha::test::smooth_image(32, 32, 4);
  Gen g(64);
  double prev = 1.0;
  for (double sigma : {0.02, 0.05, 0.1, 0.2}) {
    Image noisy = clean;
    Gen n(65);
    for (double& v : noisy.data) v = std::clamp(v + sigma * normal01(n.rng), 0.0, 1.0);
    const double s = ssim(clean, noisy);
    EXPECT_LT(s, prev);
    EXPECT_NEAR(s, ssim(noisy, clean), 1e-12);
    prev = s;
  }
}

TEST(Luma, Rec601Weights) {
  const Image px = filled(1, 1, Vec3(1.0, 0.0, 0.0));
  EXPECT_NEAR(luma(px).at(0, 0), 0.299, 1e-12);
  EXPECT_NEAR(luma(filled(1, 1, Vec3(1, 1, 1))).at(0, 0), 1.0, 1e-12);
}

TEST(Evaluate, IdenticalSetsScorePerfect) {
  Gen g(66);
  std::vector<Image> a = {g.image(10, 10), g.image(10, 10)};
  const EvalReport r = evaluate_images(a, a);
  EXPECT_EQ(r.mean_psnr, kPsnrCap);
  EXPECT_NEAR(r.mean_ssim, 1.0, 1e-9);
  std::vector<Image> b = {a[0]};
  EXPECT_THROW(evaluate_images(a, b), InvalidInput);
}

namespace {

KeypointView view(double yaw, const std::vector<double>& e) {
  return {e, orbit_camera(yaw, 0.0, 3.2, 48, 48)};
}

}  // namespace

TEST(Akd, ZeroForIdenticalViews) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const KeypointView v = view(0.3, {0.5, 0.5, 0.5});
  const AkdResult r = akd_analog(rig, v, v);
  EXPECT_EQ(r.akd, 0.0);
  EXPECT_EQ(r.used, static_cast<int>(rig.markers.size()));
}

TEST(Akd, OnePixelCameraTurnIsAboutOnePixel) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const KeypointView gt = view(0.0, {0, 0, 0});
  KeypointView turned = gt;
  const double delta = std::atan(1.0 / gt.camera.fx);
  turned.camera.rotation = gt.camera.rotation * Eigen::AngleAxisd(delta, Vec3::UnitY()).toRotationMatrix();
  const AkdResult r = akd_analog(rig, turned, gt);
  EXPECT_NEAR(r.akd, 1.0, 0.2);
}

TEST(Akd, ExpressionErrorIsMeasured) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const AkdResult r = akd_analog(rig, view(0.0, {1.0, 0.0, 0.0}), view(0.0, {0.0, 0.0, 0.0}));
  EXPECT_GT(r.akd, 0.1);
}

TEST(Akd, ExactDepthReprojectsExactly) {
  const BlendshapeRig rig = make_rig("sphere_head");
  const KeypointView v = view(0.2, {0.3, -0.2, 0.4});
  const TriMesh mesh = instance(rig, v.expression);
  Image depth(48, 48, 1);
  const auto visible = visible_markers(rig, v);
  ASSERT_FALSE(visible.empty());
  for (int m : visible) {
    const auto p = project(v.camera, mesh.vertices[m]);
    ASSERT_TRUE(p);
    depth.at(static_cast<int>((*p)[0]), static_cast<int>((*p)[1])) = (mesh.vertices[m] - v.camera.position).norm();
  }
  const AkdResult exact = akd_analog(rig, v, v, &depth);
  EXPECT_EQ(exact.depth_used, static_cast<int>(visible.size()));
  EXPECT_LT(exact.depth_reprojection, 1e-9);

  for (double& d : depth.data)
    if (d > 0.0) d += 0.1;
  EXPECT_GT(akd_analog(rig, v, v, &depth).depth_reprojection, 0.5);
}

TEST(Akd, SideViewOrbit) {
  const Camera cam = orbit_camera(0.1, 0.2, 3.0, 32, 32);
  const Camera side = orbit_about_y(cam, 0.5);
  const Camera direct = orbit_camera(0.6, 0.2, 3.0, 32, 32);
  EXPECT_LT((side.position - direct.position).norm(), 1e-12);
  EXPECT_LT((side.rotation - direct.rotation).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Akd, BackFacingMarkersAreNotVisible) {
  const BlendshapeRig rig = make_rig("sphere_head");
  EXPECT_EQ(visible_markers(rig, view(kPi, {0, 0, 0})).size(), 0u);
  EXPECT_EQ(visible_markers(rig, view(0.0, {0, 0, 0})).size(), rig.markers.size());
}
