#include "helpers.hpp"
#include "ophavatar/pipeline.hpp"

#include <gtest/gtest.h>

using namespace opha;
using opha::test::Gen;

TEST(Loss, ConstantOffsetInLinearRegime) {
  const std::vector<Vec3> target(10, Vec3(0.2, 0.3, 0.4));
  std::vector<Vec3> rendered = target;
  for (Vec3& v : rendered) v += Vec3::Constant(0.5);
  const LossResult r = photometric_loss(rendered, target);
  EXPECT_NEAR(r.loss, 0.5 - kSmoothL1Delta / 2, 1e-15);
  const LossResult l2 = photometric_loss(rendered, target, LossKind::l2);
  EXPECT_NEAR(l2.loss, 0.25, 1e-15);
}

TEST(Loss, GradientMatchesFiniteDifference) {
  Gen g(70);
  for (LossKind kind : {LossKind::smooth_l1, LossKind::l2}) {
    std::vector<Vec3> rendered(16), target(16);
    for (int i = 0; i < 16; ++i) {
      target[i] = g.vec(0, 1);
      rendered[i] = target[i] + g.vec(-0.2, 0.2);
    }
    const LossResult r = photometric_loss(rendered, target, kind);
    for (int i = 0; i < 16; ++i)
      for (int c = 0; c < 3; ++c) {
        const double h = 1e-7;
        auto p = rendered, m = rendered;
        p[i][c] += h;
        m[i][c] -= h;
        const double fd = (photometric_loss(p, target, kind).loss - photometric_loss(m, target, kind).loss) / (2 * h);
        EXPECT_NEAR(r.d_rgb[i][c], fd, 1e-8);
      }
  }
}

TEST(Loss, EmptyAndMismatchedBatches) {
  std::vector<Vec3> none;
  EXPECT_EQ(photometric_loss(none, none).loss, 0.0);
  std::vector<Vec3> one(1);
  EXPECT_THROW(photometric_loss(one, none), InvalidInput);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Gen g(71);
  std::vector<double> p(50);
  for (double& v : p) v = g.uniform(-1, 1);
  const auto before = p;
  const std::vector<double> zero(50, 0.0);
  AdamState s;
  for (std::uint64_t t = 1; t <= 10; ++t) adam_step(p, zero, s, {}, t);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepHasUnitNormalizedMagnitude) {
  Gen g(72);
  std::vector<double> p(50, 0.0), grad(50);
  for (double& v : grad) v = g.uniform(-5, 5);
  AdamState s;
  const AdamParams hp{0.01, 0.9, 0.99, 1e-30};
  adam_step(p, grad, s, hp, 1);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(std::abs(p[i]) / hp.lr, 1.0, 1e-12);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i] < 0.0, grad[i] > 0.0);
}

namespace {

// Runs 100 Adam steps on sum_i scale_i (p_i - c_i)^2 and returns |p - c|.
double bowl_distance(std::vector<double> p, const std::vector<double>& c, const std::vector<double>& scale,
                     const AdamParams& hp) {
  std::vector<double> grad(p.size());
  AdamState s;
  for (std::uint64_t t = 1; t <= 100; ++t) {
    for (std::size_t i = 0; i < p.size(); ++i) grad[i] = 2.0 * scale[i] * (p[i] - c[i]);
    adam_step(p, grad, s, hp, t);
  }
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += (p[i] - c[i]) * (p[i] - c[i]);
  return std::sqrt(d);
}

}  // namespace

TEST(Adam, ConvergesOnTwoDimensionalBowl) {
  // Constant-rate Adam ends in a small limit cycle whose size depends on the
  // start, so the tight bound is pinned to one bowl.
  const AdamParams hp{0.1, 0.9, 0.99, 1e-10};
  EXPECT_LT(bowl_distance({0.5, 0.5}, {0.0, 0.0}, {1.0, 1.0}, hp), 1e-3);

  Gen g(73);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> p = {g.uniform(-1, 1), g.uniform(-1, 1)}, c = {g.uniform(-1, 1), g.uniform(-1, 1)};
    const std::vector<double> scale = {std::exp(g.uniform(-1, 1)), std::exp(g.uniform(-1, 1))};
    EXPECT_LT(bowl_distance(p, c, scale, {0.05, 0.9, 0.99, 1e-10}), 2e-2);
  }
}

TEST(Adam, NonFiniteGradientIsRejectedWithoutUpdate) {
  std::vector<double> p = {1.0, 2.0}, grad = {0.5, std::numeric_limits<double>::infinity()};
  AdamState s;
  EXPECT_THROW(adam_step(p, grad, s, {}, 1), NumericError);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(adam_step(p, grad, s, {}, 0), InvalidInput);
}

namespace {

AvatarSpec small_spec(int n_samples) {
  AvatarSpec s;
  s.grid.levels = 6;
  s.grid.log2_table_size = 12;
  s.hidden = 32;
  s.render.n_samples = n_samples;
  return s;
}

Dataset tiny_dataset(int frames, int size, bool fixed, double noise) {
  TrajectorySpec traj;
  traj.fixed = fixed;
  CameraSpec cam;
  cam.width = cam.height = size;
  DegradationParams p;
  p.noise_sigma = noise;
  if (noise == 0.0) {
    p.blur_sigma0 = p.blur_gain = 0.0;
    p.quant_levels = 256;
  }
  p.seed = 5;
  return make_dataset(make_rig("sphere_head"), frames, traj, cam, p, 3);
}

}  // namespace

TEST(Train, SmokeLossDropsBelowFifthOfInitial) {
  const Dataset ds = tiny_dataset(1, 32, true, 0.0);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.seed = 1;
  const TrainResult r = train(create_avatar(ds.rig, small_spec(64), 2), ds, cfg);
  ASSERT_GE(r.curve.size(), 2u);
  EXPECT_EQ(r.curve.front().iteration, 0);
  EXPECT_EQ(r.curve.back().iteration, 499);
  EXPECT_LT(r.curve.back().window_mean, 0.2 * r.curve.front().loss);
  EXPECT_EQ(r.avatar.provenance.iterations, 500u);
}

TEST(Train, IndependentOfWorkerCount) {
  const Dataset ds = tiny_dataset(3, 16, false, 0.03);
  TrainConfig cfg;
  cfg.iterations = 20;
  cfg.rays_per_batch = 200;  // partial last chunk
  cfg.seed = 4;
  const Avatar init = create_avatar(ds.rig, small_spec(32), 9);
  cfg.threads = 1;
  const TrainResult a = train(init, ds, cfg);
  cfg.threads = 3;
  const TrainResult b = train(init, ds, cfg);
  EXPECT_EQ(a.avatar, b.avatar);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].loss, b.curve[i].loss);
}

TEST(Train, ZeroIterationsReturnsInput) {
  const Dataset ds = tiny_dataset(2, 12, false, 0.03);
  TrainConfig cfg;
  cfg.iterations = 0;
  const Avatar init = create_avatar(ds.rig, small_spec(16), 1);
  const TrainResult r = train(init, ds, cfg);
  EXPECT_EQ(r.avatar, init);
  EXPECT_TRUE(r.curve.empty());
}

TEST(Train, WarmStartContinuesFromParameters) {
  const Dataset ds = tiny_dataset(2, 12, false, 0.03);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.seed = 2;
  const Avatar init = create_avatar(ds.rig, small_spec(16), 1);
  const TrainResult first = train(init, ds, cfg);
  const TrainResult second = train(first.avatar, ds, cfg);
  EXPECT_EQ(second.avatar.provenance.iterations, 10u);
  EXPECT_FALSE(second.avatar == first.avatar);
}

TEST(Train, RejectsMismatchedRigAndBadConfig) {
  const Dataset ds = tiny_dataset(1, 8, true, 0.0);
  TrainConfig cfg;
  cfg.iterations = 1;
  const Avatar other = create_avatar(make_rig("ellipsoid_face"), small_spec(16), 1);
  EXPECT_THROW(train(other, ds, cfg), InvalidInput);
  cfg.rays_per_batch = 0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
}

TEST(Train, LogsEveryFiftyIterationsAndTheLast) {
  const Dataset ds = tiny_dataset(1, 8, true, 0.0);
  TrainConfig cfg;
  cfg.iterations = 120;
  cfg.rays_per_batch = 16;
  std::vector<int> seen;
  const TrainResult r = train(create_avatar(ds.rig, small_spec(16), 1), ds, cfg,
                              [&](const LossPoint& p) { seen.push_back(p.iteration); });
  EXPECT_EQ(seen, (std::vector<int>{0, 50, 100, 119}));
  EXPECT_EQ(r.curve.size(), 4u);
}
