#include "helpers.hpp"
#include "ophavatar/pipeline.hpp"

#include <gtest/gtest.h>

using namespace opha;

namespace {

PipelineConfig small_config() {
  PipelineConfig cfg;
  cfg.avatar.grid.levels = 6;
  cfg.avatar.grid.log2_table_size = 12;
  cfg.avatar.hidden = 32;
  cfg.avatar.render.n_samples = 32;
  cfg.train.iterations = 120;
  cfg.train.rays_per_batch = 128;
  cfg.rounds = 1;
  cfg.seed = 77;
  cfg.threads = 1;
  return cfg;
}

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    CameraSpec cam;
    cam.width = cam.height = 20;
    DegradationParams p;
    p.seed = 8;
    Dataset d = make_dataset(make_rig("sphere_head"), 6, {}, cam, p, 21);
    d.rig_preset = "sphere_head";
    return d;
  }();
  return ds;
}

const Avatar& trained_avatar() {
  static const Avatar a = [] {
    const PipelineConfig cfg = small_config();
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train_seed(0);
    return train(create_avatar(small_dataset().rig, cfg.avatar, cfg.init_seed()), small_dataset(), tc).avatar;
  }();
  return a;
}

}  // namespace

TEST(Pipeline, InertRoundLeavesAvatarUnchanged) {
  PipelineConfig cfg = small_config();
  cfg.retrain_iterations = 0;
  const Avatar& a = trained_avatar();
  const RoundResult rr = run_round(a, small_dataset(), RestorationOperator::identity(), cfg, 1);
  EXPECT_EQ(rr.avatar.grid, a.grid);
  EXPECT_EQ(rr.avatar.mlp, a.mlp);
  EXPECT_EQ(rr.report.depth_change_previous, 0.0);
  const auto before = render_training_views(a, small_dataset(), cfg.render_seed(), 1);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(rr.renders[i].rgb.data, before[i].rgb.data);
    EXPECT_EQ(rr.dataset.frames[i].image.data, before[i].rgb.data);
    EXPECT_EQ(rr.dataset.frames[i].tier, 1);
  }
}

TEST(Pipeline, OracleLambdaOneRestoresCleanImages) {
  PipelineConfig cfg = small_config();
  cfg.retrain_iterations = 0;
  const RoundResult rr = run_round(trained_avatar(), small_dataset(), RestorationOperator::oracle(1.0), cfg, 1);
  for (std::size_t i = 0; i < small_dataset().frames.size(); ++i)
    EXPECT_EQ(rr.dataset.frames[i].image.data, small_dataset().clean[i].data);
}

TEST(Pipeline, ZeroRoundsEqualsPlainTraining) {
  PipelineConfig cfg = small_config();
  cfg.rounds = 0;
  const PipelineResult r = run_pipeline(small_dataset(), cfg);
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.avatar.grid, trained_avatar().grid);
  EXPECT_EQ(r.avatar.mlp, trained_avatar().mlp);
}

TEST(Pipeline, AnimateAtTrainingPairMatchesRoundRender) {
  PipelineConfig cfg = small_config();
  cfg.train.iterations = 40;
  std::vector<std::vector<Image>> round_renders;
  PipelineHooks hooks;
  hooks.on_round = [&](int, const Dataset&, const Avatar& a, const RoundReport&, const std::vector<LossPoint>&) {
    std::vector<Image> imgs;
    for (const auto& r : render_training_views(a, small_dataset(), cfg.render_seed(), 1)) imgs.push_back(r.rgb);
    round_renders.push_back(std::move(imgs));
  };
  const PipelineResult r = run_pipeline(small_dataset(), cfg, hooks);
  ASSERT_EQ(round_renders.size(), 2u);
  const Frame& f = small_dataset().frames[3];
  const std::vector<std::vector<double>> e = {f.expression};
  const std::vector<Camera> cams = {f.camera};
  const auto anim = animate(r.avatar, e, cams, cfg.render_seed(), 2);
  EXPECT_EQ(anim[0].rgb.data, round_renders[1][3].data);
}

TEST(Pipeline, YawSweepCompletes) {
  const Avatar& a = trained_avatar();
  std::vector<std::vector<double>> exprs;
  std::vector<Camera> cams;
  for (int i = 0; i <= 12; ++i) {
    exprs.push_back({0.0, 0.0, 0.0});
    cams.push_back(orbit_camera(deg2rad(-60.0 + 10.0 * i), 0.0, 3.2, 16, 16));
  }
  const auto frames = animate(a, exprs, cams, 1, 1);
  ASSERT_EQ(frames.size(), 13u);
  for (const auto& f : frames) EXPECT_TRUE(in_unit_range(f.rgb));
  exprs[0].push_back(1.0);
  EXPECT_THROW(animate(a, exprs, cams, 1, 1), InvalidInput);
}

TEST(Pipeline, IdentityRestorerIsStable) {
  PipelineConfig cfg = small_config();
  cfg.restorer = RestorationOperator::identity();
  cfg.rounds = 2;
  const PipelineResult r = run_pipeline(small_dataset(), cfg, {}, trained_avatar());
  ASSERT_EQ(r.reports.size(), 3u);
  for (int k = 1; k <= 2; ++k) EXPECT_GE(r.reports[k].mean_psnr, r.reports[0].mean_psnr - 0.5) << "round " << k;
}

TEST(Pipeline, OracleRoundImprovesTrainingViews) {
  PipelineConfig cfg = small_config();
  cfg.restorer = RestorationOperator::oracle(0.8);
  const PipelineResult r = run_pipeline(small_dataset(), cfg, {}, trained_avatar());
  EXPECT_GT(r.reports[1].mean_psnr, r.reports[0].mean_psnr);
  EXPECT_GT(r.reports[1].drift, 0.0);
  EXPECT_EQ(r.reports[0].drift, 0.0);
  EXPECT_EQ(r.avatar.provenance.rounds_completed, 1);
}

TEST(Pipeline, ColdStartAndAugmentedViews) {
  PipelineConfig cfg = small_config();
  cfg.warm_start = false;
  cfg.augment_views = 3;
  cfg.retrain_iterations = 10;
  const RoundResult rr = run_round(trained_avatar(), small_dataset(), RestorationOperator::oracle(0.5), cfg, 1);
  EXPECT_EQ(rr.dataset.frames.size(), small_dataset().frames.size() + 3);
  EXPECT_EQ(rr.dataset.clean.size(), rr.dataset.frames.size());
  EXPECT_EQ(rr.renders.size(), small_dataset().frames.size());
  EXPECT_EQ(rr.avatar.provenance.iterations, trained_avatar().provenance.iterations + 10);
}

TEST(Pipeline, RejectsBadRoundsAndConfig) {
  PipelineConfig cfg = small_config();
  EXPECT_THROW(run_round(trained_avatar(), small_dataset(), RestorationOperator::identity(), cfg, 0), InvalidInput);
  cfg.rounds = -1;
  EXPECT_THROW(cfg.validate(), InvalidInput);
}

TEST(Pipeline, DepthChangeOfIdenticalRendersIsZero) {
  const auto r = render_training_views(trained_avatar(), small_dataset(), 3, 1);
  EXPECT_EQ(mean_depth_change(r, r), 0.0);
}

TEST(HeldOut, DeterministicAndScored) {
  const HeldOutReport a = evaluate_held_out(trained_avatar(), small_dataset(), 3, 12, 1);
  const HeldOutReport b = evaluate_held_out(trained_avatar(), small_dataset(), 3, 12, 2);
  ASSERT_EQ(a.scores.size(), 3u);
  EXPECT_EQ(a.mean_avatar_psnr, b.mean_avatar_psnr);
  EXPECT_EQ(a.mean_degraded_psnr, b.mean_degraded_psnr);
  EXPECT_GT(a.mean_degraded_psnr, 10.0);
  EXPECT_LT(a.mean_degraded_psnr, kPsnrCap);
}
