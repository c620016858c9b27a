#pragma once

#include "ophavatar/metrics.hpp"
#include "ophavatar/restore.hpp"
#include "ophavatar/trainer.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <vector>

namespace opha {

// Everything needed to create a fresh avatar for a rig.
struct AvatarSpec {
  HashGridConfig grid;
  int hidden = 64;
  int geo_features = 15;
  RenderConfig render;
  double influence_radius = kDefaultInfluenceRadius;

  bool operator==(const AvatarSpec&) const = default;
};

inline Avatar create_avatar(const BlendshapeRig& rig, const AvatarSpec& spec, std::uint64_t seed) {
  return Avatar::create(rig, spec.grid, spec.hidden, spec.geo_features, spec.render, spec.influence_radius, seed);
}

struct PipelineConfig {
  int rounds = 2;
  RestorationOperator restorer = RestorationOperator::oracle(0.8);
  AvatarSpec avatar;
  TrainConfig train;
  // Iterations for update rounds; negative means train.iterations.
  int retrain_iterations = -1;
  bool warm_start = true;
  // Extra sampled (E, view) conditions rendered and restored per round.
  int augment_views = 0;
  std::uint64_t seed = 0;
  int threads = 0;

  void validate() const {
    require(rounds >= 0, "pipeline: rounds must be >= 0");
    require(augment_views >= 0, "pipeline: augment_views must be >= 0");
    restorer.validate();
    train.validate();
  }
  int round_iterations(int round) const {
    return round == 0 || retrain_iterations < 0 ? train.iterations : retrain_iterations;
  }
  std::uint64_t init_seed() const { return derive_seed(seed, 0x696e6974); }
  std::uint64_t train_seed(int round) const { return derive_seed(seed, 0x747273, static_cast<std::uint64_t>(round)); }
  std::uint64_t render_seed() const { return derive_seed(seed, 0x726e6472); }
};

struct RoundReport {
  int round = 0;
  std::vector<FrameScore> frames;  // avatar renders at training conditions vs clean
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_akd = 0.0;
  double depth_change_previous = 0.0;  // vs the previous round's renders
  double depth_change_initial = 0.0;   // vs round 0
  double drift = 0.0;                  // training images vs original coarse frames
  double hf_energy = 0.0;              // mean high-frequency energy of training images
  double final_loss = 0.0;
  double seconds = 0.0;
};

// Renders of an avatar at a dataset's training conditions.
inline std::vector<RenderedImage> render_training_views(const Avatar& avatar, const Dataset& dataset,
                                                        std::uint64_t seed, int threads = 0) {
  std::vector<RenderedImage> out;
  out.reserve(dataset.frames.size());
  for (const Frame& f : dataset.frames) {
    const DeformationContext ctx = avatar.context(f.expression);
    out.push_back(render_image(avatar, ctx, f.camera, avatar.render, seed, threads));
  }
  return out;
}

// Mean |depth_a - depth_b| over pixels with alpha > 0.5 in both renders.
inline double mean_depth_change(std::span<const RenderedImage> a, std::span<const RenderedImage> b) {
  require(a.size() == b.size(), "depth change: render count mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t p = 0; p < a[i].depth.data.size(); ++p)
      if (a[i].alpha.data[p] > 0.5 && b[i].alpha.data[p] > 0.5) {
        sum += std::abs(a[i].depth.data[p] - b[i].depth.data[p]);
        ++n;
      }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// PSNR / SSIM of renders vs clean images plus the marker distance between the
// rig at the frame condition and the avatar render's depth reprojection.
inline void score_renders(const Dataset& dataset, std::span<const RenderedImage> renders, RoundReport& report) {
  require(dataset.has_clean(), "report: dataset has no clean images");
  report.frames.clear();
  double psnr_sum = 0.0, ssim_sum = 0.0, akd_sum = 0.0;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const Frame& f = dataset.frames[i];
    const KeypointView view{f.expression, f.camera};
    const AkdResult akd = akd_analog(dataset.rig, view, view, &renders[i].depth);
    FrameScore s{f.index, psnr(renders[i].rgb, dataset.clean[i]), ssim(renders[i].rgb, dataset.clean[i]),
                 akd.depth_reprojection};
    psnr_sum += s.psnr;
    ssim_sum += s.ssim;
    akd_sum += s.akd;
    report.frames.push_back(s);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, renders.size()));
  report.mean_psnr = psnr_sum / n;
  report.mean_ssim = ssim_sum / n;
  report.mean_akd = akd_sum / n;
}

inline void score_dataset_images(const Dataset& images, const Dataset& original, RoundReport& report) {
  double drift = 0.0, hf = 0.0;
  for (std::size_t i = 0; i < original.frames.size(); ++i) {
    drift += mean_abs_difference(images.frames[i].image, original.frames[i].image);
    hf += high_frequency_energy(images.frames[i].image);
  }
  const double n = static_cast<double>(original.frames.size());
  report.drift = drift / n;
  report.hf_energy = hf / n;
}

struct RoundResult {
  Dataset dataset;                       // restored renders, tier = round
  Avatar avatar;                         // retrained on `dataset`
  std::vector<RenderedImage> renders;    // retrained avatar at the base conditions
  std::vector<LossPoint> curve;
  RoundReport report;
};

// One dataset-update round: render `avatar` at every condition of `base`,
// restore each render, and retrain on the restored images. `renders` may
// carry the avatar's renders at those conditions when already known.
inline RoundResult run_round(const Avatar& avatar, const Dataset& base, const RestorationOperator& restorer,
                             const PipelineConfig& cfg, int round,
                             const std::vector<RenderedImage>* renders = nullptr,
                             const TrainProgress& progress = {}) {
  require(round >= 1, "run_round: update rounds start at 1");
  restorer.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<RenderedImage> own;
  if (!renders) {
    own = render_training_views(avatar, base, cfg.render_seed(), cfg.threads);
    renders = &own;
  }
  require(renders->size() == base.frames.size(), "run_round: render count mismatch");

  Dataset next = base;
  std::vector<Image> restored(base.frames.size());
  parallel_for(
      base.frames.size(),
      [&](std::size_t i) {
        const FrameContext ctx{base.frames[i].index, round, base.has_clean() ? &base.clean[i] : nullptr};
        restored[i] = restore(restorer, (*renders)[i].rgb, ctx);
      },
      cfg.threads);
  for (std::size_t i = 0; i < base.frames.size(); ++i) {
    next.frames[i].image = std::move(restored[i]);
    next.frames[i].tier = round;
  }

  if (cfg.augment_views > 0) {
    const auto extra = sample_conditions(cfg.augment_views, base.rig.dimension(), base.trajectory,
                                         derive_seed(cfg.seed, 0x617567, static_cast<std::uint64_t>(round)));
    for (const Condition& c : extra) {
      Frame f;
      f.index = static_cast<int>(next.frames.size());
      f.camera = camera_for(base.camera_spec, c.yaw, c.pitch);
      f.expression = c.expression;
      f.yaw = c.yaw;
      f.pitch = c.pitch;
      f.tier = round;
      const Image clean = ground_truth_render(base.rig, f.expression, f.camera, base.shading).rgb;
      const DeformationContext ctx = avatar.context(f.expression);
      const Image render = render_image(avatar, ctx, f.camera, avatar.render, cfg.render_seed(), cfg.threads).rgb;
      f.image = restore(restorer, render, FrameContext{f.index, round, &clean});
      next.frames.push_back(std::move(f));
      if (next.has_clean()) next.clean.push_back(clean);
    }
  }
  next.validate();

  TrainConfig tc = cfg.train;
  tc.iterations = cfg.round_iterations(round);
  tc.seed = cfg.train_seed(round);
  tc.threads = cfg.threads;
  Avatar start_avatar = avatar;
  if (!cfg.warm_start) {
    start_avatar = create_avatar(avatar.rig, cfg.avatar, derive_seed(cfg.init_seed(), static_cast<std::uint64_t>(round)));
    start_avatar.provenance = avatar.provenance;
  }
  TrainResult trained = train(std::move(start_avatar), next, tc, progress);
  trained.avatar.provenance.rounds_completed = round;
  trained.avatar.provenance.seeds.push_back(tc.seed);

  RoundResult result;
  result.renders = render_training_views(trained.avatar, base, cfg.render_seed(), cfg.threads);
  result.report.round = round;
  if (base.has_clean()) score_renders(base, result.renders, result.report);
  score_dataset_images(next, base, result.report);
  result.report.depth_change_previous = mean_depth_change(*renders, result.renders);
  result.report.final_loss = trained.curve.empty() ? 0.0 : trained.curve.back().window_mean;
  result.curve = std::move(trained.curve);
  result.avatar = std::move(trained.avatar);
  result.dataset = std::move(next);
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

struct PipelineResult {
  Avatar avatar;
  std::vector<RoundReport> reports;
};

// Called after every round (0 .. K) with the round's dataset, avatar and report.
using RoundCallback =
    std::function<void(int round, const Dataset& dataset, const Avatar& avatar, const RoundReport& report,
                       const std::vector<LossPoint>& curve)>;

struct PipelineHooks {
  RoundCallback on_round;
  std::function<void(int round, const LossPoint&)> on_progress;
};

// Trains round 0 on `dataset` (unless `round0` already holds that result)
// and then runs cfg.rounds dataset-update rounds.
inline PipelineResult run_pipeline(const Dataset& dataset, const PipelineConfig& cfg, const PipelineHooks& hooks = {},
                                   const std::optional<Avatar>& round0 = std::nullopt) {
  cfg.validate();
  dataset.validate();
  auto progress_for = [&](int round) -> TrainProgress {
    if (!hooks.on_progress) return {};
    return [&hooks, round](const LossPoint& p) { hooks.on_progress(round, p); };
  };

  const auto start = std::chrono::steady_clock::now();
  Avatar avatar;
  std::vector<LossPoint> curve;
  if (round0) {
    avatar = *round0;
  } else {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train_seed(0);
    tc.threads = cfg.threads;
    TrainResult r = train(create_avatar(dataset.rig, cfg.avatar, cfg.init_seed()), dataset, tc, progress_for(0));
    avatar = std::move(r.avatar);
    avatar.provenance.seeds.push_back(tc.seed);
    curve = std::move(r.curve);
  }

  PipelineResult result;
  RoundReport r0;
  std::vector<RenderedImage> renders = render_training_views(avatar, dataset, cfg.render_seed(), cfg.threads);
  const std::vector<RenderedImage> initial = renders;
  if (dataset.has_clean()) score_renders(dataset, renders, r0);
  score_dataset_images(dataset, dataset, r0);
  r0.final_loss = curve.empty() ? 0.0 : curve.back().window_mean;
  r0.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.reports.push_back(r0);
  if (hooks.on_round) hooks.on_round(0, dataset, avatar, r0, curve);

  for (int k = 1; k <= cfg.rounds; ++k) {
    RoundResult rr = run_round(avatar, dataset, cfg.restorer, cfg, k, &renders, progress_for(k));
    rr.report.depth_change_initial = mean_depth_change(initial, rr.renders);
    if (hooks.on_round) hooks.on_round(k, rr.dataset, rr.avatar, rr.report, rr.curve);
    result.reports.push_back(rr.report);
    avatar = std::move(rr.avatar);
    renders = std::move(rr.renders);
  }
  result.avatar = std::move(avatar);
  return result;
}

// One render per (expression, camera) pair.
inline std::vector<RenderedImage> animate(const Avatar& avatar, std::span<const std::vector<double>> expressions,
                                          std::span<const Camera> cameras, std::uint64_t seed, int threads = 0) {
  require(expressions.size() == cameras.size(), "animate: expression/camera count mismatch");
  std::vector<RenderedImage> out;
  out.reserve(cameras.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    require(static_cast<int>(expressions[i].size()) == avatar.rig.dimension(),
            "animate: expression " + std::to_string(i) + " has the wrong dimension");
    const DeformationContext ctx = avatar.context(expressions[i]);
    out.push_back(render_image(avatar, ctx, cameras[i], avatar.render, seed, threads));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Held-out conditions
// ---------------------------------------------------------------------------

struct HeldOutScore {
  Condition condition;
  double avatar_psnr = 0.0;    // avatar render vs clean
  double degraded_psnr = 0.0;  // degraded clean vs clean
};

struct HeldOutReport {
  std::vector<HeldOutScore> scores;
  double mean_avatar_psnr = 0.0;
  double mean_degraded_psnr = 0.0;
};

// Renders the avatar at `n` conditions drawn inside the dataset's trajectory
// ranges and compares against clean renders and their degraded copies.
inline HeldOutReport evaluate_held_out(const Avatar& avatar, const Dataset& dataset, int n, std::uint64_t seed,
                                       int threads = 0) {
  HeldOutReport rep;
  const auto conditions = sample_conditions(n, dataset.rig.dimension(), dataset.trajectory, seed);
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const Condition& c = conditions[i];
    const Camera cam = camera_for(dataset.camera_spec, c.yaw, c.pitch);
    const Image clean = ground_truth_render(dataset.rig, c.expression, cam, dataset.shading).rgb;
    DegradationParams dp = dataset.degradation;
    dp.seed = derive_seed(seed, 0x64656772);
    const Image degraded = degrade(clean, c.yaw, dp, i);
    const DeformationContext ctx = avatar.context(c.expression);
    const Image render = render_image(avatar, ctx, cam, avatar.render, seed, threads).rgb;
    rep.scores.push_back({c, psnr(render, clean), psnr(degraded, clean)});
    rep.mean_avatar_psnr += rep.scores.back().avatar_psnr;
    rep.mean_degraded_psnr += rep.scores.back().degraded_psnr;
  }
  if (n > 0) {
    rep.mean_avatar_psnr /= n;
    rep.mean_degraded_psnr /= n;
  }
  return rep;
}

}  // namespace opha
