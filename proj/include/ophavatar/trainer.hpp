#pragma once

#include "ophavatar/avatar.hpp"
#include "ophavatar/synthdata.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace opha {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

enum class LossKind { smooth_l1, l2 };

constexpr double kSmoothL1Delta = 0.05;

struct LossResult {
  double loss = 0.0;
  std::vector<Vec3> d_rgb;
};

// Mean over all channels. smooth_l1 is quadratic (0.5 d^2 / delta) below
// delta and linear (|d| - delta / 2) above.
inline LossResult photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> target,
                                   LossKind kind = LossKind::smooth_l1, double delta = kSmoothL1Delta) {
  require(rendered.size() == target.size(), "loss: batch sizes differ");
  LossResult r;
  r.d_rgb.resize(rendered.size());
  if (rendered.empty()) return r;
  const double scale = 1.0 / (3.0 * static_cast<double>(rendered.size()));
  for (std::size_t i = 0; i < rendered.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double d = rendered[i][c] - target[i][c];
      double l = 0.0, g = 0.0;
      if (kind == LossKind::l2) {
        l = d * d;
        g = 2.0 * d;
      } else if (std::abs(d) < delta) {
        l = 0.5 * d * d / delta;
        g = d / delta;
      } else {
        l = std::abs(d) - 0.5 * delta;
        g = d > 0.0 ? 1.0 : -1.0;
      }
      r.loss += l * scale;
      r.d_rgb[i][c] = g * scale;
    }
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-10;
};

// One bias-corrected Adam update at step t >= 1. Parameters are left
// untouched when any gradient is non-finite.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamParams& hp, std::uint64_t t) {
  require(params.size() == grads.size(), "adam: parameter/gradient size mismatch");
  require(t >= 1, "adam: step counter starts at 1");
  if (state.m.size() != params.size()) state.reset(params.size());
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.m[i];
    double& v = state.v[i];
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int iterations = 5000;
  int rays_per_batch = 256;
  double lr_grid = 1e-2;
  double lr_mlp = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-10;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::smooth_l1;
  int log_every = 50;
  int threads = 0;

  void validate() const {
    require(iterations >= 0, "train: iterations must be >= 0");
    require(rays_per_batch >= 1, "train: rays_per_batch must be >= 1");
    require(lr_grid > 0.0 && lr_mlp > 0.0, "train: learning rates must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: betas must be in [0, 1)");
    require(eps > 0.0, "train: eps must be positive");
    require(log_every >= 1, "train: log_every must be >= 1");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct LossPoint {
  int iteration = 0;
  double loss = 0.0;         // batch loss at this iteration
  double window_mean = 0.0;  // mean batch loss since the previous point
};

struct TrainResult {
  Avatar avatar;
  std::vector<LossPoint> curve;
};

// Raised when the loss turns non-finite or stays above 10x its initial value
// for 500 consecutive iterations; carries the last good parameters.
class TrainingDiverged : public NumericError {
public:
  TrainingDiverged(const std::string& what, Avatar last_good, int iteration)
      : NumericError(what), last_good_(std::move(last_good)), iteration_(iteration) {}
  const Avatar& last_good() const { return last_good_; }
  int iteration() const { return iteration_; }

private:
  Avatar last_good_;
  int iteration_;
};

constexpr int kRayChunk = 64;
constexpr int kDivergencePatience = 500;
constexpr double kDivergenceFactor = 10.0;

// One DeformationContext per frame, built once.
inline std::vector<DeformationContext> build_contexts(const Avatar& avatar, const Dataset& dataset,
                                                      int threads = 0) {
  std::vector<std::optional<DeformationContext>> tmp(dataset.frames.size());
  parallel_for(
      dataset.frames.size(), [&](std::size_t i) { tmp[i].emplace(avatar.context(dataset.frames[i].expression)); },
      threads);
  std::vector<DeformationContext> out;
  out.reserve(tmp.size());
  for (auto& c : tmp) out.push_back(std::move(*c));
  return out;
}

using TrainProgress = std::function<void(const LossPoint&)>;

// Trains from the avatar's current parameters (warm start). Each iteration
// draws rays_per_batch (frame, pixel) pairs from a stream seeded by
// (seed, iteration), so the result is independent of the worker count.
inline TrainResult train(Avatar avatar, const Dataset& dataset, const TrainConfig& cfg,
                         const TrainProgress& progress = {}) {
  cfg.validate();
  require(!dataset.frames.empty(), "train: dataset is empty");
  require(dataset.rig.canonical == avatar.rig.canonical, "train: dataset and avatar rigs differ");
  TrainResult result;
  const auto contexts = build_contexts(avatar, dataset, cfg.threads);
  const int width = dataset.width(), height = dataset.height();
  const int n_frames = static_cast<int>(dataset.frames.size());
  const int n_chunks = (cfg.rays_per_batch + kRayChunk - 1) / kRayChunk;

  struct ChunkWork {
    std::vector<RayQuery> queries;
    std::vector<Vec3> targets;
    RayBatch batch;
    FieldGradBuffer grads;
    double loss = 0.0;
  };
  std::vector<ChunkWork> chunks(n_chunks);
  std::vector<double> grid_grad(avatar.grid.params().size(), 0.0);
  std::vector<double> mlp_grad(avatar.mlp.param_count(), 0.0);
  AdamState grid_state, mlp_state;
  const AdamParams grid_hp{cfg.lr_grid, cfg.beta1, cfg.beta2, cfg.eps};
  const AdamParams mlp_hp{cfg.lr_mlp, cfg.beta1, cfg.beta2, cfg.eps};
  const double inv_batch = 1.0 / cfg.rays_per_batch;

  double initial_loss = -1.0;
  int above = 0;
  double window_sum = 0.0;
  int window_count = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x747261696e, static_cast<std::uint64_t>(it)));
    for (int c = 0; c < n_chunks; ++c) {
      ChunkWork& w = chunks[c];
      w.queries.clear();
      w.targets.clear();
      const int begin = c * kRayChunk, end = std::min(cfg.rays_per_batch, begin + kRayChunk);
      for (int r = begin; r < end; ++r) {
        const int f = std::min(n_frames - 1, static_cast<int>(uniform01(rng) * n_frames));
        const int px = std::min(width * height - 1, static_cast<int>(uniform01(rng) * width * height));
        const int x = px % width, y = px / width;
        const Frame& frame = dataset.frames[f];
        w.queries.push_back({generate_ray(frame.camera, x, y), &contexts[f],
                             derive_seed(cfg.seed, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(r))});
        w.targets.emplace_back(frame.image.at(x, y, 0), frame.image.at(x, y, 1), frame.image.at(x, y, 2));
      }
    }

    parallel_for(
        static_cast<std::size_t>(n_chunks),
        [&](std::size_t c) {
          ChunkWork& w = chunks[c];
          render_rays(avatar.grid, avatar.mlp, avatar.render, w.queries, w.batch);
          std::vector<Vec3> rendered(w.queries.size());
          for (std::size_t r = 0; r < rendered.size(); ++r) rendered[r] = w.batch.outputs[r].rgb;
          LossResult lr = photometric_loss(rendered, w.targets, cfg.loss);
          // photometric_loss averages over this chunk; rescale to the batch mean.
          const double chunk_weight = static_cast<double>(w.queries.size()) * inv_batch;
          w.loss = lr.loss * chunk_weight;
          for (Vec3& g : lr.d_rgb) g *= chunk_weight;
          w.grads.reset(avatar.grid, avatar.mlp);
          render_rays_backward(avatar.grid, avatar.mlp, w.batch, lr.d_rgb, w.grads);
        },
        cfg.threads);

    double loss = 0.0;
    std::fill(grid_grad.begin(), grid_grad.end(), 0.0);
    std::fill(mlp_grad.begin(), mlp_grad.end(), 0.0);
    for (const ChunkWork& w : chunks) {
      loss += w.loss;
      w.grads.grid.merge_into(grid_grad);
      for (std::size_t i = 0; i < mlp_grad.size(); ++i) mlp_grad[i] += w.grads.mlp[i];
    }
    if (!std::isfinite(loss))
      throw TrainingDiverged("train: non-finite loss at iteration " + std::to_string(it), avatar, it);
    if (initial_loss < 0.0) initial_loss = loss;
    above = loss > kDivergenceFactor * initial_loss ? above + 1 : 0;
    if (above >= kDivergencePatience)
      throw TrainingDiverged("train: loss above 10x initial for 500 iterations (iteration " +
                                 std::to_string(it) + ")",
                             avatar, it);

    try {
      const std::uint64_t step = avatar.provenance.iterations + 1;
      adam_step(avatar.grid.params(), grid_grad, grid_state, grid_hp, static_cast<std::uint64_t>(it) + 1);
      adam_step(avatar.mlp.params(), mlp_grad, mlp_state, mlp_hp, static_cast<std::uint64_t>(it) + 1);
      avatar.provenance.iterations = step;
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string(e.what()) + " at iteration " + std::to_string(it), avatar, it);
    }

    window_sum += loss;
    ++window_count;
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      LossPoint p{it, loss, window_sum / window_count};
      result.curve.push_back(p);
      if (progress) progress(p);
      window_sum = 0.0;
      window_count = 0;
    }
  }
  result.avatar = std::move(avatar);
  return result;
}

}  // namespace opha
