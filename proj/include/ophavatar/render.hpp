#pragma once

#include "ophavatar/deform.hpp"
#include "ophavatar/field.hpp"
#include "ophavatar/hashenc.hpp"
#include "ophavatar/image.hpp"
#include "ophavatar/parallel.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace opha {

struct RenderConfig {
  int n_samples = 128;
  Vec3 background = Vec3::Ones();
  bool stratified = false;
  double density_scale = 1.0;
  // Rays stop marching once transmittance falls below this; 0 disables.
  double early_stop_transmittance = 1e-4;
  // Samples marched per ray between early-stop checks.
  int segment_samples = 32;

  void validate() const {
    require(n_samples >= 2, "render: n_samples must be >= 2");
    require(background.minCoeff() >= 0.0 && background.maxCoeff() <= 1.0,
            "render: background must lie in [0, 1]");
    require(density_scale > 0.0, "render: density scale must be positive");
    require(early_stop_transmittance >= 0.0 && early_stop_transmittance < 1.0,
            "render: early-stop transmittance must be in [0, 1)");
    require(segment_samples >= 1, "render: segment_samples must be >= 1");
  }
  bool operator==(const RenderConfig&) const = default;
};

constexpr double kDepthEpsilon = 1e-6;

// ---------------------------------------------------------------------------
// Emission-absorption compositing
// ---------------------------------------------------------------------------

// Front-to-back accumulator for piecewise-constant density:
// alpha_i = 1 - exp(-sigma_i dt_i), w_i = T_i alpha_i, T_{i+1} = T_i (1 - alpha_i).
struct Compositor {
  double transmittance = 1.0;
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double depth_sum = 0.0;

  // Returns the sample's weight.
  double add(double sigma, const Vec3& color, double dt, double t = 0.0) {
    const double a = -std::expm1(-sigma * dt);
    const double w = transmittance * a;
    rgb += w * color;
    alpha += w;
    depth_sum += w * t;
    transmittance *= 1.0 - a;
    return w;
  }

  Vec3 finish_rgb(const Vec3& background) const { return rgb + transmittance * background; }
  double depth() const { return depth_sum / std::max(alpha, kDepthEpsilon); }
};

struct CompositeResult {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double transmittance = 1.0;
  std::vector<double> weights;
};

inline CompositeResult composite(std::span<const double> sigmas, std::span<const Vec3> colors,
                                 std::span<const double> dts, const Vec3& background) {
  require(sigmas.size() == colors.size() && sigmas.size() == dts.size(),
          "composite: input lengths differ");
  Compositor acc;
  CompositeResult out;
  out.weights.resize(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    require(sigmas[i] >= 0.0 && dts[i] > 0.0, "composite: need sigma >= 0 and dt > 0");
    out.weights[i] = acc.add(sigmas[i], colors[i], dts[i]);
  }
  out.rgb = acc.finish_rgb(background);
  out.alpha = acc.alpha;
  out.transmittance = acc.transmittance;
  return out;
}

// Gradient of composite's rgb w.r.t. sigmas and colors for upstream d_rgb.
struct CompositeGradient {
  std::vector<double> d_sigma;
  std::vector<Vec3> d_color;
};

inline CompositeGradient composite_backward(std::span<const double> sigmas,
                                            std::span<const Vec3> colors,
                                            std::span<const double> dts, const Vec3& background,
                                            const Vec3& d_rgb) {
  const std::size_t n = sigmas.size();
  std::vector<double> t_before(n + 1), weight(n);
  t_before[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = -std::expm1(-sigmas[i] * dts[i]);
    weight[i] = t_before[i] * a;
    t_before[i + 1] = t_before[i] * (1.0 - a);
  }
  CompositeGradient g;
  g.d_sigma.resize(n);
  g.d_color.resize(n);
  Vec3 suffix = t_before[n] * background;  // sum_{j > i} w_j c_j + T_n bg
  for (std::size_t k = n; k-- > 0;) {
    g.d_color[k] = weight[k] * d_rgb;
    g.d_sigma[k] = dts[k] * d_rgb.dot(t_before[k + 1] * colors[k] - suffix);
    suffix += weight[k] * colors[k];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gradient sinks
// ---------------------------------------------------------------------------

// Dense buffer that remembers which entries were written, so clearing and
// merging cost O(touched) rather than O(size).
class SparseAccumulator {
public:
  SparseAccumulator() = default;
  explicit SparseAccumulator(std::size_t size) : values_(size, 0.0), flags_(size, 0) {}

  void resize(std::size_t size) {
    values_.assign(size, 0.0);
    flags_.assign(size, 0);
    touched_.clear();
  }
  void add(std::size_t i, double v) {
    if (!flags_[i]) {
      flags_[i] = 1;
      touched_.push_back(static_cast<std::uint32_t>(i));
    }
    values_[i] += v;
  }
  void merge_into(std::span<double> dst) const {
    for (std::uint32_t i : touched_) dst[i] += values_[i];
  }
  void clear() {
    for (std::uint32_t i : touched_) {
      values_[i] = 0.0;
      flags_[i] = 0;
    }
    touched_.clear();
  }
  std::size_t size() const { return values_.size(); }
  std::span<const std::uint32_t> touched() const { return touched_; }
  double value(std::size_t i) const { return values_[i]; }

private:
  std::vector<double> values_;
  std::vector<std::uint8_t> flags_;
  std::vector<std::uint32_t> touched_;
};

struct FieldGradBuffer {
  SparseAccumulator grid;
  ParamVector mlp;

  void reset(const HashGrid& g, const FieldMLP& m) {
    if (grid.size() != g.params().size()) grid.resize(g.params().size());
    else grid.clear();
    mlp.assign(m.param_count(), 0.0);
  }
};

// ---------------------------------------------------------------------------
// Ray batches
// ---------------------------------------------------------------------------

struct RayQuery {
  Ray ray;
  const DeformationContext* context = nullptr;
  std::uint64_t jitter_seed = 0;
};

struct RayOutput {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double depth = 0.0;
  double transmittance = 1.0;
};

// Forward state of a batch of rays; everything the reverse pass needs.
struct RayBatch {
  struct Sample {
    int ray = 0;
    int segment = 0;
    int column = 0;
    double t = 0.0;
    double dt = 0.0;
    double sigma = 0.0;  // after density scale
    double t_before = 1.0;
    double t_after = 1.0;
    double weight = 0.0;
    Vec3 color = Vec3::Zero();
  };
  struct Segment {
    FieldCache field;
    std::vector<std::uint32_t> slots;
    std::vector<double> weights;
    std::vector<int> sample_ids;
  };

  std::vector<RayOutput> outputs;
  std::vector<Sample> samples;
  std::vector<Segment> segments;
  std::vector<int> ray_offsets;  // CSR over per-ray sample ids
  std::vector<int> ray_samples;
  Vec3 background = Vec3::Ones();
  double density_scale = 1.0;
};

namespace detail {

inline void sample_offsets(const RenderConfig& cfg, std::uint64_t jitter_seed, std::vector<double>& u) {
  u.resize(cfg.n_samples);
  if (!cfg.stratified) {
    std::fill(u.begin(), u.end(), 0.5);
    return;
  }
  std::mt19937_64 rng(jitter_seed);
  for (double& x : u) x = uniform01(rng);
}

}  // namespace detail

// Marches every ray, mapping samples to canonical space, evaluating the
// field in batches of segment_samples per ray, and compositing front to back.
inline void render_rays(const HashGrid& grid, const FieldMLP& mlp, const RenderConfig& cfg,
                        std::span<const RayQuery> rays, RayBatch& batch) {
  const int n_rays = static_cast<int>(rays.size());
  const int in_dim = grid.config().output_dim();
  const int levels = grid.config().levels;
  batch.outputs.assign(n_rays, RayOutput{});
  batch.samples.clear();
  batch.segments.clear();
  batch.background = cfg.background;
  batch.density_scale = cfg.density_scale;

  std::vector<Compositor> comp(n_rays);
  std::vector<char> alive(n_rays, 0);
  // Set once a ray has entered the influence shell; the ray ends where it
  // first leaves it. The shell is hollow, so anything behind that point (the
  // inside of the far side) is never seen on an opaque head and would only
  // let the front stay translucent.
  std::vector<char> entered(n_rays, 0);
  std::vector<double> dt(n_rays, 0.0);
  std::vector<std::vector<double>> offsets(n_rays);
  for (int r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[r].ray;
    if (!ray.hit) continue;
    alive[r] = 1;
    dt[r] = (ray.t_far - ray.t_near) / cfg.n_samples;
    detail::sample_offsets(cfg, rays[r].jitter_seed, offsets[r]);
  }

  struct Pending {
    Vec3 canon;
    Vec3 dir;
  };
  std::vector<Pending> pending;
  for (int start = 0; start < cfg.n_samples; start += cfg.segment_samples) {
    const int stop = std::min(cfg.n_samples, start + cfg.segment_samples);
    RayBatch::Segment seg;
    pending.clear();
    const int seg_index = static_cast<int>(batch.segments.size());
    for (int r = 0; r < n_rays; ++r) {
      if (!alive[r]) continue;
      const Ray& ray = rays[r].ray;
      for (int i = start; i < stop; ++i) {
        const double t = ray.t_near + (i + offsets[r][i]) * dt[r];
        const CanonicalPoint cp = rays[r].context->canonical_map_bounded(ray.at(t));
        if (!cp.valid) {
          if (entered[r]) {
            alive[r] = 0;
            break;
          }
          continue;
        }
        entered[r] = 1;
        RayBatch::Sample s;
        s.ray = r;
        s.segment = seg_index;
        s.column = static_cast<int>(pending.size());
        s.t = t;
        s.dt = dt[r];
        seg.sample_ids.push_back(static_cast<int>(batch.samples.size()));
        batch.samples.push_back(s);
        pending.push_back({cp.point, cp.rotation * ray.direction});
      }
    }
    if (pending.empty()) continue;

    const int m = static_cast<int>(pending.size());
    MatrixX input(in_dim, m), dirs(3, m);
    seg.slots.resize(static_cast<std::size_t>(m) * levels * 8);
    seg.weights.resize(seg.slots.size());
    for (int k = 0; k < m; ++k) {
      grid.encode(pending[k].canon, std::span<double>(input.col(k).data(), in_dim),
                  std::span<std::uint32_t>(seg.slots.data() + static_cast<std::size_t>(k) * levels * 8,
                                           levels * 8),
                  std::span<double>(seg.weights.data() + static_cast<std::size_t>(k) * levels * 8,
                                    levels * 8));
      dirs.col(k) = pending[k].dir;
    }
    mlp.forward(input, dirs, seg.field);

    for (int id : seg.sample_ids) {
      RayBatch::Sample& s = batch.samples[id];
      s.sigma = cfg.density_scale * seg.field.sigma[s.column];
      s.color = seg.field.rgb.col(s.column);
      s.t_before = comp[s.ray].transmittance;
      s.weight = comp[s.ray].add(s.sigma, s.color, s.dt, s.t);
      s.t_after = comp[s.ray].transmittance;
    }
    batch.segments.push_back(std::move(seg));
    if (cfg.early_stop_transmittance > 0.0)
      for (int r = 0; r < n_rays; ++r)
        if (alive[r] && comp[r].transmittance < cfg.early_stop_transmittance) alive[r] = 0;
  }

  for (int r = 0; r < n_rays; ++r) {
    RayOutput& o = batch.outputs[r];
    o.rgb = comp[r].finish_rgb(cfg.background);
    o.alpha = comp[r].alpha;
    o.depth = comp[r].alpha > 0.0 ? comp[r].depth() : 0.0;
    o.transmittance = comp[r].transmittance;
    if (!all_finite(o.rgb) || !std::isfinite(o.depth))
      throw NumericError("render: non-finite pixel value");
  }

  // Per-ray sample lists in marching order.
  batch.ray_offsets.assign(n_rays + 1, 0);
  for (const auto& s : batch.samples) ++batch.ray_offsets[s.ray + 1];
  for (int r = 0; r < n_rays; ++r) batch.ray_offsets[r + 1] += batch.ray_offsets[r];
  batch.ray_samples.resize(batch.samples.size());
  std::vector<int> cursor(batch.ray_offsets.begin(), batch.ray_offsets.end() - 1);
  for (int id = 0; id < static_cast<int>(batch.samples.size()); ++id)
    batch.ray_samples[cursor[batch.samples[id].ray]++] = id;
}

// Reverse pass for upstream dL/d(rgb) per ray. Canonical mapping is constant
// per sample, so gradients flow to the field and the hash tables only.
inline void render_rays_backward(const HashGrid& grid, const FieldMLP& mlp, const RayBatch& batch,
                                 std::span<const Vec3> d_rgb, FieldGradBuffer& grads) {
  const int n_rays = static_cast<int>(batch.outputs.size());
  require(static_cast<int>(d_rgb.size()) == n_rays, "render backward: one gradient per ray expected");
  std::vector<double> d_sigma(batch.samples.size(), 0.0);
  std::vector<Vec3> d_color(batch.samples.size(), Vec3::Zero());
  for (int r = 0; r < n_rays; ++r) {
    const int begin = batch.ray_offsets[r], end = batch.ray_offsets[r + 1];
    if (begin == end) continue;
    const Vec3& g = d_rgb[r];
    Vec3 suffix = batch.outputs[r].transmittance * batch.background;
    for (int k = end; k-- > begin;) {
      const int id = batch.ray_samples[k];
      const auto& s = batch.samples[id];
      const double w = s.weight;
      d_color[id] = w * g;
      d_sigma[id] = batch.density_scale * s.dt * g.dot(s.t_after * s.color - suffix);
      suffix += w * s.color;
    }
  }

  const int levels = grid.config().levels;
  const int in_dim = grid.config().output_dim();
  for (const auto& seg : batch.segments) {
    const int m = static_cast<int>(seg.sample_ids.size());
    VectorX ds(m);
    MatrixX dc(3, m);
    for (int k = 0; k < m; ++k) {
      const int id = seg.sample_ids[k];
      ds[k] = d_sigma[id];
      dc.col(k) = d_color[id];
    }
    MatrixX d_input;
    mlp.backward(seg.field, ds, dc, grads.mlp, &d_input);
    for (int k = 0; k < m; ++k) {
      const std::size_t off = static_cast<std::size_t>(k) * levels * 8;
      grid.scatter(std::span<const std::uint32_t>(seg.slots.data() + off, levels * 8),
                   std::span<const double>(seg.weights.data() + off, levels * 8),
                   std::span<const double>(d_input.col(k).data(), in_dim),
                   [&](std::size_t i, double v) { grads.grid.add(i, v); });
    }
  }
}

}  // namespace opha
