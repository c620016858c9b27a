#pragma once

#include "ophavatar/render.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace opha {

struct Provenance {
  int rounds_completed = 0;
  std::uint64_t iterations = 0;
  std::vector<std::uint64_t> seeds;

  bool operator==(const Provenance&) const = default;
};

// Trainable radiance field bound to a blendshape rig. The field lives in the
// rig's canonical space; each frame is rendered through a DeformationContext
// built from the rig instanced at that frame's expression.
struct Avatar {
  HashGrid grid;
  FieldMLP mlp;
  BlendshapeRig rig;
  RenderConfig render;
  double influence_radius = kDefaultInfluenceRadius;
  Provenance provenance;

  static Avatar create(const BlendshapeRig& rig, const HashGridConfig& grid_cfg, int hidden,
                       int geo_features, const RenderConfig& render_cfg, double influence_radius,
                       std::uint64_t seed) {
    rig.validate();
    render_cfg.validate();
    Avatar a;
    a.grid = HashGrid(grid_cfg);
    a.grid.initialize(seed);
    a.mlp = FieldMLP(FieldConfig{grid_cfg.output_dim(), hidden, geo_features});
    a.mlp.initialize(seed);
    a.rig = rig;
    a.render = render_cfg;
    a.influence_radius = influence_radius;
    a.provenance.seeds.push_back(seed);
    return a;
  }

  DeformationContext context(std::span<const double> expression) const {
    return DeformationContext(instance(rig, expression), rig.canonical, influence_radius);
  }

  bool operator==(const Avatar&) const = default;
};

struct RenderedImage {
  Image rgb;
  Image alpha;  // 1 channel
  Image depth;  // 1 channel, expected depth (0 where nothing was hit)
};

struct PixelRender {
  RayOutput output;
  RayBatch cache;
};

inline PixelRender render_pixel(const Avatar& avatar, const DeformationContext& ctx, const Ray& ray,
                                const RenderConfig& cfg, std::uint64_t seed) {
  PixelRender out;
  const RayQuery q{ray, &ctx, seed};
  render_rays(avatar.grid, avatar.mlp, cfg, std::span<const RayQuery>(&q, 1), out.cache);
  out.output = out.cache.outputs[0];
  return out;
}

inline std::uint64_t pixel_seed(std::uint64_t seed, int x, int y) {
  return derive_seed(seed, 0x706978, static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(x));
}

// Renders every pixel. Output depends only on (avatar, ctx, camera, cfg, seed).
inline RenderedImage render_image(const Avatar& avatar, const DeformationContext& ctx,
                                  const Camera& camera, const RenderConfig& cfg, std::uint64_t seed,
                                  int threads = 0) {
  camera.validate();
  cfg.validate();
  RenderedImage img{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                    Image(camera.width, camera.height, 1)};
  constexpr int kChunk = 256;
  const int total = camera.width * camera.height;
  const int chunks = (total + kChunk - 1) / kChunk;
  parallel_for(
      static_cast<std::size_t>(chunks),
      [&](std::size_t c) {
        const int begin = static_cast<int>(c) * kChunk;
        const int end = std::min(total, begin + kChunk);
        std::vector<RayQuery> queries;
        queries.reserve(end - begin);
        for (int p = begin; p < end; ++p) {
          const int x = p % camera.width, y = p / camera.width;
          queries.push_back({generate_ray(camera, x, y), &ctx, pixel_seed(seed, x, y)});
        }
        RayBatch batch;
        render_rays(avatar.grid, avatar.mlp, cfg, queries, batch);
        for (int p = begin; p < end; ++p) {
          const int x = p % camera.width, y = p / camera.width;
          const RayOutput& o = batch.outputs[p - begin];
          for (int ch = 0; ch < 3; ++ch) img.rgb.at(x, y, ch) = std::clamp(o.rgb[ch], 0.0, 1.0);
          img.alpha.at(x, y) = std::clamp(o.alpha, 0.0, 1.0);
          img.depth.at(x, y) = o.depth;
        }
      },
      threads);
  return img;
}

struct RenderGradients {
  std::vector<double> grid;
  ParamVector mlp;
};

// Dense gradients of the batch's ray colors contracted with d_rgb.
inline RenderGradients render_backward(const Avatar& avatar, const RayBatch& cache,
                                       std::span<const Vec3> d_rgb) {
  FieldGradBuffer buf;
  buf.reset(avatar.grid, avatar.mlp);
  render_rays_backward(avatar.grid, avatar.mlp, cache, d_rgb, buf);
  RenderGradients g;
  g.grid.assign(avatar.grid.params().size(), 0.0);
  buf.grid.merge_into(g.grid);
  g.mlp = std::move(buf.mlp);
  return g;
}

}  // namespace opha
