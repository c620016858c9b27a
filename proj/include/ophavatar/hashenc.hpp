#pragma once

#include "ophavatar/common.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace opha {

struct HashGridConfig {
  int levels = 8;
  int base_resolution = 4;
  double growth = 1.5;
  int log2_table_size = 14;
  int features = 2;
  Vec3 domain_min = Vec3::Constant(-1.2);
  Vec3 domain_max = Vec3::Constant(1.2);

  static constexpr int kMaxLevels = 24;

  void validate() const {
    require(levels >= 1 && levels <= kMaxLevels, "hash grid: levels must be in [1, 24]");
    require(base_resolution >= 2, "hash grid: base resolution must be >= 2");
    require(growth > 1.0, "hash grid: growth factor must be > 1");
    require(log2_table_size >= 1 && log2_table_size <= 30, "hash grid: table size must be 2^1..2^30");
    require(features >= 1, "hash grid: features must be >= 1");
    require((domain_max - domain_min).minCoeff() > 0.0, "hash grid: empty domain");
  }

  int resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth, level)));
  }
  std::uint32_t table_size() const { return 1u << log2_table_size; }
  int output_dim() const { return levels * features; }
  // Number of trainable values (levels x table size x features).
  std::size_t param_count() const {
    return static_cast<std::size_t>(levels) * table_size() * features;
  }
  bool dense(int level) const {
    const std::uint64_t side = static_cast<std::uint64_t>(resolution(level)) + 1;
    return side * side * side <= table_size();
  }

  bool operator==(const HashGridConfig&) const = default;
};

// Multiplier for each axis of the spatial hash; XOR-combined, modulo T.
inline constexpr std::uint32_t kHashPrimes[3] = {1u, 2654435761u, 805459861u};

// Slot of integer grid vertex (ix, iy, iz) at `level`. Dense levels use a
// row-major index; hashed levels share slots silently on collision.
inline std::uint32_t grid_slot(const HashGridConfig& cfg, int level, std::uint32_t ix,
                               std::uint32_t iy, std::uint32_t iz) {
  if (cfg.dense(level)) {
    const std::uint32_t side = static_cast<std::uint32_t>(cfg.resolution(level)) + 1;
    return ix + side * (iy + side * iz);
  }
  const std::uint32_t h = (ix * kHashPrimes[0]) ^ (iy * kHashPrimes[1]) ^ (iz * kHashPrimes[2]);
  return h & (cfg.table_size() - 1);
}

// Slots and trilinear weights touched by one encode call; 8 per level.
struct EncodeCache {
  std::vector<std::uint32_t> slots;
  std::vector<double> weights;
};

class HashGrid {
public:
  HashGrid() = default;
  explicit HashGrid(const HashGridConfig& cfg) : config_(cfg) {
    cfg.validate();
    params_.assign(cfg.param_count(), 0.0);
    precompute();
  }

  // Uniform values in [-1e-4, 1e-4].
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x4a53));
    for (double& v : params_) v = uniform(rng, -1e-4, 1e-4);
  }

  const HashGridConfig& config() const { return config_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double& entry(int level, std::uint32_t slot, int feature) {
    return params_[offset(level, slot) + feature];
  }
  double entry(int level, std::uint32_t slot, int feature) const {
    return params_[offset(level, slot) + feature];
  }
  std::size_t offset(int level, std::uint32_t slot) const {
    return (static_cast<std::size_t>(level) * config_.table_size() + slot) * config_.features;
  }

  // Writes L*F features; slots/weights (8 per level) are filled when non-empty.
  void encode(const Vec3& p, std::span<double> out, std::span<std::uint32_t> slots = {},
              std::span<double> weights = {}) const {
    if (!all_finite(p)) throw InvalidInput("hash encode: non-finite input point");
    const int F = config_.features;
    const Vec3 unit = normalized(p);
    for (int l = 0; l < config_.levels; ++l) {
      const Level& lv = levels_[l];
      std::uint32_t base[3];
      double frac[3];
      for (int a = 0; a < 3; ++a) {
        const double pos = unit[a] * lv.resolution;
        const int cell = std::min(static_cast<int>(pos), lv.resolution - 1);
        base[a] = static_cast<std::uint32_t>(cell);
        frac[a] = pos - cell;
      }
      double* dst = out.data() + l * F;
      for (int f = 0; f < F; ++f) dst[f] = 0.0;
      for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                         (dz ? frac[2] : 1.0 - frac[2]);
        const std::uint32_t slot = slot_of(l, base[0] + dx, base[1] + dy, base[2] + dz);
        const double* src = params_.data() + offset(l, slot);
        for (int f = 0; f < F; ++f) dst[f] += w * src[f];
        if (!slots.empty()) {
          slots[l * 8 + c] = slot;
          weights[l * 8 + c] = w;
        }
      }
    }
  }

  std::vector<double> encode(const Vec3& p) const {
    std::vector<double> out(config_.output_dim());
    encode(p, out);
    return out;
  }

  // Scatters upstream (L*F) into a dense gradient laid out like params().
  template <class Sink>
  void scatter(std::span<const std::uint32_t> slots, std::span<const double> weights,
               std::span<const double> upstream, Sink&& add) const {
    const int F = config_.features;
    for (int l = 0; l < config_.levels; ++l)
      for (int c = 0; c < 8; ++c) {
        const double w = weights[l * 8 + c];
        if (w == 0.0) continue;
        const std::size_t base = offset(l, slots[l * 8 + c]);
        for (int f = 0; f < F; ++f) add(base + f, w * upstream[l * F + f]);
      }
  }

  // Derivative of the encoding w.r.t. the input point, contracted with upstream.
  // Axes where p was clamped to the domain have zero derivative.
  Vec3 point_gradient(const Vec3& p, std::span<const double> upstream) const {
    const int F = config_.features;
    const Vec3 extent = config_.domain_max - config_.domain_min;
    Vec3 grad = Vec3::Zero();
    const Vec3 rel = (p - config_.domain_min).cwiseQuotient(extent);
    const Vec3 unit = normalized(p);
    for (int l = 0; l < config_.levels; ++l) {
      const Level& lv = levels_[l];
      std::uint32_t base[3];
      double frac[3];
      for (int a = 0; a < 3; ++a) {
        const double pos = unit[a] * lv.resolution;
        const int cell = std::min(static_cast<int>(pos), lv.resolution - 1);
        base[a] = static_cast<std::uint32_t>(cell);
        frac[a] = pos - cell;
      }
      for (int c = 0; c < 8; ++c) {
        const int d[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
        const std::uint32_t slot = slot_of(l, base[0] + d[0], base[1] + d[1], base[2] + d[2]);
        const double* src = params_.data() + offset(l, slot);
        double contracted = 0.0;
        for (int f = 0; f < F; ++f) contracted += upstream[l * F + f] * src[f];
        for (int a = 0; a < 3; ++a) {
          if (rel[a] < 0.0 || rel[a] > 1.0) continue;
          double dw = d[a] ? 1.0 : -1.0;
          for (int b = 0; b < 3; ++b)
            if (b != a) dw *= d[b] ? frac[b] : 1.0 - frac[b];
          grad[a] += contracted * dw * lv.resolution / extent[a];
        }
      }
    }
    return grad;
  }

  bool operator==(const HashGrid& o) const { return config_ == o.config_ && params_ == o.params_; }

private:
  struct Level {
    int resolution = 0;
    bool dense = false;
    std::uint32_t side = 0;
  };

  void precompute() {
    levels_.resize(config_.levels);
    for (int l = 0; l < config_.levels; ++l) {
      levels_[l].resolution = config_.resolution(l);
      levels_[l].dense = config_.dense(l);
      levels_[l].side = static_cast<std::uint32_t>(levels_[l].resolution) + 1;
    }
  }

  Vec3 normalized(const Vec3& p) const {
    Vec3 u = (p - config_.domain_min).cwiseQuotient(config_.domain_max - config_.domain_min);
    return u.cwiseMax(0.0).cwiseMin(1.0);
  }

  std::uint32_t slot_of(int l, std::uint32_t ix, std::uint32_t iy, std::uint32_t iz) const {
    const Level& lv = levels_[l];
    if (lv.dense) return ix + lv.side * (iy + lv.side * iz);
    const std::uint32_t h = (ix * kHashPrimes[0]) ^ (iy * kHashPrimes[1]) ^ (iz * kHashPrimes[2]);
    return h & (config_.table_size() - 1);
  }

  HashGridConfig config_;
  std::vector<double> params_;
  std::vector<Level> levels_;
};

// One sparse table-gradient record.
struct TableGradient {
  int level = 0;
  std::uint32_t slot = 0;
  std::vector<double> values;  // F entries
};

struct EncodeGradients {
  std::vector<TableGradient> tables;
  Vec3 point = Vec3::Zero();
};

inline std::vector<double> encode(const HashGrid& grid, const Vec3& p) { return grid.encode(p); }

// Reverse pass of encode(grid, p) for upstream dL/d(encoding).
inline EncodeGradients encode_backward(const HashGrid& grid, const Vec3& p,
                                       std::span<const double> upstream) {
  const HashGridConfig& cfg = grid.config();
  require(static_cast<int>(upstream.size()) == cfg.output_dim(),
          "encode_backward: upstream gradient has wrong length");
  std::vector<double> out(cfg.output_dim());
  std::vector<std::uint32_t> slots(cfg.levels * 8);
  std::vector<double> weights(cfg.levels * 8);
  grid.encode(p, out, slots, weights);

  EncodeGradients result;
  const int F = cfg.features;
  for (int l = 0; l < cfg.levels; ++l)
    for (int c = 0; c < 8; ++c) {
      const double w = weights[l * 8 + c];
      if (w == 0.0) continue;
      TableGradient g{l, slots[l * 8 + c], std::vector<double>(F)};
      for (int f = 0; f < F; ++f) g.values[f] = w * upstream[l * F + f];
      result.tables.push_back(std::move(g));
    }
  result.point = grid.point_gradient(p, upstream);
  return result;
}

}  // namespace opha
