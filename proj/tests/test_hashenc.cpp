#include "helpers.hpp"
#include "ophavatar/hashenc.hpp"

#include <gtest/gtest.h>

using namespace opha;
using opha::test::Gen;
using opha::test::rel_error;

namespace {

HashGridConfig micro() {
  HashGridConfig c;
  c.levels = 4;
  c.base_resolution = 2;
  c.growth = 2.0;
  c.log2_table_size = 6;  // levels 0-1 dense, 2-3 hashed
  c.features = 2;
  return c;
}

HashGrid random_grid(const HashGridConfig& cfg, std::uint64_t seed) {
  HashGrid g(cfg);
  Gen gen(seed);
  for (double& v : g.params()) v = gen.uniform(-1, 1);
  return g;
}

double contracted(const HashGrid& g, const Vec3& p, const std::vector<double>& up) {
  const auto e = g.encode(p);
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) s += e[i] * up[i];
  return s;
}

}  // namespace

TEST(HashGridConfig, LevelsAndDensity) {
  const HashGridConfig c = micro();
  EXPECT_EQ(c.resolution(0), 2);
  EXPECT_EQ(c.resolution(3), 16);
  EXPECT_TRUE(c.dense(0));
  EXPECT_FALSE(c.dense(3));
  EXPECT_EQ(c.output_dim(), 8);
  HashGridConfig bad = c;
  bad.growth = 1.0;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = c;
  bad.levels = 0;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(HashGrid, DenseSlotsAreDistinct) {
  const HashGridConfig c = micro();
  std::vector<int> seen(c.table_size(), 0);
  const std::uint32_t side = c.resolution(0) + 1;
  for (std::uint32_t z = 0; z < side; ++z)
    for (std::uint32_t y = 0; y < side; ++y)
      for (std::uint32_t x = 0; x < side; ++x) EXPECT_EQ(seen[grid_slot(c, 0, x, y, z)]++, 0);
}

TEST(HashGrid, ConstantTableEncodesConstant) {
  HashGrid g(micro());
  for (double& v : g.params()) v = 0.25;
  Gen gen(20);
  for (int i = 0; i < 100; ++i)
    for (double e : g.encode(gen.vec(-1.5, 1.5))) EXPECT_NEAR(e, 0.25, 1e-15);
}

TEST(HashGrid, InitializationIsSeeded) {
  HashGrid a(micro()), b(micro()), c(micro());
  a.initialize(5);
  b.initialize(5);
  c.initialize(6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  for (double v : a.params()) EXPECT_LE(std::abs(v), 1e-4);
}

// The encoding is linear in the tables, so the analytic gradient matches
// central differences to rounding error.
TEST(HashGrid, TableGradientMatchesFiniteDifference) {
  const HashGridConfig cfg = micro();
  HashGrid g = random_grid(cfg, 21);
  Gen gen(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 p = gen.vec(-1.1, 1.1);
    std::vector<double> up(cfg.output_dim());
    for (double& u : up) u = gen.uniform(-1, 1);
    const EncodeGradients eg = encode_backward(g, p, up);
    std::vector<double> dense(g.params().size(), 0.0);
    for (const auto& t : eg.tables)
      for (int f = 0; f < cfg.features; ++f) dense[g.offset(t.level, t.slot) + f] += t.values[f];
    for (int k = 0; k < 10; ++k) {
      const auto& t = eg.tables[gen.integer(0, static_cast<int>(eg.tables.size()) - 1)];
      const std::size_t idx = g.offset(t.level, t.slot) + gen.integer(0, cfg.features - 1);
      const double h = 1e-5, saved = g.params()[idx];
      g.params()[idx] = saved + h;
      const double fp = contracted(g, p, up);
      g.params()[idx] = saved - h;
      const double fm = contracted(g, p, up);
      g.params()[idx] = saved;
      EXPECT_LT(rel_error(dense[idx], (fp - fm) / (2 * h)), 1e-7);
    }
  }
}

TEST(HashGrid, PointGradientMatchesFiniteDifference) {
  const HashGridConfig cfg = micro();
  const HashGrid g = random_grid(cfg, 23);
  Gen gen(24);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p = gen.vec(-1.1, 1.1);
    std::vector<double> up(cfg.output_dim());
    for (double& u : up) u = gen.uniform(-1, 1);
    const Vec3 grad = g.point_gradient(p, up);
    for (int a = 0; a < 3; ++a) {
      const double h = 1e-7;
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      // Skip samples that straddle a cell boundary at the finest level.
      const double cell = 2.4 / cfg.resolution(cfg.levels - 1);
      const double rel = (p[a] + 1.2) / cell;
      if (std::abs(rel - std::round(rel)) < 1e-4) continue;
      EXPECT_NEAR(grad[a], (contracted(g, pp, up) - contracted(g, pm, up)) / (2 * h), 1e-6);
    }
  }
}

TEST(HashGrid, ClampedAxesHaveZeroPointGradient) {
  const HashGrid g = random_grid(micro(), 25);
  std::vector<double> up(micro().output_dim(), 1.0);
  const Vec3 grad = g.point_gradient(Vec3(2.0, 0.1, -3.0), up);
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_EQ(grad[2], 0.0);
}

TEST(HashGrid, WeightsFormPartitionOfUnity) {
  const HashGridConfig cfg = micro();
  const HashGrid g(cfg);
  Gen gen(26);
  std::vector<double> out(cfg.output_dim());
  std::vector<std::uint32_t> slots(cfg.levels * 8);
  std::vector<double> weights(cfg.levels * 8);
  for (int i = 0; i < 100; ++i) {
    g.encode(gen.vec(-1.3, 1.3), out, slots, weights);
    for (int l = 0; l < cfg.levels; ++l) {
      double s = 0.0;
      for (int c = 0; c < 8; ++c) s += weights[l * 8 + c];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(HashGrid, BackwardRejectsWrongUpstream) {
  const HashGrid g(micro());
  std::vector<double> up(3, 0.0);
  EXPECT_THROW(encode_backward(g, Vec3::Zero(), up), InvalidInput);
}
