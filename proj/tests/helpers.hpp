#pragma once

#include "ophavatar/common.hpp"
#include "ophavatar/geometry.hpp"
#include "ophavatar/image.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace opha::test {

// Small hand-rolled generators for property tests.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return opha::uniform(rng, lo, hi); }
  int integer(int lo, int hi) { return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1)) % (hi - lo + 1); }
  Vec3 vec(double lo = -1.0, double hi = 1.0) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }
  Vec3 unit() {
    Vec3 v;
    do v = vec();
    while (v.norm() < 1e-3 || v.norm() > 1.0);
    return v.normalized();
  }
  Mat3 rotation() {
    const Eigen::Quaterniond q(normal01(rng), normal01(rng), normal01(rng), normal01(rng));
    return q.normalized().toRotationMatrix();
  }
  Image image(int w, int h, int c = 3) {
    Image img(w, h, c);
    for (double& v : img.data) v = uniform01(rng);
    return img;
  }
};

// Smooth natural-ish test image: blobs and gradients, values in [0, 1].
inline Image smooth_image(int w, int h, std::uint64_t seed) {
  Gen g(seed);
  Image img(w, h, 3);
  const Vec3 a = g.vec(0.2, 0.8), b = g.vec(0.2, 0.8);
  const double fx = g.uniform(0.1, 0.4), fy = g.uniform(0.1, 0.4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double s = 0.5 + 0.5 * std::sin(fx * x + c) * std::cos(fy * y - c);
        img.at(x, y, c) = std::clamp(a[c] * s + b[c] * (1.0 - s) * (static_cast<double>(x) / w), 0.0, 1.0);
      }
  return img;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// Five-point central difference of f() with respect to x; x is restored.
template <class F>
double five_point(F&& f, double& x, double h = 1e-5) {
  const double saved = x;
  auto at = [&](double k) {
    x = saved + k * h;
    return f();
  };
  const double d = (8.0 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12.0 * h);
  x = saved;
  return d;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ophavatar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace opha::test
