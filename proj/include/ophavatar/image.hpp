#pragma once

#include "ophavatar/common.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace opha {

// Row-major H x W x C image of linear intensities.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
    require(w > 0 && h > 0 && c > 0, "image dimensions must be positive");
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  // Clamp-to-edge access.
  double clamped(int x, int y, int c = 0) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return at(x, y, c);
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool empty() const { return data.empty(); }

  bool operator==(const Image&) const = default;
};

inline Image filled(int w, int h, const Vec3& rgb) {
  Image img(w, h, 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = rgb[c];
  return img;
}

inline void clamp01(Image& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

inline bool in_unit_range(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

// Separable Gaussian blur with clamp-to-edge borders; radius ceil(3 sigma).
inline Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) k /= total;

  Image tmp(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src.clamped(x + k, y, c);
        tmp.at(x, y, c) = acc;
      }
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.clamped(x, y + k, c);
        out.at(x, y, c) = acc;
      }
  return out;
}

// Mean squared 5-point Laplacian over interior pixels; the high-frequency
// energy probe used for restoration drift.
inline double high_frequency_energy(const Image& img) {
  if (img.width < 3 || img.height < 3) return 0.0;
  double acc = 0.0;
  std::size_t count = 0;
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const double lap = img.at(x - 1, y, c) + img.at(x + 1, y, c) + img.at(x, y - 1, c) +
                           img.at(x, y + 1, c) - 4.0 * img.at(x, y, c);
        acc += lap * lap;
        ++count;
      }
  return acc / static_cast<double>(count);
}

inline double mean_abs_difference(const Image& a, const Image& b) {
  require(a.same_shape(b), "mean_abs_difference: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return acc / static_cast<double>(a.data.size());
}

}  // namespace opha
