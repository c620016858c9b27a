#pragma once

#include "ophavatar/common.hpp"

#include <Eigen/Dense>

#include <random>
#include <span>
#include <vector>

namespace opha {

struct FieldConfig {
  int input_dim = 16;
  int hidden = 64;
  int geo_features = 15;

  void validate() const {
    require(input_dim >= 1, "field: input dimension must be >= 1");
    require(hidden >= 1, "field: hidden width must be >= 1");
    require(geo_features >= 0, "field: latent feature count must be >= 0");
  }
  bool operator==(const FieldConfig&) const = default;
};

using MatrixX = Eigen::MatrixXd;
using VectorX = Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixX>;
using MutMap = Eigen::Map<MatrixX>;

// Storage that Eigen maps into. Eigen peels unaligned heads with scalar code
// (no FMA) and vectorizes the rest, so the rounding of a product depends on
// where the buffer starts. Aligned storage pins that to the layer offsets,
// which keeps results independent of which thread allocated the buffer.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

inline double softplus(double x) {
  return x > 20.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Activations of a batch of samples (one column per sample), kept for the
// reverse pass.
struct FieldCache {
  MatrixX input;     // in x N
  MatrixX a1, a2;    // H x N, post-ReLU
  MatrixX density;   // (1 + G) x N, raw density-branch output
  MatrixX color_in;  // (G + 3) x N
  MatrixX a4;        // H x N
  MatrixX rgb;       // 3 x N
  VectorX sigma;     // N
};

// Density branch in -> H -> H -> 1+G (ReLU hidden, softplus density), color
// branch G+3 -> H -> 3 (ReLU hidden, sigmoid output). The view direction is
// appended raw to the latent features.
class FieldMLP {
public:
  FieldMLP() = default;
  explicit FieldMLP(const FieldConfig& cfg) : config_(cfg) {
    cfg.validate();
    const int in = cfg.input_dim, H = cfg.hidden, G = cfg.geo_features;
    std::size_t off = 0;
    auto add = [&](Layer& layer, int rows, int cols) {
      layer.rows = rows;
      layer.cols = cols;
      layer.weight = off;
      off += static_cast<std::size_t>(rows) * cols;
      layer.bias = off;
      off += rows;
    };
    add(l1_, H, in);
    add(l2_, H, H);
    add(l3_, 1 + G, H);
    add(l4_, H, G + 3);
    add(l5_, 3, H);
    params_.assign(off, 0.0);
  }

  // Kaiming-style uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x4d4c50));
    for (const Layer* layer : {&l1_, &l2_, &l3_, &l4_, &l5_}) {
      const double bound = std::sqrt(6.0 / layer->cols);
      for (std::size_t i = 0; i < static_cast<std::size_t>(layer->rows) * layer->cols; ++i)
        params_[layer->weight + i] = uniform(rng, -bound, bound);
      for (int r = 0; r < layer->rows; ++r) params_[layer->bias + r] = 0.0;
    }
  }

  const FieldConfig& config() const { return config_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  // Direct access for tests: layer k in 1..5.
  MutMap weight(int k) { const Layer& l = layer(k); return MutMap(params_.data() + l.weight, l.rows, l.cols); }
  Eigen::Map<VectorX> bias(int k) { const Layer& l = layer(k); return Eigen::Map<VectorX>(params_.data() + l.bias, l.rows); }
  ConstMap weight(int k) const { const Layer& l = layer(k); return ConstMap(params_.data() + l.weight, l.rows, l.cols); }
  Eigen::Map<const VectorX> bias(int k) const { const Layer& l = layer(k); return Eigen::Map<const VectorX>(params_.data() + l.bias, l.rows); }

  // input: in x N, dirs: 3 x N.
  void forward(const MatrixX& input, const MatrixX& dirs, FieldCache& cache) const {
    const int G = config_.geo_features;
    const Eigen::Index n = input.cols();
    cache.input = input;
    cache.a1.noalias() = weight(1) * input;
    cache.a1.colwise() += bias(1);
    cache.a1 = cache.a1.cwiseMax(0.0);
    cache.a2.noalias() = weight(2) * cache.a1;
    cache.a2.colwise() += bias(2);
    cache.a2 = cache.a2.cwiseMax(0.0);
    cache.density.noalias() = weight(3) * cache.a2;
    cache.density.colwise() += bias(3);
    cache.color_in.resize(G + 3, n);
    if (G > 0) cache.color_in.topRows(G) = cache.density.bottomRows(G);
    cache.color_in.bottomRows(3) = dirs;
    cache.a4.noalias() = weight(4) * cache.color_in;
    cache.a4.colwise() += bias(4);
    cache.a4 = cache.a4.cwiseMax(0.0);
    cache.rgb.noalias() = weight(5) * cache.a4;
    cache.rgb.colwise() += bias(5);
    cache.rgb = cache.rgb.unaryExpr([](double x) { return sigmoid(x); });
    cache.sigma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) cache.sigma[i] = softplus(cache.density(0, i));
    if (!cache.rgb.allFinite() || !cache.sigma.allFinite())
      throw NumericError("field: non-finite activations (training diverged?)");
  }

  // Accumulates parameter gradients into grad (same layout as params()).
  // d_input / d_dirs are written when non-null.
  void backward(const FieldCache& cache, const VectorX& d_sigma, const MatrixX& d_rgb,
                std::span<double> grad, MatrixX* d_input = nullptr, MatrixX* d_dirs = nullptr) const {
    const int G = config_.geo_features;
    const MatrixX dz5 = d_rgb.cwiseProduct(cache.rgb.cwiseProduct((1.0 - cache.rgb.array()).matrix()));
    accumulate(l5_, dz5, cache.a4, grad);
    MatrixX dz4 = weight(5).transpose() * dz5;
    relu_mask(dz4, cache.a4);
    accumulate(l4_, dz4, cache.color_in, grad);
    const MatrixX d_color_in = weight(4).transpose() * dz4;

    MatrixX d_density(1 + G, cache.input.cols());
    for (Eigen::Index i = 0; i < d_density.cols(); ++i)
      d_density(0, i) = d_sigma[i] * sigmoid(cache.density(0, i));
    if (G > 0) d_density.bottomRows(G) = d_color_in.topRows(G);
    accumulate(l3_, d_density, cache.a2, grad);
    MatrixX dz2 = weight(3).transpose() * d_density;
    relu_mask(dz2, cache.a2);
    accumulate(l2_, dz2, cache.a1, grad);
    MatrixX dz1 = weight(2).transpose() * dz2;
    relu_mask(dz1, cache.a1);
    accumulate(l1_, dz1, cache.input, grad);
    if (d_input) d_input->noalias() = weight(1).transpose() * dz1;
    if (d_dirs) *d_dirs = d_color_in.bottomRows(3);
  }

  bool operator==(const FieldMLP& o) const { return config_ == o.config_ && params_ == o.params_; }

private:
  struct Layer {
    int rows = 0, cols = 0;
    std::size_t weight = 0, bias = 0;
  };

  const Layer& layer(int k) const {
    switch (k) {
      case 1: return l1_;
      case 2: return l2_;
      case 3: return l3_;
      case 4: return l4_;
      case 5: return l5_;
    }
    throw InvalidInput("field: layer index must be 1..5");
  }

  static void relu_mask(MatrixX& d, const MatrixX& activation) {
    d = (activation.array() > 0.0).select(d, 0.0);
  }

  static void accumulate(const Layer& layer, const MatrixX& dz, const MatrixX& input,
                         std::span<double> grad) {
    MutMap dw(grad.data() + layer.weight, layer.rows, layer.cols);
    dw.noalias() += dz * input.transpose();
    Eigen::Map<VectorX> db(grad.data() + layer.bias, layer.rows);
    db += dz.rowwise().sum();
  }

  FieldConfig config_;
  ParamVector params_;
  Layer l1_, l2_, l3_, l4_, l5_;
};

// Single-sample evaluation.
struct FieldSample {
  double sigma = 0.0;
  Vec3 rgb = Vec3::Zero();
  FieldCache cache;
};

struct FieldGradients {
  ParamVector params;
  std::vector<double> d_enc;
  Vec3 d_dir = Vec3::Zero();
};

inline FieldSample field_forward(const FieldMLP& mlp, std::span<const double> enc, const Vec3& dir) {
  require(static_cast<int>(enc.size()) == mlp.config().input_dim, "field_forward: encoding size mismatch");
  MatrixX input = Eigen::Map<const VectorX>(enc.data(), enc.size());
  MatrixX dirs = dir;
  FieldSample s;
  mlp.forward(input, dirs, s.cache);
  s.sigma = s.cache.sigma[0];
  s.rgb = s.cache.rgb.col(0);
  return s;
}

inline FieldGradients field_backward(const FieldMLP& mlp, const FieldCache& cache, double d_sigma,
                                     const Vec3& d_rgb) {
  FieldGradients g;
  g.params.assign(mlp.param_count(), 0.0);
  VectorX ds(1);
  ds[0] = d_sigma;
  MatrixX drgb = d_rgb;
  MatrixX d_input, d_dirs;
  mlp.backward(cache, ds, drgb, g.params, &d_input, &d_dirs);
  g.d_enc.assign(d_input.data(), d_input.data() + d_input.size());
  g.d_dir = d_dirs.col(0);
  return g;
}

}  // namespace opha
