#pragma once

#include "ophavatar/image.hpp"

#include <charconv>
#include <span>
#include <string>
#include <vector>

namespace opha {

enum class RestorerKind { identity, classical, oracle };

// Image -> image restoration stage of the dataset-update loop.
//  identity : no-op control
//  classical: Gaussian denoise, then unsharp mask
//             out = d + amount * (d - blur(d, sharpen_sigma)), clamped
//  oracle   : lambda * clean + (1 - lambda) * input (synthetic data only)
struct RestorationOperator {
  RestorerKind kind = RestorerKind::identity;
  double denoise_sigma = 0.6;
  double sharpen_amount = 1.2;
  double sharpen_sigma = 1.5;
  double lambda = 1.0;

  static RestorationOperator identity() { return {}; }
  static RestorationOperator classical(double denoise = 0.6, double amount = 1.2, double radius = 1.5) {
    RestorationOperator op;
    op.kind = RestorerKind::classical;
    op.denoise_sigma = denoise;
    op.sharpen_amount = amount;
    op.sharpen_sigma = radius;
    return op;
  }
  static RestorationOperator oracle(double lambda) {
    RestorationOperator op;
    op.kind = RestorerKind::oracle;
    op.lambda = lambda;
    return op;
  }

  void validate() const {
    require(denoise_sigma >= 0.0 && sharpen_amount >= 0.0 && sharpen_sigma > 0.0,
            "restorer: classical parameters must be non-negative");
    require(lambda >= 0.0 && lambda <= 1.0, "restorer: oracle lambda must lie in [0, 1]");
  }

  bool operator==(const RestorationOperator&) const = default;
};

// "identity", "classical", "classical:<denoise>,<amount>[,<radius>]", "oracle:<lambda>".
inline RestorationOperator parse_restorer(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::string rest = spec.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw InvalidInput("restorer: bad number '" + tok + "' in '" + spec + "'");
      args.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  RestorationOperator op;
  if (kind == "identity") {
    require(args.empty(), "restorer: identity takes no arguments");
  } else if (kind == "classical") {
    require(args.size() <= 3, "restorer: classical takes at most 3 arguments");
    op = RestorationOperator::classical();
    if (args.size() > 0) op.denoise_sigma = args[0];
    if (args.size() > 1) op.sharpen_amount = args[1];
    if (args.size() > 2) op.sharpen_sigma = args[2];
  } else if (kind == "oracle") {
    require(args.size() <= 1, "restorer: oracle takes one argument");
    op = RestorationOperator::oracle(args.empty() ? 1.0 : args[0]);
  } else {
    throw InvalidInput("restorer: unknown kind '" + kind + "'");
  }
  op.validate();
  return op;
}

inline std::string to_string(const RestorationOperator& op) {
  switch (op.kind) {
    case RestorerKind::identity: return "identity";
    case RestorerKind::classical:
      return "classical:" + format_number(op.denoise_sigma) + "," + format_number(op.sharpen_amount) + "," +
             format_number(op.sharpen_sigma);
    case RestorerKind::oracle: return "oracle:" + format_number(op.lambda);
  }
  return "identity";
}

struct FrameContext {
  int frame = 0;
  int round = 0;
  const Image* clean = nullptr;
};

class RestorationError : public Error {
public:
  using Error::Error;
};

inline Image restore(const RestorationOperator& op, const Image& image, const FrameContext& ctx = {}) {
  op.validate();
  switch (op.kind) {
    case RestorerKind::identity:
      return image;
    case RestorerKind::classical: {
      const Image denoised = gaussian_blur(image, op.denoise_sigma);
      const Image low = gaussian_blur(denoised, op.sharpen_sigma);
      Image out = denoised;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = denoised.data[i] + op.sharpen_amount * (denoised.data[i] - low.data[i]);
      clamp01(out);
      return out;
    }
    case RestorerKind::oracle: {
      if (!ctx.clean)
        throw RestorationError("oracle restorer: frame " + std::to_string(ctx.frame) +
                               " has no clean ground-truth image");
      if (!ctx.clean->same_shape(image))
        throw RestorationError("oracle restorer: frame " + std::to_string(ctx.frame) +
                               " clean image has a different shape");
      if (op.lambda == 1.0) return *ctx.clean;
      Image out = image;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = op.lambda * ctx.clean->data[i] + (1.0 - op.lambda) * image.data[i];
      clamp01(out);
      return out;
    }
  }
  return image;
}

// Mean absolute difference of each restored image from the original.
inline std::vector<double> restoration_drift(const Image& original, std::span<const Image> restored) {
  std::vector<double> out;
  out.reserve(restored.size());
  for (const Image& img : restored) out.push_back(mean_abs_difference(original, img));
  return out;
}

}  // namespace opha
