#pragma once

#include "ophavatar/geometry.hpp"
#include "ophavatar/image.hpp"

#include <span>
#include <vector>

namespace opha {

constexpr double kPsnrCap = 100.0;

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InvalidInput("metrics: image shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

// 10 log10(1 / MSE) for images in [0, 1]; identical images give the 100 dB cap.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

// Rec. 601 luma: Y = 0.299 R + 0.587 G + 0.114 B (single-channel images pass through).
inline Image luma(const Image& img) {
  if (img.channels == 1) return img;
  Image y(img.width, img.height, 1);
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    y.data[p] = 0.299 * img.data[p * 3] + 0.587 * img.data[p * 3 + 1] + 0.114 * img.data[p * 3 + 2];
  return y;
}

struct SsimParams {
  int window = 8;
  double c1 = 1e-4;
  double c2 = 9e-4;
};

// Mean SSIM of luma over every fully contained window (stride 1, uniform
// weights, population statistics). Images smaller than the window use one
// window covering the whole image.
inline double ssim(const Image& a, const Image& b, const SsimParams& params = {}) {
  if (!a.same_shape(b)) throw InvalidInput("metrics: image shape mismatch");
  const Image ya = luma(a), yb = luma(b);
  const int wx = std::min(params.window, a.width), wy = std::min(params.window, a.height);
  const double n = static_cast<double>(wx) * wy;
  double total = 0.0;
  std::size_t count = 0;
  for (int y0 = 0; y0 + wy <= a.height; ++y0)
    for (int x0 = 0; x0 + wx <= a.width; ++x0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = y0; y < y0 + wy; ++y)
        for (int x = x0; x < x0 + wx; ++x) {
          const double va = ya.at(x, y), vb = yb.at(x, y);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double ma = sa / n, mb = sb / n;
      const double va = std::max(0.0, saa / n - ma * ma);
      const double vb = std::max(0.0, sbb / n - mb * mb);
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + params.c1) * (2 * cov + params.c2)) /
               ((ma * ma + mb * mb + params.c1) * (va + vb + params.c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Keypoint distance analog
// ---------------------------------------------------------------------------

struct KeypointView {
  std::vector<double> expression;
  Camera camera;
};

struct AkdResult {
  double akd = 0.0;                 // mean 2-D marker distance, pixels
  double depth_reprojection = 0.0;  // mean pixel error of depth-backprojected markers in the side view
  int used = 0;
  int depth_used = 0;
  int excluded = 0;                 // markers behind either camera
};

// `cam` orbited by `angle` radians about the world +y axis through the origin.
inline Camera orbit_about_y(const Camera& cam, double angle) {
  const Mat3 r = Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
  Camera out = cam;
  out.position = r * cam.position;
  out.rotation = r * cam.rotation;
  return out;
}

constexpr double kSideViewAngle = 30.0 * kPi / 180.0;

// Markers whose vertex normal faces the camera; occluded markers make the
// depth reprojection meaningless.
inline std::vector<int> visible_markers(const BlendshapeRig& rig, const KeypointView& view) {
  const TriMesh mesh = instance(rig, view.expression);
  const auto normals = vertex_normals(mesh);
  std::vector<int> out;
  for (int m : rig.markers)
    if (normals[m].dot(view.camera.position - mesh.vertices[m]) > 0.0) out.push_back(m);
  return out;
}

// Projects the rig's markers under both views and averages the 2-D
// distances. When `rendered_depth` (expected depth of the avatar render at
// `avatar`'s view) is given, every marker visible in that view is
// back-projected from its pixel at the rendered depth, and the result is
// compared with the true marker in a side view 30 degrees around +y from `gt`.
inline AkdResult akd_analog(const BlendshapeRig& rig, const KeypointView& avatar, const KeypointView& gt,
                            const Image* rendered_depth = nullptr) {
  const TriMesh mesh_a = instance(rig, avatar.expression);
  const TriMesh mesh_g = instance(rig, gt.expression);
  AkdResult r;
  for (int m : rig.markers) {
    const auto pa = project(avatar.camera, mesh_a.vertices[m]);
    const auto pg = project(gt.camera, mesh_g.vertices[m]);
    if (!pa || !pg) {
      ++r.excluded;
      continue;
    }
    r.akd += (*pa - *pg).norm();
    ++r.used;
  }
  if (r.used > 0) r.akd /= r.used;
  if (!rendered_depth) return r;

  const Camera side = orbit_about_y(gt.camera, kSideViewAngle);
  double err = 0.0;
  for (int m : visible_markers(rig, avatar)) {
    const auto pa = project(avatar.camera, mesh_a.vertices[m]);
    if (!pa) continue;
    const int x = static_cast<int>(std::floor((*pa)[0])), y = static_cast<int>(std::floor((*pa)[1]));
    if (x < 0 || y < 0 || x >= rendered_depth->width || y >= rendered_depth->height) continue;
    const double depth = rendered_depth->at(x, y);
    if (depth <= 0.0) continue;
    const Ray ray = ray_through(avatar.camera, (*pa)[0], (*pa)[1]);
    const auto back = project(side, ray.at(depth));
    const auto truth = project(side, mesh_g.vertices[m]);
    if (!back || !truth) continue;
    err += (*back - *truth).norm();
    ++r.depth_used;
  }
  if (r.depth_used > 0) r.depth_reprojection = err / r.depth_used;
  return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct FrameScore {
  int frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double akd = 0.0;
};

struct EvalReport {
  std::vector<FrameScore> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_akd = 0.0;

  void finalize() {
    mean_psnr = mean_ssim = mean_akd = 0.0;
    for (const auto& f : frames) {
      mean_psnr += f.psnr;
      mean_ssim += f.ssim;
      mean_akd += f.akd;
    }
    if (!frames.empty()) {
      const double n = static_cast<double>(frames.size());
      mean_psnr /= n;
      mean_ssim /= n;
      mean_akd /= n;
    }
  }
};

inline EvalReport evaluate_images(std::span<const Image> a, std::span<const Image> b) {
  require(a.size() == b.size(), "evaluate: image count mismatch");
  EvalReport report;
  for (std::size_t i = 0; i < a.size(); ++i)
    report.frames.push_back({static_cast<int>(i), psnr(a[i], b[i]), ssim(a[i], b[i]), 0.0});
  report.finalize();
  return report;
}

}  // namespace opha
