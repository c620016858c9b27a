#pragma once

#include "ophavatar/pipeline.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace opha {

struct SceneConfig {
  std::string rig = "sphere_head";
  int frames = 60;
  CameraSpec camera;
  TrajectorySpec trajectory;
  bool keep_clean = true;

  bool operator==(const SceneConfig&) const = default;
};

struct MetricsConfig {
  SsimParams ssim;
  int held_out = 12;
};

// Whole-run configuration. Every section is optional except `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  SceneConfig scene;
  DegradationParams degradation;
  AvatarSpec avatar;
  TrainConfig train;
  PipelineConfig pipeline;
  MetricsConfig metrics;

  // Pipeline config with the avatar/train sections and seed filled in.
  PipelineConfig pipeline_config() const {
    PipelineConfig p = pipeline;
    p.avatar = avatar;
    p.train = train;
    p.seed = seed;
    return p;
  }
  std::uint64_t synth_seed() const { return derive_seed(seed, 0x73796e); }
  DegradationParams degradation_params() const {
    DegradationParams d = degradation;
    d.seed = derive_seed(seed, 0x646567);
    return d;
  }

  void validate() const {
    require(!scene.rig.empty(), "scene.rig must not be empty");
    bool known = false;
    for (const auto& p : rig_presets()) known = known || p == scene.rig;
    require(known, "scene.rig: unknown preset '" + scene.rig + "'");
    require(scene.frames >= 1, "scene.frames must be >= 1");
    require(scene.camera.width >= 1 && scene.camera.height >= 1, "scene.width/height must be >= 1");
    require(scene.camera.distance > 0.0 && scene.camera.focal_scale > 0.0,
            "scene.distance and scene.focal_scale must be positive");
    require(scene.trajectory.min_cycles > 0.0 && scene.trajectory.max_cycles >= scene.trajectory.min_cycles,
            "scene: need 0 < min_cycles <= max_cycles");
    require(scene.trajectory.expression_range >= 0.0 && scene.trajectory.yaw_range_deg >= 0.0 &&
                scene.trajectory.pitch_range_deg >= 0.0,
            "scene: ranges must be non-negative");
    degradation.validate();
    avatar.grid.validate();
    FieldConfig{avatar.grid.output_dim(), avatar.hidden, avatar.geo_features}.validate();
    avatar.render.validate();
    require(avatar.influence_radius > 0.0, "render.influence_radius must be positive");
    train.validate();
    require(train.iterations >= 1, "train.iterations must be >= 1");
    pipeline_config().validate();
    require(metrics.ssim.window >= 1, "metrics.ssim_window must be >= 1");
    require(metrics.held_out >= 0, "metrics.held_out must be >= 0");
  }
};

class ConfigError : public InvalidInput {
public:
  using InvalidInput::InvalidInput;
};

namespace detail {

inline std::string where(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  return m.line >= 0 ? "line " + std::to_string(m.line + 1) : "unknown line";
}

// Reads known keys from one mapping and rejects everything else.
class Section {
public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsMap()) throw ConfigError(where(node_) + ": section '" + name_ + "' must be a mapping");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(v) + ": bad value for '" + name_ + "." + key + "'");
    }
  }

  void get_vec3(const std::string& key, Vec3& out) {
    seen_.insert(key);
    if (!node_) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (!v.IsSequence() || v.size() != 3) throw ConfigError(where(v) + ": '" + name_ + "." + key + "' needs 3 numbers");
    try {
      for (int i = 0; i < 3; ++i) out[i] = v[i].as<double>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(v) + ": bad value for '" + name_ + "." + key + "'");
    }
  }

  void allow(const std::string& key) { seen_.insert(key); }

  void finish() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError(where(kv.first) + ": unknown key '" + (name_.empty() ? "" : name_ + ".") + key + "'");
    }
  }

private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

inline LossKind parse_loss(const std::string& s) {
  if (s == "smooth_l1") return LossKind::smooth_l1;
  if (s == "l2") return LossKind::l2;
  throw ConfigError("train.loss: expected smooth_l1 or l2, got '" + s + "'");
}

inline std::string loss_name(LossKind k) { return k == LossKind::l2 ? "l2" : "smooth_l1"; }

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  RunConfig c;
  detail::Section top(root, "");
  if (!root["seed"]) throw ConfigError("config: 'seed' is required");
  top.get("seed", c.seed);

  for (const char* section : {"scene", "degradation", "grid", "mlp", "render", "train", "pipeline", "metrics"})
    top.allow(section);
  top.finish();

  {
    detail::Section s(root["scene"], "scene");
    s.get("rig", c.scene.rig);
    s.get("frames", c.scene.frames);
    s.get("width", c.scene.camera.width);
    s.get("height", c.scene.camera.height);
    s.get("distance", c.scene.camera.distance);
    s.get("focal_scale", c.scene.camera.focal_scale);
    s.get("expression_range", c.scene.trajectory.expression_range);
    s.get("yaw_range_deg", c.scene.trajectory.yaw_range_deg);
    s.get("pitch_range_deg", c.scene.trajectory.pitch_range_deg);
    s.get("min_cycles", c.scene.trajectory.min_cycles);
    s.get("max_cycles", c.scene.trajectory.max_cycles);
    s.get("fixed", c.scene.trajectory.fixed);
    s.get("keep_clean", c.scene.keep_clean);
    s.finish();
  }
  {
    detail::Section s(root["degradation"], "degradation");
    s.get("blur_sigma0", c.degradation.blur_sigma0);
    s.get("blur_gain", c.degradation.blur_gain);
    s.get("noise_sigma", c.degradation.noise_sigma);
    s.get("quant_levels", c.degradation.quant_levels);
    s.finish();
  }
  {
    detail::Section s(root["grid"], "grid");
    s.get("levels", c.avatar.grid.levels);
    s.get("base_resolution", c.avatar.grid.base_resolution);
    s.get("growth", c.avatar.grid.growth);
    s.get("log2_table_size", c.avatar.grid.log2_table_size);
    s.get("features", c.avatar.grid.features);
    s.finish();
  }
  {
    detail::Section s(root["mlp"], "mlp");
    s.get("hidden", c.avatar.hidden);
    s.get("geo_features", c.avatar.geo_features);
    s.finish();
  }
  {
    detail::Section s(root["render"], "render");
    s.get("n_samples", c.avatar.render.n_samples);
    s.get("stratified", c.avatar.render.stratified);
    s.get("density_scale", c.avatar.render.density_scale);
    s.get("early_stop_transmittance", c.avatar.render.early_stop_transmittance);
    s.get("segment_samples", c.avatar.render.segment_samples);
    s.get_vec3("background", c.avatar.render.background);
    s.get("influence_radius", c.avatar.influence_radius);
    s.finish();
  }
  {
    detail::Section s(root["train"], "train");
    s.get("iterations", c.train.iterations);
    s.get("rays_per_batch", c.train.rays_per_batch);
    s.get("lr_grid", c.train.lr_grid);
    s.get("lr_mlp", c.train.lr_mlp);
    s.get("beta1", c.train.beta1);
    s.get("beta2", c.train.beta2);
    s.get("eps", c.train.eps);
    std::string loss = detail::loss_name(c.train.loss);
    s.get("loss", loss);
    c.train.loss = detail::parse_loss(loss);
    s.get("log_every", c.train.log_every);
    s.finish();
  }
  {
    detail::Section s(root["pipeline"], "pipeline");
    s.get("rounds", c.pipeline.rounds);
    std::string restorer = to_string(c.pipeline.restorer);
    s.get("restorer", restorer);
    c.pipeline.restorer = parse_restorer(restorer);
    s.get("retrain_iterations", c.pipeline.retrain_iterations);
    s.get("warm_start", c.pipeline.warm_start);
    s.get("augment_views", c.pipeline.augment_views);
    s.finish();
  }
  {
    detail::Section s(root["metrics"], "metrics");
    s.get("ssim_window", c.metrics.ssim.window);
    s.get("ssim_c1", c.metrics.ssim.c1);
    s.get("ssim_c2", c.metrics.ssim.c2);
    s.get("held_out", c.metrics.held_out);
    s.finish();
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// The degraded dataset a config describes (what `synth` writes).
inline Dataset synthesize(const RunConfig& cfg, int threads = 0) {
  Dataset ds = make_dataset(make_rig(cfg.scene.rig), cfg.scene.frames, cfg.scene.trajectory, cfg.scene.camera,
                            cfg.degradation_params(), cfg.synth_seed(), cfg.scene.keep_clean, {}, threads);
  ds.rig_preset = cfg.scene.rig;
  return ds;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Fully expanded, normalized YAML; parse_config(echo_config(c)) == c.
inline std::string echo_config(const RunConfig& c) {
  const auto num = [](double v) { return format_number(v); };
  const auto boolean = [](bool b) { return std::string(b ? "true" : "false"); };
  const auto vec3 = [&](const Vec3& v) { return "[" + num(v[0]) + ", " + num(v[1]) + ", " + num(v[2]) + "]"; };
  std::ostringstream o;
  o << "seed: " << c.seed << "\n";
  o << "scene:\n"
    << "  rig: " << c.scene.rig << "\n"
    << "  frames: " << c.scene.frames << "\n"
    << "  width: " << c.scene.camera.width << "\n"
    << "  height: " << c.scene.camera.height << "\n"
    << "  distance: " << num(c.scene.camera.distance) << "\n"
    << "  focal_scale: " << num(c.scene.camera.focal_scale) << "\n"
    << "  expression_range: " << num(c.scene.trajectory.expression_range) << "\n"
    << "  yaw_range_deg: " << num(c.scene.trajectory.yaw_range_deg) << "\n"
    << "  pitch_range_deg: " << num(c.scene.trajectory.pitch_range_deg) << "\n"
    << "  min_cycles: " << num(c.scene.trajectory.min_cycles) << "\n"
    << "  max_cycles: " << num(c.scene.trajectory.max_cycles) << "\n"
    << "  fixed: " << boolean(c.scene.trajectory.fixed) << "\n"
    << "  keep_clean: " << boolean(c.scene.keep_clean) << "\n";
  o << "degradation:\n"
    << "  blur_sigma0: " << num(c.degradation.blur_sigma0) << "\n"
    << "  blur_gain: " << num(c.degradation.blur_gain) << "\n"
    << "  noise_sigma: " << num(c.degradation.noise_sigma) << "\n"
    << "  quant_levels: " << c.degradation.quant_levels << "\n";
  o << "grid:\n"
    << "  levels: " << c.avatar.grid.levels << "\n"
    << "  base_resolution: " << c.avatar.grid.base_resolution << "\n"
    << "  growth: " << num(c.avatar.grid.growth) << "\n"
    << "  log2_table_size: " << c.avatar.grid.log2_table_size << "\n"
    << "  features: " << c.avatar.grid.features << "\n";
  o << "mlp:\n"
    << "  hidden: " << c.avatar.hidden << "\n"
    << "  geo_features: " << c.avatar.geo_features << "\n";
  o << "render:\n"
    << "  n_samples: " << c.avatar.render.n_samples << "\n"
    << "  stratified: " << boolean(c.avatar.render.stratified) << "\n"
    << "  density_scale: " << num(c.avatar.render.density_scale) << "\n"
    << "  early_stop_transmittance: " << num(c.avatar.render.early_stop_transmittance) << "\n"
    << "  segment_samples: " << c.avatar.render.segment_samples << "\n"
    << "  background: " << vec3(c.avatar.render.background) << "\n"
    << "  influence_radius: " << num(c.avatar.influence_radius) << "\n";
  o << "train:\n"
    << "  iterations: " << c.train.iterations << "\n"
    << "  rays_per_batch: " << c.train.rays_per_batch << "\n"
    << "  lr_grid: " << num(c.train.lr_grid) << "\n"
    << "  lr_mlp: " << num(c.train.lr_mlp) << "\n"
    << "  beta1: " << num(c.train.beta1) << "\n"
    << "  beta2: " << num(c.train.beta2) << "\n"
    << "  eps: " << num(c.train.eps) << "\n"
    << "  loss: " << detail::loss_name(c.train.loss) << "\n"
    << "  log_every: " << c.train.log_every << "\n";
  o << "pipeline:\n"
    << "  rounds: " << c.pipeline.rounds << "\n"
    << "  restorer: \"" << to_string(c.pipeline.restorer) << "\"\n"
    << "  retrain_iterations: " << c.pipeline.retrain_iterations << "\n"
    << "  warm_start: " << boolean(c.pipeline.warm_start) << "\n"
    << "  augment_views: " << c.pipeline.augment_views << "\n";
  o << "metrics:\n"
    << "  ssim_window: " << c.metrics.ssim.window << "\n"
    << "  ssim_c1: " << num(c.metrics.ssim.c1) << "\n"
    << "  ssim_c2: " << num(c.metrics.ssim.c2) << "\n"
    << "  held_out: " << c.metrics.held_out << "\n";
  return o.str();
}

}  // namespace opha
