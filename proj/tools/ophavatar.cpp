// Command-line front end: synth, train, render, restore, eval, animate, pipeline.
#include "ophavatar/checkpoint.hpp"
#include "ophavatar/config.hpp"
#include "ophavatar/dataset_io.hpp"
#include "ophavatar/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace opha;

namespace {

// Exclusive ownership of an output directory for one command. Any failure
// leaves a FAILED file with the error message next to the partial outputs.
class RunDir {
public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    lock_ = dir_ / ".lock";
    std::FILE* f = std::fopen(lock_.string().c_str(), "wx");
    if (!f) throw IoError("'" + dir_.string() + "' is locked by another command (remove .lock if stale)");
    std::fclose(f);
    fs::remove(dir_ / "FAILED");
  }
  ~RunDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  void fail(const std::string& message) const {
    std::ofstream out(dir_ / "FAILED");
    out << message << "\n";
  }
  const fs::path& path() const { return dir_; }

private:
  fs::path dir_;
  fs::path lock_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string curve_csv(const std::vector<LossPoint>& curve) {
  std::string s = "iteration,loss,window_mean\n";
  for (const auto& p : curve)
    s += std::to_string(p.iteration) + "," + format_number(p.loss) + "," + format_number(p.window_mean) + "\n";
  return s;
}

std::string frames_csv(const RoundReport& r) {
  std::string s = "frame,psnr,ssim,akd_reprojection\n";
  for (const auto& f : r.frames)
    s += std::to_string(f.frame) + "," + format_number(f.psnr) + "," + format_number(f.ssim) + "," +
         format_number(f.akd) + "\n";
  return s;
}

std::string summary_csv(const std::vector<RoundReport>& reports) {
  std::string s = "round,mean_psnr,mean_ssim,mean_akd,depth_change_previous,depth_change_initial,drift,hf_energy,"
                  "final_loss\n";
  for (const auto& r : reports)
    s += std::to_string(r.round) + "," + format_number(r.mean_psnr) + "," + format_number(r.mean_ssim) + "," +
         format_number(r.mean_akd) + "," + format_number(r.depth_change_previous) + "," +
         format_number(r.depth_change_initial) + "," + format_number(r.drift) + "," + format_number(r.hf_energy) +
         "," + format_number(r.final_loss) + "\n";
  return s;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = text.find(',', pos);
    const std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw InvalidInput("bad number '" + tok + "' in '" + text + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig config_from_echo(const std::string& echo) { return echo.empty() ? RunConfig{} : parse_config(echo); }

void print_summary(const json& j) { std::cout << j.dump() << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

json cmd_synth(const fs::path& config_path, const RunDir& out) {
  const RunConfig cfg = load_config(config_path);
  const std::string echo = echo_config(cfg);
  const Dataset ds = synthesize(cfg);
  save_dataset(ds, out.path(), echo);
  double degraded = 0.0;
  if (ds.has_clean()) {
    for (std::size_t i = 0; i < ds.frames.size(); ++i) degraded += psnr(ds.frames[i].image, ds.clean[i]);
    degraded /= static_cast<double>(ds.frames.size());
  }
  return {{"frames", ds.frames.size()}, {"clean", ds.has_clean()}, {"degraded_psnr", degraded}};
}

json cmd_train(const fs::path& config_path, const fs::path& data_dir, const std::string& init, const RunDir& out) {
  const RunConfig cfg = load_config(config_path);
  const std::string echo = echo_config(cfg);
  const Dataset ds = load_dataset(data_dir);
  const PipelineConfig pc = cfg.pipeline_config();
  Avatar avatar = init.empty() ? create_avatar(ds.rig, pc.avatar, pc.init_seed()) : load_checkpoint(init).avatar;
  TrainConfig tc = pc.train;
  tc.seed = pc.train_seed(0);
  TrainResult r = train(std::move(avatar), ds, tc, [](const LossPoint& p) {
    std::cerr << "iteration " << p.iteration << " loss " << format_number(p.window_mean) << "\n";
  });
  r.avatar.provenance.seeds.push_back(tc.seed);
  save_checkpoint(out.path() / "checkpoint", r.avatar, echo);
  write_text(out.path() / "loss.csv", curve_csv(r.curve));
  write_text(out.path() / "config.yaml", echo);
  json j{{"iterations", tc.iterations}, {"final_loss", r.curve.empty() ? 0.0 : r.curve.back().window_mean}};
  if (ds.has_clean()) {
    RoundReport rep;
    score_renders(ds, render_training_views(r.avatar, ds, pc.render_seed()), rep);
    write_text(out.path() / "report.csv", frames_csv(rep));
    j["mean_psnr"] = rep.mean_psnr;
    j["mean_ssim"] = rep.mean_ssim;
  }
  return j;
}

struct ViewArgs {
  double yaw = 0.0, pitch = 0.0;
  std::string expr;
  int width = 0, height = 0;
  std::uint64_t seed = 0;
};

json cmd_render(const fs::path& ckpt, const ViewArgs& v, const fs::path& out_png) {
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const RunConfig cfg = config_from_echo(lc.config_echo);
  CameraSpec cs = cfg.scene.camera;
  if (v.width > 0) cs.width = v.width;
  if (v.height > 0) cs.height = v.height;
  std::vector<double> e = parse_list(v.expr);
  if (e.empty()) e.assign(lc.avatar.rig.dimension(), 0.0);
  const Camera cam = camera_for(cs, deg2rad(v.yaw), deg2rad(v.pitch));
  const std::vector<std::vector<double>> es{e};
  const std::vector<Camera> cams{cam};
  const auto img = animate(lc.avatar, es, cams, v.seed);
  if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
  write_png(out_png, img[0].rgb);
  return {{"width", cs.width}, {"height", cs.height}};
}

json cmd_restore(const fs::path& in_dir, const fs::path& clean_dir, const std::string& spec, const RunDir& out) {
  const RestorationOperator op = parse_restorer(spec);
  const auto files = list_pngs(in_dir);
  if (files.empty()) throw IoError("'" + in_dir.string() + "' contains no PNG files");
  double drift = 0.0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Image input = read_image(files[i]);
    std::optional<Image> clean;
    if (!clean_dir.empty()) clean = read_image(clean_dir / files[i].filename());
    try {
      const Image restored = restore(op, input, FrameContext{static_cast<int>(i), 0, clean ? &*clean : nullptr});
      drift += mean_abs_difference(restored, input);
      write_image(out.path() / files[i].filename(), restored);
    } catch (const Error& e) {
      throw Error(files[i].filename().string() + ": " + e.what());
    }
  }
  return {{"restorer", to_string(op)}, {"images", files.size()}, {"mean_abs_change", drift / files.size()}};
}

json cmd_eval(const fs::path& a_dir, const fs::path& b_dir, const fs::path& report) {
  const auto files = list_pngs(a_dir);
  if (files.empty()) throw IoError("'" + a_dir.string() + "' contains no PNG files");
  std::vector<Image> a, b;
  for (const auto& f : files) {
    if (!fs::exists(b_dir / f.filename())) throw IoError("'" + (b_dir / f.filename()).string() + "' is missing");
    a.push_back(read_image(f));
    b.push_back(read_image(b_dir / f.filename()));
  }
  const EvalReport rep = evaluate_images(a, b);
  if (!report.empty()) {
    std::string s = "file,psnr,ssim\n";
    for (std::size_t i = 0; i < files.size(); ++i)
      s += files[i].filename().string() + "," + format_number(rep.frames[i].psnr) + "," +
           format_number(rep.frames[i].ssim) + "\n";
    if (report.has_parent_path()) fs::create_directories(report.parent_path());
    write_text(report, s);
  }
  return {{"images", files.size()}, {"mean_psnr", rep.mean_psnr}, {"mean_ssim", rep.mean_ssim}};
}

struct AnimateArgs {
  int frames = 24;
  double yaw_min = -60.0, yaw_max = 60.0;
  double pitch = 0.0;
  std::uint64_t seed = 0;
};

json cmd_animate(const fs::path& ckpt, const AnimateArgs& args, const RunDir& out) {
  require(args.frames >= 1, "animate: --frames must be >= 1");
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const RunConfig cfg = config_from_echo(lc.config_echo);
  const auto conds = sample_trajectory(args.frames, lc.avatar.rig.dimension(), cfg.scene.trajectory, args.seed);
  std::vector<std::vector<double>> es;
  std::vector<Camera> cams;
  std::vector<double> yaws;
  for (int i = 0; i < args.frames; ++i) {
    const double s = args.frames == 1 ? 0.5 : static_cast<double>(i) / (args.frames - 1);
    const double yaw = args.yaw_min + s * (args.yaw_max - args.yaw_min);
    es.push_back(conds[i].expression);
    cams.push_back(camera_for(cfg.scene.camera, deg2rad(yaw), deg2rad(args.pitch)));
    yaws.push_back(yaw);
  }
  const auto imgs = animate(lc.avatar, es, cams, args.seed);
  std::string csv = "frame,yaw_deg,pitch_deg,expression,mean_alpha\n";
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    write_png(out.path() / frame_name(static_cast<int>(i)), imgs[i].rgb);
    double alpha = 0.0;
    for (double v : imgs[i].alpha.data) alpha += v;
    std::string e;
    for (double x : es[i]) e += (e.empty() ? "" : ";") + format_number(x);
    csv += std::to_string(i) + "," + format_number(yaws[i]) + "," + format_number(args.pitch) + "," + e + "," +
           format_number(alpha / imgs[i].alpha.data.size()) + "\n";
  }
  write_text(out.path() / "frames.csv", csv);
  return {{"frames", imgs.size()}};
}

json cmd_pipeline(const fs::path& config_path, const fs::path& data_dir, int rounds, const std::string& restorer,
                  const RunDir& out) {
  RunConfig cfg = load_config(config_path);
  if (rounds >= 0) cfg.pipeline.rounds = rounds;
  if (!restorer.empty()) cfg.pipeline.restorer = parse_restorer(restorer);
  cfg.validate();
  const std::string echo = echo_config(cfg);
  const Dataset ds = load_dataset(data_dir);
  write_text(out.path() / "config.yaml", echo);

  PipelineHooks hooks;
  hooks.on_progress = [](int round, const LossPoint& p) {
    std::cerr << "round " << round << " iteration " << p.iteration << " loss " << format_number(p.window_mean)
              << "\n";
  };
  std::vector<RoundReport> reports;
  hooks.on_round = [&](int k, const Dataset& d, const Avatar& a, const RoundReport& r,
                       const std::vector<LossPoint>& curve) {
    const fs::path dir = out.path() / ("round_" + std::to_string(k));
    fs::create_directories(dir);
    if (k > 0) save_dataset(d, dir / "dataset", echo);
    else write_text(dir / "dataset.txt", fs::absolute(data_dir).string() + "\n");
    save_checkpoint(dir / "checkpoint", a, echo);
    write_text(dir / "report.csv", frames_csv(r));
    write_text(dir / "loss.csv", curve_csv(curve));
    reports.push_back(r);
    write_text(out.path() / "summary.csv", summary_csv(reports));
    std::cerr << "round " << k << " mean_psnr " << format_number(r.mean_psnr) << " drift " << format_number(r.drift)
              << " seconds " << r.seconds << "\n";
  };
  const PipelineResult res = run_pipeline(ds, cfg.pipeline_config(), hooks);

  json j{{"rounds", cfg.pipeline.rounds}, {"restorer", to_string(cfg.pipeline.restorer)}};
  json psnrs = json::array();
  for (const auto& r : res.reports) psnrs.push_back(r.mean_psnr);
  j["mean_psnr"] = psnrs;
  if (cfg.metrics.held_out > 0) {
    const HeldOutReport h = evaluate_held_out(res.avatar, ds, cfg.metrics.held_out, derive_seed(cfg.seed, 0x686f));
    std::string csv = "condition,yaw_deg,pitch_deg,avatar_psnr,degraded_psnr\n";
    for (std::size_t i = 0; i < h.scores.size(); ++i)
      csv += std::to_string(i) + "," + format_number(h.scores[i].condition.yaw * 180.0 / kPi) + "," +
             format_number(h.scores[i].condition.pitch * 180.0 / kPi) + "," + format_number(h.scores[i].avatar_psnr) +
             "," + format_number(h.scores[i].degraded_psnr) + "\n";
    write_text(out.path() / "held_out.csv", csv);
    j["held_out_avatar_psnr"] = h.mean_avatar_psnr;
    j["held_out_degraded_psnr"] = h.mean_degraded_psnr;
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable radiance-field avatars from degraded image sequences"};
  app.require_subcommand(1);

  fs::path config, out, data, ckpt, in_dir, clean_dir, a_dir, b_dir, report;
  std::string init, restorer_spec, pipe_restorer;
  int rounds = -1;
  ViewArgs view;
  AnimateArgs anim;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic degraded dataset");
  synth->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output dataset directory")->required();

  auto* trn = app.add_subcommand("train", "Train an avatar on a dataset");
  trn->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  trn->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--out", out, "Output run directory")->required();
  trn->add_option("--init", init, "Start from this checkpoint instead of a fresh avatar");

  auto* rnd = app.add_subcommand("render", "Render one image from a checkpoint");
  rnd->add_option("--checkpoint", ckpt, "Avatar checkpoint")->required()->check(CLI::ExistingFile);
  rnd->add_option("--out", out, "Output PNG")->required();
  rnd->add_option("--yaw", view.yaw, "Camera yaw in degrees");
  rnd->add_option("--pitch", view.pitch, "Camera pitch in degrees");
  rnd->add_option("--expr", view.expr, "Comma-separated expression coefficients");
  rnd->add_option("--width", view.width, "Image width (default from the checkpoint config)");
  rnd->add_option("--height", view.height, "Image height (default from the checkpoint config)");
  rnd->add_option("--seed", view.seed, "Sample-jitter seed");

  auto* rst = app.add_subcommand("restore", "Restore every PNG in a directory");
  rst->add_option("--in", in_dir, "Input PNG directory")->required()->check(CLI::ExistingDirectory);
  rst->add_option("--out", out, "Output directory")->required();
  rst->add_option("--restorer", restorer_spec, "identity | classical[:d,a,r] | oracle:lambda")->required();
  rst->add_option("--clean", clean_dir, "Clean images with matching names (oracle only)");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM between same-named images of two directories");
  ev->add_option("--a", a_dir, "First directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--b", b_dir, "Second directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", report, "Per-image CSV output");

  auto* ani = app.add_subcommand("animate", "Render an expression/yaw sweep");
  ani->add_option("--checkpoint", ckpt, "Avatar checkpoint")->required()->check(CLI::ExistingFile);
  ani->add_option("--out", out, "Output directory")->required();
  ani->add_option("--frames", anim.frames, "Number of frames");
  ani->add_option("--yaw-min", anim.yaw_min, "First yaw in degrees");
  ani->add_option("--yaw-max", anim.yaw_max, "Last yaw in degrees");
  ani->add_option("--pitch", anim.pitch, "Pitch in degrees");
  ani->add_option("--seed", anim.seed, "Expression trajectory seed");

  auto* pip = app.add_subcommand("pipeline", "Train, then run dataset-update rounds");
  pip->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  pip->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  pip->add_option("--out", out, "Output run directory")->required();
  pip->add_option("--rounds", rounds, "Override pipeline.rounds");
  pip->add_option("--restorer", pipe_restorer, "Override pipeline.restorer");

  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  const std::string name = app.get_subcommands().front()->get_name();
  json summary{{"command", name}};
  std::unique_ptr<RunDir> run;
  try {
    json result;
    if (name == "render") {
      result = cmd_render(ckpt, view, out);
      summary["out"] = out.string();
    } else if (name == "eval") {
      result = cmd_eval(a_dir, b_dir, report);
    } else {
      run = std::make_unique<RunDir>(out);
      summary["out"] = out.string();
      if (name == "synth") result = cmd_synth(config, *run);
      else if (name == "train") result = cmd_train(config, data, init, *run);
      else if (name == "restore") result = cmd_restore(in_dir, clean_dir, restorer_spec, *run);
      else if (name == "animate") result = cmd_animate(ckpt, anim, *run);
      else if (name == "pipeline") result = cmd_pipeline(config, data, rounds, pipe_restorer, *run);
    }
    summary["status"] = "ok";
    summary.update(result);
    summary["seconds"] = seconds_since(t0);
    print_summary(summary);
    return 0;
  } catch (const std::exception& e) {
    if (run) run->fail(e.what());
    summary["status"] = "failed";
    summary["error"] = e.what();
    print_summary(summary);
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
