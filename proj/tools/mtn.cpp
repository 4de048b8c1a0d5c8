// Command-line front end: training, rendering, mesh export, target
// generation, ablation and schedule traces.

#include "mtn/ablation.hpp"
#include "mtn/checkpoint.hpp"
#include "mtn/train.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace mtn;

struct ConfigArgs {
  std::string path;
};

// Subcommands that take a config file also take any number of --key=value
// overrides; CLI11 leaves those in remaining() for the config parser.
TrainConfig resolve_config(const CLI::App& sub, const ConfigArgs& args) {
  return load_train_config(args.path, sub.remaining());
}

int run_train(const TrainConfig& config) {
  const TrainResult r = train(config, {}, &std::cerr);
  std::cout << "final stage " << r.final_stage << ", loss " << r.last.loss << '\n';
  if (r.eval) std::cout << "held-out psnr " << r.eval->mean_psnr << " dB, occupancy iou " << r.eval->iou << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale triplane field training and tools"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a field; config keys can be overridden with --key=value");
  train_cmd->add_option("config", train_args.path, "key=value config file")->check(CLI::ExistingFile);
  train_cmd->allow_extras();

  std::string ckpt, out_png, out_obj;
  double azimuth = 0, polar = 90, radius = 3, fovy = 20;
  int width = 128, height = 128, samples = 64, stage = 0;
  bool with_alpha = false;
  auto* render_cmd = app.add_subcommand("render", "Render a checkpoint to PNG");
  render_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--azimuth", azimuth, "degrees");
  render_cmd->add_option("--polar", polar, "degrees from +z");
  render_cmd->add_option("--radius", radius);
  render_cmd->add_option("--fovy", fovy, "degrees");
  render_cmd->add_option("--width", width);
  render_cmd->add_option("--height", height);
  render_cmd->add_option("--samples", samples, "samples per ray");
  render_cmd->add_option("--stage", stage, "stage to render (default: the checkpoint's)");
  render_cmd->add_flag("--alpha", with_alpha, "write opacity as alpha");
  render_cmd->add_option("--out", out_png, "output PNG")->required();

  int mesh_n = 128;
  double iso = 1.0;
  auto* mesh_cmd = app.add_subcommand("export-mesh", "Extract an isosurface mesh as OBJ");
  mesh_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  mesh_cmd->add_option("--n", mesh_n, "lattice points per axis")->check(CLI::Range(8, 1024));
  mesh_cmd->add_option("--iso", iso, "density level");
  mesh_cmd->add_option("--stage", stage, "stage to evaluate (default: the checkpoint's)");
  mesh_cmd->add_option("--out", out_obj, "output OBJ")->required();

  std::string scene = "checker_sphere", out_dir;
  int count = 8;
  std::uint64_t seed = 0;
  double kappa = 30.0, r_lo = 1.8, r_hi = 3.5;
  auto* targets_cmd = app.add_subcommand("make-targets", "Render an analytic scene from random poses");
  targets_cmd->add_option("--scene", scene)->check(CLI::IsMember(scene_names()));
  targets_cmd->add_option("--count", count, "number of poses")->check(CLI::PositiveNumber);
  targets_cmd->add_option("--seed", seed);
  targets_cmd->add_option("--width", width);
  targets_cmd->add_option("--height", height);
  targets_cmd->add_option("--samples", samples, "samples per ray");
  targets_cmd->add_option("--kappa", kappa);
  targets_cmd->add_option("--radius-lo", r_lo);
  targets_cmd->add_option("--radius-hi", r_hi);
  targets_cmd->add_option("--out", out_dir, "output directory")->required();

  ConfigArgs ablate_args;
  std::string csv_path;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the four ablation configurations and compare");
  ablate_cmd->add_option("config", ablate_args.path, "key=value config file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--csv", csv_path, "comparison CSV (default: stdout)");
  ablate_cmd->allow_extras();

  ConfigArgs trace_args;
  std::string trace_path;
  auto* trace_cmd = app.add_subcommand("schedule-trace", "Print the time-step, stage and radius schedule as CSV");
  trace_cmd->add_option("config", trace_args.path, "key=value config file")->check(CLI::ExistingFile);
  trace_cmd->add_option("--csv", trace_path, "output CSV (default: stdout)");
  trace_cmd->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(resolve_config(*train_cmd, train_args));

    if (*render_cmd) {
      const Checkpoint cp = load_checkpoint(ckpt);
      CameraPose pose{azimuth, polar, radius, fovy};
      RenderOptions opt;
      opt.width = width;
      opt.height = height;
      opt.samples = samples;
      opt.stratified = false;
      const RenderedImage img = render_image(cp.field, pose, stage > 0 ? stage : cp.stage, opt);
      write_png(out_png, img.rgb, with_alpha ? &img.opacity : nullptr);
      return 0;
    }

    if (*mesh_cmd) {
      const Checkpoint cp = load_checkpoint(ckpt);
      const Mesh mesh = marching_cubes(FieldSource(cp.field, stage > 0 ? stage : cp.stage), mesh_n, iso);
      write_obj(out_obj, mesh);
      std::cout << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
      return 0;
    }

    if (*targets_cmd) {
      const AnalyticScene s = make_scene(scene, kappa);
      RenderOptions opt;
      opt.width = width;
      opt.height = height;
      opt.samples = samples;
      opt.stratified = false;
      const auto poses = sample_poses(count, seed, {r_lo, r_hi});
      write_targets(out_dir, s, poses, make_targets(s, poses, opt), opt);
      return 0;
    }

    if (*ablate_cmd) {
      const TrainConfig base = resolve_config(*ablate_cmd, ablate_args);
      const auto rows = run_ablation(base, &std::cerr);
      if (csv_path.empty()) {
        write_ablation_csv(std::cout, rows);
      } else {
        std::ofstream out(csv_path);
        write_ablation_csv(out, rows);
      }
      return 0;
    }

    if (*trace_cmd) {
      const TrainConfig c = resolve_config(*trace_cmd, trace_args);
      const double beta =
          c.timestep_mode == TimestepMode::kProgressive ? calibrate_beta(c.timestep, c.iterations) : 0.0;
      auto emit = [&](std::ostream& out) {
        write_schedule_trace(out, c.timestep, beta, c.timestep_mode, c.stages(), c.radius, c.seed);
      };
      if (trace_path.empty()) {
        emit(std::cout);
      } else {
        std::ofstream out(trace_path);
        emit(out);
      }
      return 0;
    }
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
