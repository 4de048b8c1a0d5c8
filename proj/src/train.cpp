#include "mtn/train.hpp"

#include "mtn/checkpoint.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace mtn {

TrainMode parse_train_mode(const std::string& name) {
  if (name == "sds_toy") return TrainMode::kSdsToy;
  if (name == "photometric") return TrainMode::kPhotometric;
  throw ConfigError("unknown train mode '" + name + "' (expected sds_toy or photometric)");
}

std::string to_string(TrainMode mode) { return mode == TrainMode::kSdsToy ? "sds_toy" : "photometric"; }

StageSchedule TrainConfig::stages() const {
  if (!stage_starts) return StageSchedule::equal(iterations);
  return {iterations, *stage_starts};
}

FieldConfig TrainConfig::resolved_field() const {
  FieldConfig f = field;
  f.density_blob = density_blob.value_or(mode == TrainMode::kSdsToy);
  return f;
}

void TrainConfig::validate() const {
  if (iterations < 4) throw ConfigError("iterations must be >= 4 (one per stage)");
  if (width < 1 || height < 1) throw ConfigError("render size must be positive");
  if (samples < 1 || target_samples < 1) throw ConfigError("samples per ray must be >= 1");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  for (double c : background) {
    if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("background components must lie in [0, 1]");
  }
  if (!(lambda_tv >= 0.0) || !(lambda_l2 >= 0.0)) throw ConfigError("regularizer weights must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0 (0 disables)");
  if (max_stage < 1 || max_stage > kNumLevels) throw ConfigError("max_stage must be in 1..4");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (progress_every < 0) throw ConfigError("progress_every must be >= 0");
  if (eval_views < 0) throw ConfigError("eval_views must be >= 0");
  if (eval_grid < 8) throw ConfigError("eval_grid must be >= 8");
  resolved_field().validate();
  adan.validate();
  timestep.validate();
  stages().validate();
  radius.validate();
  if (fixed_camera) camera.validate();
  make_scene(scene, kappa);
}

TrainingError::TrainingError(int iteration, std::string step, Phase phase, const std::string& what)
    : std::runtime_error("iteration " + std::to_string(iteration) + " (" + step + ", " + to_string(phase) +
                         " phase): " + what),
      iteration_(iteration),
      step_(std::move(step)),
      phase_(phase) {}

std::string metrics_header() { return "iteration,stage,t,phase,R_lo,R_hi,loss,psnr,grad_norm,wall_ms"; }

std::string metrics_row(const IterationMetrics& m, bool with_wall_time) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,", m.iteration, m.stage, m.t,
                to_string(m.phase).c_str(), m.radius.lo, m.radius.hi, m.loss, m.psnr, m.grad_norm);
  std::string row = buf;
  if (with_wall_time) {
    std::snprintf(buf, sizeof buf, "%.3f", m.wall_ms);
    row += buf;
  }
  return row;
}

namespace {

RenderOptions field_options(const TrainConfig& c) {
  RenderOptions o;
  o.width = c.width;
  o.height = c.height;
  o.samples = c.samples;
  o.stratified = c.stratified;
  o.background = c.background;
  o.parallel = c.parallel;
  return o;
}

RenderOptions target_options(const TrainConfig& c) {
  RenderOptions o = field_options(c);
  o.samples = c.target_samples;
  o.stratified = false;
  return o;
}

}  // namespace

std::vector<CameraPose> held_out_poses(const TrainConfig& config) {
  const RadiusInterval range{std::min(config.radius.end.lo, config.radius.start.lo),
                             std::max(config.radius.end.hi, config.radius.start.hi)};
  return sample_poses(config.eval_views, splitmix64(config.seed ^ 0x6576616c75617465ULL), range);
}

EvalResult evaluate(const MultiScaleField& field, int stage, const TrainConfig& config) {
  const AnalyticScene scene = make_scene(config.scene, config.kappa);
  const auto poses = held_out_poses(config);
  const auto targets = make_targets(scene, poses, target_options(config));
  RenderOptions opt = field_options(config);
  opt.stratified = false;
  EvalResult r;
  for (std::size_t v = 0; v < poses.size(); ++v) {
    const RenderedImage img = render_image(field, poses[v], stage, opt);
    r.view_psnr.push_back(psnr(img.rgb, targets[v].rgb));
    r.mean_psnr += r.view_psnr.back();
  }
  if (!poses.empty()) r.mean_psnr /= static_cast<double>(poses.size());
  r.iou = occupancy_iou(FieldSource(field, stage), scene, config.eval_grid, config.eval_threshold);
  return r;
}

TrainResult train(const TrainConfig& config, const IterationCallback& on_iteration, std::ostream* progress) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  const AnalyticScene scene = make_scene(config.scene, config.kappa);
  const StageSchedule stages = config.stages();
  const NoiseSchedule noise = build_schedule();
  const int total = config.iterations;

  TrainResult result{MultiScaleField(config.resolved_field(), config.seed), 1, 0.0, {}, {}};
  MultiScaleField& field = result.field;
  AdanOptimizer optimizer(field, config.adan);
  result.beta = config.timestep_mode == TimestepMode::kProgressive ? calibrate_beta(config.timestep, total) : 0.0;
  TimestepSampler sampler(config.timestep, result.beta, config.timestep_mode);

  std::mt19937_64 t_rng(splitmix64(config.seed + 1));
  std::mt19937_64 camera_rng(splitmix64(config.seed + 2));
  std::mt19937_64 noise_rng(splitmix64(config.seed + 3));

  std::ofstream metrics;
  const bool write_files = !config.out_dir.empty();
  const auto checkpoint_dir = config.out_dir / "checkpoints";
  if (write_files) {
    std::filesystem::create_directories(config.out_dir);
    if (config.save_checkpoints) std::filesystem::create_directories(checkpoint_dir);
    std::ofstream(config.out_dir / "config.txt") << to_config_text(config);
    metrics.open(config.out_dir / "metrics.csv");
    if (!metrics) throw ConfigError("cannot write " + (config.out_dir / "metrics.csv").string());
    metrics << metrics_header() << '\n';
  }
  auto save = [&](const std::string& name, int stage) {
    if (write_files && config.save_checkpoints) save_checkpoint(checkpoint_dir / name, field, stage);
  };

  const RenderOptions base_options = field_options(config);
  const RenderOptions target_opts = target_options(config);
  const SceneSource scene_source(scene);
  int stage = 0;
  for (int i = 0; i < total; ++i) {
    const auto start = Clock::now();
    IterationMetrics m;
    m.iteration = i;
    m.phase = sampler.phase();
    std::string step = "schedule";
    try {
      const int next_stage = std::min(stages.stage_of(i), config.max_stage);
      if (next_stage != stage) {
        if (stage > 0) save("stage" + std::to_string(stage) + ".mtnf", stage);
        stage = next_stage;
        field.freeze_below(stage);
      }
      m.stage = stage;
      m.t = sampler.sample(t_rng);
      m.radius = config.radius.interval(i, stages);
      const CameraPose pose = config.fixed_camera ? config.camera : sample_camera(camera_rng, m.radius);
      RenderOptions options = base_options;
      options.seed = splitmix64(config.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1)));

      step = "target";
      const RenderedImage target = render_source(scene_source, pose, target_opts);

      step = "gradient";
      StepResult r;
      if (config.mode == TrainMode::kPhotometric) {
        r = photometric_step(field, pose, stage, options, target.rgb);
      } else {
        const ToyTargetDenoiser denoiser(target.rgb, target.opacity, config.background, noise);
        const Conditioning y{config.background, std::nullopt};
        r = sds_step(field, pose, stage, options, denoiser, y, noise, m.t, noise_rng, config.sds_weight);
      }
      m.psnr = psnr(r.image.rgb, target.rgb);

      step = "regularize";
      m.loss = r.loss + add_regularizers(field, stage, config.lambda_tv, config.lambda_l2, r.grads);
      if (!std::isfinite(m.loss)) throw ContractError("loss is not finite");
      if (!r.grads.all_finite()) throw ContractError("gradient is not finite");

      step = "optimize";
      m.grad_norm = clip_global_norm(r.grads, config.grad_clip);
      optimizer.step(field, r.grads, stage);
    } catch (const TrainingError&) {
      throw;
    } catch (const std::exception& e) {
      if (metrics.is_open()) metrics.flush();
      throw TrainingError(i, step, m.phase, e.what());
    }
    m.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.last = m;
    if (metrics.is_open() && (i % config.log_every == 0 || i == total - 1)) {
      metrics << metrics_row(m, config.record_wall_time) << '\n';
    }
    if (progress && config.progress_every > 0 && (i % config.progress_every == 0 || i == total - 1)) {
      char line[160];
      std::snprintf(line, sizeof line, "iter %d/%d stage %d t %d loss %.6g psnr %.3f\n", i + 1, total, stage, m.t,
                    m.loss, m.psnr);
      *progress << line << std::flush;
    }
    if (on_iteration) on_iteration(m, field);
  }
  result.final_stage = stage;
  save("stage" + std::to_string(stage) + ".mtnf", stage);
  save("final.mtnf", stage);

  if (config.eval_views > 0) result.eval = evaluate(field, stage, config);
  if (write_files) {
    nlohmann::json summary;
    summary["iterations"] = total;
    summary["final_stage"] = stage;
    summary["beta"] = result.beta;
    summary["final_loss"] = result.last.loss;
    if (result.eval) {
      summary["heldout_psnr"] = result.eval->mean_psnr;
      summary["heldout_view_psnr"] = result.eval->view_psnr;
      summary["occupancy_iou"] = result.eval->iou;
    }
    std::ofstream(config.out_dir / "summary.json") << summary.dump(2) << '\n';
  }
  return result;
}

}  // namespace mtn
