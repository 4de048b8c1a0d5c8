#pragma once

// Training loop: stage-wise freezing, scheduled time steps and camera radii,
// guidance or photometric gradients, regularizers, Adan, metrics and
// checkpoints.

#include "mtn/guidance.hpp"
#include "mtn/optim.hpp"
#include "mtn/scenes.hpp"
#include "mtn/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtn {

enum class TrainMode { kSdsToy, kPhotometric };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::kPhotometric;
  int iterations = 6000;
  std::string scene = "checker_sphere";
  double kappa = 30.0;

  int width = 64;
  int height = 64;
  int samples = 64;
  int target_samples = 128;
  bool stratified = true;
  Rgb background{1.0, 1.0, 1.0};
  bool parallel = true;
  std::uint64_t seed = 0;

  FieldConfig field;
  std::optional<bool> density_blob;  // unset: on in sds_toy mode only

  AdanHyper adan;
  double lambda_tv = 1e-3;
  double lambda_l2 = 1e-4;
  double grad_clip = 10.0;

  TimestepScheduleParams timestep;
  TimestepMode timestep_mode = TimestepMode::kProgressive;
  SdsWeight sds_weight = SdsWeight::kSqrtAlphaBar;

  std::optional<std::array<int, 4>> stage_starts;  // unset: four equal stages
  int max_stage = 4;
  RadiusSchedule radius;
  bool fixed_camera = false;
  CameraPose camera;

  int log_every = 10;
  int progress_every = 100;
  bool record_wall_time = false;
  int eval_views = 8;
  int eval_grid = 64;
  double eval_threshold = 1.0;
  std::filesystem::path out_dir;  // empty: write nothing
  bool save_checkpoints = true;

  StageSchedule stages() const;
  FieldConfig resolved_field() const;
  /// Throws ConfigError on any inconsistent value.
  void validate() const;
};

/// Flat key=value text. Blank lines and lines starting with '#' are ignored.
/// Throws ConfigError on malformed lines, unknown keys or bad values.
void apply_config_text(TrainConfig& config, const std::string& text);
/// Sets one key. Throws ConfigError for unknown keys or unparsable values.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// Applies "--key=value" arguments in order.
void apply_overrides(TrainConfig& config, const std::vector<std::string>& args);
/// Every key with its current value, one "key=value" per line.
std::string to_config_text(const TrainConfig& config);
std::vector<std::string> config_keys();
TrainConfig load_train_config(const std::filesystem::path& path,
                              const std::vector<std::string>& overrides = {});

/// Raised when an iteration fails; the loss went non-finite or a step threw.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(int iteration, std::string step, Phase phase, const std::string& what);
  int iteration() const { return iteration_; }
  const std::string& step() const { return step_; }
  Phase phase() const { return phase_; }

 private:
  int iteration_;
  std::string step_;
  Phase phase_;
};

struct IterationMetrics {
  int iteration = 0;
  int stage = 1;
  int t = 0;
  Phase phase = Phase::kDeterministic;
  RadiusInterval radius;
  double loss = 0.0;   // data term plus weighted regularizers
  double psnr = 0.0;   // of the render against this iteration's target
  double grad_norm = 0.0;  // before clipping
  double wall_ms = 0.0;
};

struct EvalResult {
  std::vector<double> view_psnr;
  double mean_psnr = 0.0;
  double iou = 0.0;
};

struct TrainResult {
  MultiScaleField field;
  int final_stage = 1;
  double beta = 0.0;
  IterationMetrics last;
  std::optional<EvalResult> eval;
};

/// Poses and images for held-out evaluation: drawn from a stream separate
/// from training, radius across the whole training range.
std::vector<CameraPose> held_out_poses(const TrainConfig& config);

/// PSNR over held-out views and occupancy IoU against the scene.
EvalResult evaluate(const MultiScaleField& field, int stage, const TrainConfig& config);

using IterationCallback = std::function<void(const IterationMetrics&, const MultiScaleField&)>;

/// Runs the configured number of iterations. With a non-empty out_dir writes
/// config.txt, metrics.csv, checkpoints/stage<m>.mtnf at each stage exit,
/// checkpoints/final.mtnf and summary.json. `on_iteration` runs after each
/// optimizer step. Evaluation runs when eval_views > 0.
TrainResult train(const TrainConfig& config, const IterationCallback& on_iteration = {},
                  std::ostream* progress = nullptr);

/// The metrics CSV header and one formatted row.
std::string metrics_header();
std::string metrics_row(const IterationMetrics& m, bool with_wall_time);

}  // namespace mtn
