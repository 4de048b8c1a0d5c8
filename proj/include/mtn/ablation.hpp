#pragma once

// Component ablation: the same budget trained as a single triplane, as the
// multi-scale field, with the time-step schedule, and with everything.

#include "mtn/train.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mtn {

struct AblationRow {
  std::string name;
  int max_stage = 4;
  TimestepMode timestep_mode = TimestepMode::kProgressive;
  RadiusMode radius_mode = RadiusMode::kSmooth;
  double heldout_psnr = 0.0;
  double iou = 0.0;
  double final_loss = 0.0;
};

/// The four configurations derived from `base`, in table order:
/// single (stage 1 only, uniform t, fixed radius), mtn (all stages),
/// mtn_tschedule (plus progressive t), full (plus progressive radius; smooth
/// unless `base` asks for stepped).
std::vector<std::pair<AblationRow, TrainConfig>> ablation_configs(const TrainConfig& base);

/// Trains every configuration. With out_dir set each run writes into
/// out_dir/<row name>. Throws ConfigError when eval_views is 0.
std::vector<AblationRow> run_ablation(const TrainConfig& base, std::ostream* progress = nullptr);

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace mtn
