#include "mtn/ablation.hpp"

#include <cstdio>
#include <ostream>

namespace mtn {

std::vector<std::pair<AblationRow, TrainConfig>> ablation_configs(const TrainConfig& base) {
  const RadiusMode progressive_radius =
      base.radius.mode == RadiusMode::kStepped ? RadiusMode::kStepped : RadiusMode::kSmooth;
  const std::vector<AblationRow> rows = {
      {"single", 1, TimestepMode::kUniform, RadiusMode::kFixed},
      {"mtn", 4, TimestepMode::kUniform, RadiusMode::kFixed},
      {"mtn_tschedule", 4, TimestepMode::kProgressive, RadiusMode::kFixed},
      {"full", 4, TimestepMode::kProgressive, progressive_radius},
  };
  std::vector<std::pair<AblationRow, TrainConfig>> out;
  for (const AblationRow& row : rows) {
    TrainConfig c = base;
    c.max_stage = row.max_stage;
    c.timestep_mode = row.timestep_mode;
    c.radius.mode = row.radius_mode;
    if (!base.out_dir.empty()) c.out_dir = base.out_dir / row.name;
    out.emplace_back(row, c);
  }
  return out;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::ostream* progress) {
  if (base.eval_views < 1) throw ConfigError("ablation needs eval_views >= 1");
  std::vector<AblationRow> rows;
  for (auto& [row, config] : ablation_configs(base)) {
    if (progress) *progress << "ablation: " << row.name << '\n';
    const TrainResult r = train(config, {}, progress);
    row.heldout_psnr = r.eval->mean_psnr;
    row.iou = r.eval->iou;
    row.final_loss = r.last.loss;
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "row,max_stage,timestep_mode,radius_mode,heldout_psnr,occupancy_iou,final_loss\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%s,%.6f,%.6f,%.9g\n", r.name.c_str(), r.max_stage,
                  to_string(r.timestep_mode).c_str(), to_string(r.radius_mode).c_str(), r.heldout_psnr, r.iou,
                  r.final_loss);
    out << buf;
  }
}

}  // namespace mtn
