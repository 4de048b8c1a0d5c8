// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 1 3 8      run a subset

#include "mtn/ablation.hpp"
#include "mtn/checkpoint.hpp"
#include "mtn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

namespace {

using namespace mtn;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  std::string out(static_cast<std::size_t>(std::snprintf(nullptr, 0, fmt, args...)), '\0');
  std::snprintf(out.data(), out.size() + 1, fmt, args...);
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtn_acceptance_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Features spread wide enough that the decoder sees varied inputs.
MultiScaleField spread_field(const FieldConfig& config, std::uint64_t seed) {
  MultiScaleField field(config, seed);
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& ref : field.parameters()) {
    if (ref.group == ParamGroup::kDecoder) continue;
    for (double& x : ref.values) x = u(rng);
  }
  return field;
}

// Settings shared by the training criteria.
TrainConfig base_config() {
  TrainConfig c;
  c.scene = "checker_sphere";
  c.width = 64;
  c.height = 64;
  c.samples = 32;
  c.target_samples = 128;
  c.field.plane_resolution = {32, 64, 128};
  c.field.vector_resolution = 256;
  c.field.channels = 8;
  c.field.hidden_width = 32;
  c.adan.lr = 1e-2;
  c.progress_every = 0;
  c.eval_views = 0;
  return c;
}

// Sign pattern of every hidden pre-activation at every sample point of a
// render. Central differences are only an oracle where this pattern is the
// same at theta - h, theta and theta + h.
std::vector<std::uint8_t> relu_pattern(const MultiScaleField& field, const CameraPose& pose,
                                       const RenderOptions& opt) {
  std::vector<std::uint8_t> bits;
  const auto& layers = field.decoder().layers;
  for (int row = 0; row < opt.height; ++row) {
    for (int col = 0; col < opt.width; ++col) {
      const Ray ray = generate_ray(pose, opt.width, opt.height, row, col);
      if (!ray.hits()) continue;
      const std::size_t index = static_cast<std::size_t>(row) * opt.width + col;
      const RaySamples s = sample_along_ray(ray, opt.samples, ray_seed(opt.seed, index), opt.stratified);
      for (double t : s.t) {
        const Vec3 p = ray.at(t);
        if (!inside_domain(p)) continue;
        const std::vector<double> enc = field.encode(fuse_features(field, p, 4));
        Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(enc.data(), static_cast<Eigen::Index>(enc.size()));
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
          const Eigen::VectorXd z = layers[l].weight * x + layers[l].bias;
          for (Eigen::Index k = 0; k < z.size(); ++k) bits.push_back(z[k] > 0.0);
          x = z.cwiseMax(0.0);
        }
      }
    }
  }
  return bits;
}

Outcome gradient_fidelity() {
  FieldConfig fc;
  fc.plane_resolution = {8, 16, 32};
  fc.vector_resolution = 64;
  fc.channels = 8;
  fc.density_blob = true;
  MultiScaleField field = spread_field(fc, 11);
  const CameraPose pose{35.0, 70.0, 2.2, 30.0};
  RenderOptions opt;
  opt.width = 16;
  opt.height = 16;
  opt.samples = 16;
  opt.seed = 5;

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageAdjoint adj;
  adj.d_rgb = Image(16, 16);
  for (double& x : adj.d_rgb.data) x = u(rng);
  adj.d_opacity.resize(256);
  for (double& x : adj.d_opacity) x = u(rng);
  auto loss = [&](const MultiScaleField& f) {
    const RenderedImage img = render_image(f, pose, 4, opt);
    double s = 0.0;
    for (std::size_t i = 0; i < img.rgb.data.size(); ++i) s += adj.d_rgb.data[i] * img.rgb.data[i];
    for (std::size_t i = 0; i < img.opacity.size(); ++i) s += adj.d_opacity[i] * img.opacity[i];
    return s;
  };
  FieldGradients grads = FieldGradients::zeros_like(field);
  render_backward(field, pose, 4, opt, adj, grads);

  // Candidates per group: coordinates with a gradient above 1e-8.
  const auto refs = std::as_const(field).parameters();
  std::vector<std::pair<std::size_t, std::size_t>> groups[3];
  for (std::size_t t = 0; t < refs.size(); ++t) {
    for (std::size_t i = 0; i < grads.tensors[t].size(); ++i) {
      if (std::abs(grads.tensors[t][i]) > 1e-8) groups[static_cast<int>(refs[t].group)].push_back({t, i});
    }
  }
  const std::vector<std::uint8_t> base_pattern = relu_pattern(field, pose, opt);
  int chosen = 0, skipped = 0;
  double worst = 0.0;
  const int quota[3] = {34, 33, 33};
  for (int g = 0; g < 3; ++g) {
    std::shuffle(groups[g].begin(), groups[g].end(), rng);
    int taken = 0;
    for (std::size_t c = 0; c < groups[g].size() && taken < quota[g]; ++c) {
      const auto [t, i] = groups[g][c];
      double& x = field.parameters()[t].values[i];
      const double saved = x;
      const double h = 1e-4 * std::max(1.0, std::abs(saved));
      x = saved + h;
      field.touch();
      const double up = loss(field);
      const bool kink_up = relu_pattern(field, pose, opt) != base_pattern;
      x = saved - h;
      field.touch();
      const double down = loss(field);
      const bool kink_down = relu_pattern(field, pose, opt) != base_pattern;
      x = saved;
      field.touch();
      if (kink_up || kink_down) {
        ++skipped;
        continue;
      }
      const double fd = (up - down) / (2 * h);
      const double a = grads.tensors[t][i];
      worst = std::max(worst, std::abs(a - fd) / std::max(std::abs(a), std::abs(fd)));
      ++taken;
    }
    if (taken < quota[g]) return {false, "too few differentiable coordinates in one parameter group"};
    chosen += taken;
  }
  return {worst <= 1e-4,
          format("%d coordinates (34 plane, 33 trivector, 33 decoder), max relative error %.3e (limit 1e-4); "
                 "%d draws skipped because the stencil crossed a ReLU kink",
                 chosen, worst, skipped)};
}

Outcome rendering_oracle() {
  const std::vector<double> sigma(256, 2.0), delta(256, 1.0 / 256), t(256, 0.0);
  const std::vector<Rgb> rgb(256, Rgb{0.5, 0.5, 0.5});
  const double opacity = volume_render(sigma, rgb, delta, t, {1.0, 1.0, 1.0}).opacity;
  const double slab_err = std::abs(opacity - (1.0 - std::exp(-2.0)));

  FieldConfig fc;
  fc.plane_resolution = {8, 16, 32};
  fc.vector_resolution = 64;
  fc.channels = 4;
  fc.hidden_width = 16;
  fc.density_blob = true;
  const MultiScaleField field = spread_field(fc, 3);
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> pixel(0, 63);
  double worst = 0.0;
  for (int r = 0; r < 10000; ++r) {
    const CameraPose pose = sample_camera(rng, {1.8, 3.5});
    const Ray ray = generate_ray(pose, 64, 64, pixel(rng), pixel(rng));
    if (!ray.hits()) continue;
    const RaySamples s = sample_along_ray(ray, 64, static_cast<std::uint64_t>(r), true);
    std::vector<double> sig(64);
    double transmittance = 1.0;
    for (int i = 0; i < 64; ++i) {
      sig[i] = field_forward(field, ray.at(s.t[i]), 4).sigma;
      transmittance *= std::exp(-sig[i] * s.delta[i]);
    }
    double sum = 0.0;
    for (double w : composite_weights(sig, s.delta)) sum += w;
    worst = std::max(worst, std::abs(sum - (1.0 - transmittance)));
  }
  return {slab_err <= 1e-3 && worst <= 1e-13,
          format("slab opacity error %.2e (limit 1e-3); max |sum w - (1 - T)| over 1e4 rays %.2e (limit 1e-13)",
                 slab_err, worst)};
}

Outcome schedule_conformance() {
  const TimestepScheduleParams p;  // m1 50, m2 150, n1 500, n2 800, t 980 -> 20
  std::string detail;
  bool pass = true;
  for (int total : {400, 2000, 6000}) {
    const double beta = calibrate_beta(p, total);
    const int target = static_cast<int>(std::lround(0.8 * total));
    double t = p.t_max, last_drop = 1e300;
    int arrival = -1;
    bool decreasing = true, shrinking = true;
    for (int i = 1; i <= total && arrival < 0; ++i) {
      const double next = step_t(t, beta, p);
      decreasing = decreasing && next < t;
      shrinking = shrinking && (t - next) <= last_drop * (1.0 + 1e-12);
      last_drop = t - next;
      t = next;
      if (t <= p.t_min) arrival = i;
    }
    TimestepSampler sampler(p, beta);
    std::mt19937_64 rng(1);
    int emitted = 0, bad = 0;
    while (emitted < 10000) {
      const bool random = sampler.phase() == Phase::kRandom;
      const int s = sampler.sample(rng);
      if (random) {
        ++emitted;
        bad += s < p.t_min || s > p.t_max;
      }
    }
    const bool ok = decreasing && shrinking && std::abs(arrival - target) <= 1 && bad == 0;
    pass = pass && ok;
    detail += format("total %d: beta %.4g, arrival %d (target %d)%s%s, %d/10000 out of range; ", total, beta,
                     arrival, target, decreasing ? "" : ", not decreasing", shrinking ? "" : ", steps grow", bad);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Outcome freeze_invariance() {
  TrainConfig c = base_config();
  c.mode = TrainMode::kSdsToy;
  c.iterations = 400;
  c.stage_starts = std::array<int, 4>{0, 100, 200, 300};
  c.width = c.height = 32;
  c.samples = 16;
  c.target_samples = 64;
  c.field.plane_resolution = {16, 32, 64};
  c.field.vector_resolution = 128;
  std::array<std::uint64_t, 3> level1{}, level2{};
  int violations = 0, checked = 0;
  train(c, [&](const IterationMetrics& m, const MultiScaleField& f) {
    for (int o = 0; o < 3; ++o) {
      const auto po = static_cast<PlaneOrientation>(o);
      const std::uint64_t a = f.checksum(MultiScaleField::plane_tensor(1, po));
      const std::uint64_t b = f.checksum(MultiScaleField::plane_tensor(2, po));
      // After iteration 99 (resp. 199) the level-1 (level-2) planes saw their last update.
      if (m.iteration == 99) level1[o] = a;
      if (m.iteration == 199) level2[o] = b;
      if (m.iteration >= 100) {
        ++checked;
        violations += a != level1[o];
      }
      if (m.iteration >= 200) {
        ++checked;
        violations += b != level2[o];
      }
    }
  });
  return {violations == 0 && checked > 0,
          format("%d checksum comparisons over iterations 100..399, %d changed", checked, violations)};
}

TrainConfig reconstruction_config() {
  TrainConfig c = base_config();
  c.mode = TrainMode::kPhotometric;
  c.iterations = 2000;
  c.eval_views = 8;
  c.eval_grid = 64;
  c.eval_threshold = 1.0;
  return c;
}

Outcome photometric_reconstruction() {
  const TrainConfig c = reconstruction_config();
  const TrainResult r = train(c);
  const bool pass = r.eval->mean_psnr >= 25.0 && r.eval->iou >= 0.7;
  double lo = 1e300;
  for (double v : r.eval->view_psnr) lo = std::min(lo, v);
  // Context for the IoU gate: the scene's own density scored the same way, and
  // the learned field at the threshold matching the scene's surface density.
  const AnalyticScene scene = make_scene(c.scene, c.kappa);
  const double ceiling = occupancy_iou(SceneSource(scene), scene, c.eval_grid, c.eval_threshold);
  const double matched = occupancy_iou(FieldSource(r.field, r.final_stage), scene, c.eval_grid, c.kappa / 2);
  return {pass, format("held-out PSNR %.2f dB (min view %.2f, limit 25), occupancy IoU %.3f (limit 0.7); "
                       "exact scene density scores %.3f at the same threshold, learned field %.3f at tau=%.0f",
                       r.eval->mean_psnr, lo, r.eval->iou, ceiling, matched, c.kappa / 2)};
}

Outcome ablation_direction() {
  TrainConfig c = reconstruction_config();
  c.out_dir = scratch("ablation");
  const auto rows = run_ablation(c);
  std::ofstream csv(c.out_dir / "ablation.csv");
  write_ablation_csv(csv, rows);
  std::ostringstream table;
  write_ablation_csv(table, rows);
  std::cout << table.str();
  const double single = rows.front().heldout_psnr, full = rows.back().heldout_psnr;
  std::string detail;
  for (const auto& r : rows) detail += format("%s %.2f dB / IoU %.3f; ", r.name.c_str(), r.heldout_psnr, r.iou);
  detail += format("full - single = %+.2f dB", full - single);
  return {rows.size() == 4 && full >= single, detail};
}

Outcome sds_fixed_point_and_progress() {
  // (a) Render equals the denoiser's target.
  FieldConfig fc;
  fc.plane_resolution = {16, 32, 64};
  fc.vector_resolution = 128;
  fc.channels = 8;
  fc.hidden_width = 32;
  fc.density_blob = true;
  const MultiScaleField field = spread_field(fc, 5);
  const CameraPose pose{20.0, 75.0, 2.5, 25.0};
  RenderOptions opt;
  opt.width = opt.height = 32;
  opt.samples = 32;
  opt.seed = 9;
  const NoiseSchedule noise = build_schedule();
  const RenderedImage own = render_image(field, pose, 4, opt);
  Image shifted = own.rgb;
  for (double& v : shifted.data) v = std::clamp(v + 0.05, 0.0, 1.0);
  double worst = 0.0, reference = 0.0;
  for (int t : {20, 200, 500, 980}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(t));
    const StepResult at_target =
        sds_step(field, pose, 4, opt, ToyTargetDenoiser(own.rgb, noise), {}, noise, t, rng);
    const StepResult off_target =
        sds_step(field, pose, 4, opt, ToyTargetDenoiser(shifted, noise), {}, noise, t, rng);
    worst = std::max(worst, std::sqrt(at_target.grads.squared_norm()) / std::sqrt(off_target.grads.squared_norm()));
    reference = std::max(reference, std::sqrt(at_target.grads.squared_norm()));
  }
  const bool fixed_point = worst <= 1e-12;

  // (b) Fixed camera, 500 iterations from random init.
  TrainConfig c = base_config();
  c.mode = TrainMode::kSdsToy;
  c.iterations = 500;
  c.fixed_camera = true;
  c.camera = {30.0, 75.0, 2.5, 25.0};
  RenderOptions eval = opt;
  eval.width = c.width;
  eval.height = c.height;
  eval.samples = c.samples;
  eval.stratified = false;
  RenderOptions target_opt = eval;
  target_opt.samples = c.target_samples;
  const AnalyticScene scene = make_scene(c.scene, c.kappa);
  const Image target = make_targets(scene, {c.camera}, target_opt).front().rgb;
  const MultiScaleField init(c.resolved_field(), c.seed);
  const double before = mean_squared_error(render_image(init, c.camera, 1, eval).rgb, target);
  const TrainResult r = train(c);
  const double after = mean_squared_error(render_image(r.field, c.camera, r.final_stage, eval).rgb, target);
  const double drop = 1.0 - after / before;
  return {fixed_point && drop >= 0.9,
          format("(a) |g| at I* is %.2e of |g| at I*+0.05 (max abs %.2e; limit 1e-12 relative); "
                 "(b) MSE %.4g -> %.4g, drop %.1f%% (limit 90%%)",
                 worst, reference, before, after, 100.0 * drop)};
}

Outcome determinism_and_persistence() {
  TrainConfig c = base_config();
  c.mode = TrainMode::kSdsToy;
  c.iterations = 40;
  c.width = c.height = 24;
  c.samples = 16;
  c.target_samples = 32;
  c.log_every = 1;
  c.out_dir = scratch("det_a");
  train(c);
  const auto a = c.out_dir;
  c.out_dir = scratch("det_b");
  train(c);
  const auto b = c.out_dir;
  const bool same_csv = slurp(a / "metrics.csv") == slurp(b / "metrics.csv") && !slurp(a / "metrics.csv").empty();
  const std::string bytes = slurp(a / "checkpoints" / "final.mtnf");
  std::stringstream in(bytes);
  const Checkpoint cp = load_checkpoint(in);
  std::stringstream out;
  save_checkpoint(out, cp.field, cp.stage);
  const bool round_trip = out.str() == bytes;
  return {same_csv && round_trip,
          format("metrics CSVs %s; checkpoint save-load-save %s (%zu bytes)", same_csv ? "identical" : "DIFFER",
                 round_trip ? "identical" : "DIFFERS", bytes.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"rendering oracle", rendering_oracle},
      {"schedule conformance", schedule_conformance},
      {"freeze invariance", freeze_invariance},
      {"photometric reconstruction", photometric_reconstruction},
      {"ablation direction", ablation_direction},
      {"SDS fixed point and progress", sds_fixed_point_and_progress},
      {"determinism and persistence", determinism_and_persistence},
  };
  // Arguments: criterion numbers to run (default all), and
  // --known-failures=a,b,... for documented failures that should not fail the
  // exit status. A listed criterion still prints FAIL when it fails.
  std::set<int> only, known;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    const std::string flag = "--known-failures=";
    if (arg.rfind(flag, 0) == 0) {
      std::istringstream list(arg.substr(flag.size()));
      for (std::string item; std::getline(list, item, ',');) known.insert(std::stoi(item));
    } else {
      only.insert(std::stoi(arg));
    }
  }
  std::ofstream report("acceptance_report.txt");
  int unexpected = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string line = format("%s %d %s: %s [%.1f s]%s", o.pass ? "PASS" : "FAIL", id,
                                    criteria[k].first.c_str(), o.detail.c_str(), secs,
                                    !o.pass && known.count(id) ? " (known failure)" : "");
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n' << std::flush;
    unexpected += !o.pass && !known.count(id);
  }
  return unexpected == 0 ? 0 : 1;
}
