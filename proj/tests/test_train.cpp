#include "mtn/checkpoint.hpp"
#include "mtn/train.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mtn;

namespace {

TrainConfig tiny_config(int iterations = 40) {
  TrainConfig c;
  c.iterations = iterations;
  c.scene = "sphere";
  c.width = 12;
  c.height = 12;
  c.samples = 8;
  c.target_samples = 16;
  c.field.plane_resolution = {4, 8, 16};
  c.field.vector_resolution = 32;
  c.field.channels = 4;
  c.field.hidden_width = 8;
  c.field.hidden_layers = 1;
  c.eval_views = 0;
  c.eval_grid = 16;
  c.progress_every = 0;
  c.log_every = 1;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtn_train_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config text parsing") {
  TrainConfig c;
  apply_config_text(c,
                    "# comment\n"
                    "\n"
                    "mode = sds_toy\n"
                    "iterations=1200\n"
                    "plane_resolution = 16, 32, 64\n"
                    "  stage_starts=0,100,600,900  \n"
                    "density_blob=false\n"
                    "radius_mode=stepped\n");
  CHECK(c.mode == TrainMode::kSdsToy);
  CHECK(c.iterations == 1200);
  CHECK(c.field.plane_resolution == std::array<int, 3>{16, 32, 64});
  CHECK(c.stage_starts == std::array<int, 4>{0, 100, 600, 900});
  CHECK(c.density_blob == false);
  CHECK(c.radius.mode == RadiusMode::kStepped);
  CHECK(c.stages().stage_of(700) == 3);

  apply_overrides(c, {"--iterations=800", "--stage_starts=auto", "--lr=0.01"});
  CHECK(c.iterations == 800);
  CHECK(!c.stage_starts);
  CHECK(c.stages().starts == std::array<int, 4>{0, 200, 400, 600});
  CHECK(c.adan.lr == 0.01);

  CHECK_THROWS_AS(apply_config_text(c, "no_such_key=1\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "iterations\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "iterations=12x\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "plane_resolution=1,2\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "stratified=maybe\n"), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"--bogus=3"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"iterations=3"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"--mode=gan"}), ConfigError);
}

TEST_CASE("property: config text round-trips through every key") {
  TrainConfig a;
  apply_overrides(a, {"--lr=0.0123456789", "--background=0.1,0.2,0.3", "--camera=10,80,2.5,15",
                      "--stage_starts=0,5,10,15", "--seed=18446744073709551615", "--out_dir=some/where",
                      "--fourier_mode=random", "--density_blob=true", "--timestep_mode=uniform",
                      "--sds_weight=one", "--radius_end=1.7,2.2"});
  TrainConfig b;
  apply_config_text(b, to_config_text(a));
  CHECK(to_config_text(b) == to_config_text(a));
  CHECK(b.adan.lr == a.adan.lr);
  CHECK(b.seed == a.seed);
  const std::string text = "\n" + to_config_text(TrainConfig{});
  for (const auto& key : config_keys()) CHECK(text.find("\n" + key + "=") != std::string::npos);
}

TEST_CASE("config validation") {
  TrainConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  auto expect_bad = [&](const std::string& override) {
    TrainConfig bad = tiny_config();
    apply_overrides(bad, {override});
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  };
  expect_bad("--lambda_tv=-1");
  expect_bad("--max_stage=5");
  expect_bad("--stage_starts=0,10,20,40");
  expect_bad("--scene=teapot");
  expect_bad("--background=1.5,0,0");
  expect_bad("--iterations=2");
  expect_bad("--n1=10");
  CHECK(tiny_config().resolved_field().density_blob == false);
  TrainConfig sds = tiny_config();
  sds.mode = TrainMode::kSdsToy;
  CHECK(sds.resolved_field().density_blob == true);

  const auto dir = scratch("config");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "iterations=400\nscene=torus\n";
  const TrainConfig loaded = load_train_config(dir / "run.cfg", {"--scene=two_spheres"});
  CHECK(loaded.iterations == 400);
  CHECK(loaded.scene == "two_spheres");
  CHECK_THROWS_AS(load_train_config(dir / "missing.cfg"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics row format") {
  IterationMetrics m;
  m.iteration = 7;
  m.stage = 2;
  m.t = 455;
  m.phase = Phase::kRandom;
  m.radius = {2.5, 3.0};
  m.loss = 0.125;
  m.psnr = 20.5;
  m.grad_norm = 3.0;
  m.wall_ms = 12.3456;
  CHECK(metrics_header() == "iteration,stage,t,phase,R_lo,R_hi,loss,psnr,grad_norm,wall_ms");
  CHECK(metrics_row(m, false) == "7,2,455,random,2.5,3,0.125,20.5,3,");
  CHECK(metrics_row(m, true) == "7,2,455,random,2.5,3,0.125,20.5,3,12.346");
}

TEST_CASE("train: frozen levels keep their bytes, later levels stay untouched") {
  const TrainConfig c = tiny_config(40);
  const MultiScaleField init(c.resolved_field(), c.seed);
  std::vector<std::vector<std::uint64_t>> sums;
  std::vector<int> stage_at;
  train(c, [&](const IterationMetrics& m, const MultiScaleField& f) {
    std::vector<std::uint64_t> s;
    for (std::size_t t = 0; t < f.tensor_count(); ++t) s.push_back(f.checksum(t));
    sums.push_back(s);
    stage_at.push_back(m.stage);
  });
  REQUIRE(sums.size() == 40);
  const auto refs = init.parameters();
  for (std::size_t t = 0; t < refs.size(); ++t) {
    if (refs[t].group == ParamGroup::kDecoder) continue;
    const int level = refs[t].level;
    const int enter = (level - 1) * 10;  // first iteration of the level's stage
    const int leave = level * 10;        // first iteration after it
    for (int i = 0; i < 40; ++i) {
      if (i < enter) CHECK(sums[i][t] == init.checksum(t));
      if (i >= enter && i < leave && i > enter) CHECK(sums[i][t] != sums[i - 1][t]);
      if (i >= leave && level < 4) CHECK(sums[i][t] == sums[leave - 1][t]);
    }
  }
  CHECK(stage_at.front() == 1);
  CHECK(stage_at.back() == 4);
}

TEST_CASE("train: max_stage caps the active level") {
  TrainConfig c = tiny_config(20);
  c.max_stage = 1;
  const MultiScaleField init(c.resolved_field(), c.seed);
  const TrainResult r = train(c);
  CHECK(r.final_stage == 1);
  for (std::size_t t = 3; t < 12; ++t) CHECK(r.field.checksum(t) == init.checksum(t));
  for (std::size_t t = 0; t < 3; ++t) CHECK(r.field.checksum(t) != init.checksum(t));
}

TEST_CASE("train: photometric loss falls on a constant-color scene") {
  TrainConfig c = tiny_config(100);
  c.scene = "empty";
  c.stage_starts = std::array<int, 4>{0, 25, 50, 75};
  std::vector<double> losses;
  train(c, [&](const IterationMetrics& m, const MultiScaleField&) { losses.push_back(m.loss); });
  REQUIRE(losses.size() == 100);
  CHECK(*std::min_element(losses.begin() + 1, losses.end()) < losses.front());
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("train: outputs and determinism") {
  TrainConfig c = tiny_config(24);
  c.log_every = 5;
  c.eval_views = 2;
  const auto a_dir = scratch("a"), b_dir = scratch("b");
  c.out_dir = a_dir;
  const TrainResult a = train(c);
  c.out_dir = b_dir;
  const TrainResult b = train(c);
  CHECK(slurp(a_dir / "metrics.csv") == slurp(b_dir / "metrics.csv"));
  CHECK(slurp(a_dir / "checkpoints" / "final.mtnf") == slurp(b_dir / "checkpoints" / "final.mtnf"));
  REQUIRE(a.eval);
  CHECK(a.eval->view_psnr.size() == 2);
  CHECK(a.eval->mean_psnr == b.eval->mean_psnr);

  std::istringstream csv(slurp(a_dir / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == metrics_header());
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(line.back() == ',');  // wall time left blank
  }
  CHECK(rows == 6);  // iterations 0, 5, 10, 15, 20 and the last
  for (int s = 1; s <= 4; ++s) {
    CHECK(std::filesystem::exists(a_dir / "checkpoints" / ("stage" + std::to_string(s) + ".mtnf")));
  }
  CHECK(std::filesystem::exists(a_dir / "summary.json"));
  TrainConfig reread;
  apply_config_text(reread, slurp(a_dir / "config.txt"));
  CHECK(to_config_text(reread) == slurp(a_dir / "config.txt"));

  // The stage-1 checkpoint holds the field as it entered stage 2.
  const Checkpoint s1 = load_checkpoint(a_dir / "checkpoints" / "stage1.mtnf");
  const Checkpoint fin = load_checkpoint(a_dir / "checkpoints" / "final.mtnf");
  CHECK(s1.stage == 1);
  CHECK(fin.stage == 4);
  for (std::size_t t = 0; t < 3; ++t) CHECK(s1.field.checksum(t) == fin.field.checksum(t));
  std::filesystem::remove_all(a_dir);
  std::filesystem::remove_all(b_dir);
}

TEST_CASE("train: sds_toy mode runs with the density blob") {
  TrainConfig c = tiny_config(12);
  c.mode = TrainMode::kSdsToy;
  const TrainResult r = train(c);
  CHECK(r.field.config().density_blob);
  CHECK(std::isfinite(r.last.loss));
  CHECK(r.beta > 0.0);
}

TEST_CASE("train: a diverging run aborts with the iteration recorded") {
  TrainConfig c = tiny_config(20);
  c.adan.lr = 1e300;
  c.adan.weight_decay = 0.0;
  c.grad_clip = 0.0;
  try {
    train(c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.iteration() < 20);
    CHECK(std::string(e.what()).find("iteration " + std::to_string(e.iteration())) == 0);
  }
}
