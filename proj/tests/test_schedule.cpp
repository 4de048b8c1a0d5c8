#include "mtn/schedule.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace mtn;

TEST_CASE("descent rate v(t)") {
  const TimestepScheduleParams p;
  CHECK(descent_rate(800.0, p) == -1.0);
  CHECK(descent_rate(500.0, p) == -1.0);
  CHECK(descent_rate(650.0, p) == -1.0);
  CHECK(descent_rate(950.0, p) == doctest::Approx(-std::exp(1.0)));
  CHECK(descent_rate(400.0, p) == doctest::Approx(-std::exp(-2.0)));
  // continuity at both knots
  CHECK(descent_rate(800.0 + 1e-9, p) == doctest::Approx(-1.0));
  CHECK(descent_rate(500.0 - 1e-9, p) == doctest::Approx(-1.0));
  // negative everywhere, largest magnitude at t_max on [t_min, t_max]
  for (double t = -100.0; t <= 1100.0; t += 0.5) {
    CHECK(descent_rate(t, p) < 0.0);
    if (t >= p.t_min && t <= p.t_max) CHECK(std::abs(descent_rate(t, p)) <= std::abs(descent_rate(p.t_max, p)));
  }
}

TEST_CASE("step_t") {
  const TimestepScheduleParams p;
  CHECK(step_t(600.0, 3.5, p) == 596.5);
  CHECK(step_t(20.0, 100.0, p) == 20.0);
  CHECK(step_t(980.0, 1.0, p) == doctest::Approx(980.0 - std::exp(1.2)));
  CHECK(step_t(980.0, 1.0, p) == doctest::Approx(976.68).epsilon(1e-4));
  CHECK(step_t(21.0, 1e6, p) == 20.0);
}

TEST_CASE("calibrate_beta") {
  const TimestepScheduleParams p;
  SUBCASE("trajectory reaches t_min at the target iteration") {
    for (int total : {100, 400, 2000, 6000}) {
      const double beta = calibrate_beta(p, total);
      const int target = static_cast<int>(std::lround(0.8 * total));
      const int arrival = arrival_iteration(p, beta, total);
      CHECK(arrival <= target);
      CHECK(arrival >= target - 1);
    }
  }
  SUBCASE("doubling the run length halves beta") {
    const double b1 = calibrate_beta(p, 6000);
    const double b2 = calibrate_beta(p, 12000);
    CHECK(b2 / b1 == doctest::Approx(0.5).epsilon(0.05));
  }
  SUBCASE("pure linear branch") {
    TimestepScheduleParams lin;
    lin.n1 = lin.t_min;
    lin.n2 = lin.t_max;
    const double beta = calibrate_beta(lin, 1000);
    CHECK(beta == doctest::Approx(960.0 / 800.0).epsilon(1e-5));
  }
  SUBCASE("faults") {
    CHECK_THROWS_AS(calibrate_beta(p, 0), ConfigError);
    TimestepScheduleParams bad;
    bad.n1 = 900;
    CHECK_THROWS_AS(calibrate_beta(bad, 100), ConfigError);
    bad = {};
    bad.m1 = 0.0;
    CHECK_THROWS_AS(calibrate_beta(bad, 100), ConfigError);
  }
}

TEST_CASE("property: default trajectory is strictly decreasing with shrinking steps") {
  const TimestepScheduleParams p;
  for (int total : {400, 2000, 6000}) {
    const double beta = calibrate_beta(p, total);
    double t = p.t_max;
    double last_step = 1e300;
    int steps = 0;
    while (t > p.t_min) {
      const double next = step_t(t, beta, p);
      CHECK(next < t);
      CHECK(t - next <= last_step + 1e-12);
      last_step = t - next;
      t = next;
      ++steps;
      REQUIRE(steps <= total);
    }
  }
}

TEST_CASE("TimestepSampler") {
  const TimestepScheduleParams p;
  const int total = 2000;
  const double beta = calibrate_beta(p, total);
  TimestepSampler sampler(p, beta);
  std::mt19937_64 rng(3);
  CHECK(sampler.phase() == Phase::kDeterministic);
  int first = sampler.sample(rng);
  CHECK(first == 980);
  int prev = first;
  int i = 1;
  std::vector<int> random_draws;
  bool flipped = false;
  for (; i < 20000; ++i) {
    const Phase phase = sampler.phase();
    const int t = sampler.sample(rng);
    CHECK(t >= p.t_min);
    CHECK(t <= p.t_max);
    if (phase == Phase::kDeterministic) {
      CHECK_FALSE(flipped);
      CHECK(t <= prev);
      prev = t;
    } else {
      flipped = true;
      random_draws.push_back(t);
    }
  }
  CHECK(prev == p.t_min);
  REQUIRE(random_draws.size() >= 10000);
  // chi-square over 24 equal bins of [20, 980]
  std::vector<int> bins(24, 0);
  for (int t : random_draws) bins[std::min(23, (t - 20) * 24 / 961)]++;
  double chi2 = 0.0;
  const double expect = static_cast<double>(random_draws.size()) / 24;
  for (int b : bins) chi2 += (b - expect) * (b - expect) / expect;
  CHECK(chi2 < 60.0);  // 23 dof; p < 1e-4 beyond this

  TimestepSampler uniform(p, beta, TimestepMode::kUniform);
  CHECK(uniform.phase() == Phase::kRandom);
}

TEST_CASE("TimestepSampler: deterministic phase ends by the target iteration") {
  const TimestepScheduleParams p;
  const int total = 400;
  TimestepSampler sampler(p, calibrate_beta(p, total));
  std::mt19937_64 rng(1);
  int last_deterministic = -1;
  for (int i = 0; i < total; ++i) {
    if (sampler.phase() == Phase::kDeterministic) last_deterministic = i;
    sampler.sample(rng);
  }
  CHECK(std::abs(last_deterministic - 320) <= 1);
}

TEST_CASE("stage schedule") {
  const StageSchedule s;
  CHECK(s.stage_of(0) == 1);
  CHECK(s.stage_of(1499) == 1);
  CHECK(s.stage_of(1500) == 2);
  CHECK(s.stage_of(3000) == 3);
  CHECK(s.stage_of(4500) == 4);
  CHECK(s.stage_of(5999) == 4);
  const StageSchedule e = StageSchedule::equal(400);
  CHECK(e.starts == std::array<int, 4>{0, 100, 200, 300});
  int prev = 1;
  std::array<bool, 4> seen{};
  for (int i = 0; i < 400; ++i) {
    const int m = e.stage_of(i);
    CHECK(m >= prev);
    prev = m;
    seen[m - 1] = true;
  }
  CHECK(seen == std::array<bool, 4>{true, true, true, true});
  StageSchedule bad = e;
  bad.starts = {0, 100, 100, 300};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.starts = {1, 100, 200, 300};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.starts = {0, 100, 200, 400};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("radius schedule") {
  const StageSchedule stages;
  RadiusSchedule r;
  auto i0 = r.interval(0, stages);
  CHECK(i0.lo == 3.0);
  CHECK(i0.hi == 3.5);
  auto mid = r.interval(3000, stages);
  CHECK(mid.lo == doctest::Approx(2.4));
  CHECK(mid.hi == doctest::Approx(2.8));
  auto last = r.interval(5999, stages);
  CHECK(last.lo == doctest::Approx(1.8).epsilon(1.2 / 6000 + 1e-12));
  CHECK(last.hi == doctest::Approx(2.1).epsilon(1.4 / 6000 + 1e-12));
  for (RadiusMode mode : {RadiusMode::kSmooth, RadiusMode::kStepped, RadiusMode::kFixed}) {
    r.mode = mode;
    RadiusInterval prev = r.interval(0, stages);
    for (int i = 0; i < 6000; ++i) {
      const RadiusInterval cur = r.interval(i, stages);
      CHECK(cur.lo <= cur.hi);
      CHECK(cur.lo <= prev.lo);
      CHECK(cur.hi <= prev.hi);
      prev = cur;
    }
  }
  r.mode = RadiusMode::kStepped;
  CHECK(r.interval(1499, stages).lo == 3.0);
  CHECK(r.interval(4500, stages).lo == doctest::Approx(1.8));
  r.mode = RadiusMode::kFixed;
  CHECK(r.interval(10, stages).lo == 1.8);
  CHECK(r.interval(10, stages).hi == 3.5);
  CHECK(parse_radius_mode(to_string(RadiusMode::kStepped)) == RadiusMode::kStepped);
  CHECK_THROWS_AS(parse_radius_mode("spiral"), ConfigError);
}

TEST_CASE("schedule trace CSV") {
  const TimestepScheduleParams p;
  const StageSchedule stages = StageSchedule::equal(100);
  std::ostringstream a, b;
  const double beta = calibrate_beta(p, 100);
  write_schedule_trace(a, p, beta, TimestepMode::kProgressive, stages, RadiusSchedule{}, 5);
  write_schedule_trace(b, p, beta, TimestepMode::kProgressive, stages, RadiusSchedule{}, 5);
  CHECK(a.str() == b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,t,phase,stage,R_lo,R_hi");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 100);
  CHECK(a.str().find("0,980,deterministic,1,3,3.5\n") != std::string::npos);
}
