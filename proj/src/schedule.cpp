#include "mtn/schedule.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace mtn {

void TimestepScheduleParams::validate() const {
  if (!(m1 > 0.0 && m2 > 0.0)) throw ConfigError("schedule: m1 and m2 must be positive");
  if (!(t_min >= 1 && t_min < t_max)) throw ConfigError("schedule: need 1 <= t_min < t_max");
  if (!(t_min <= n1 && n1 <= n2 && n2 <= t_max)) {
    throw ConfigError("schedule: need t_min <= n1 <= n2 <= t_max");
  }
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) {
    throw ConfigError("schedule: target fraction must be in (0, 1]");
  }
}

double descent_rate(double t, const TimestepScheduleParams& p) {
  if (t > p.n2) return -std::exp((t - p.n2) / p.m2);
  if (t >= p.n1) return -1.0;
  return -std::exp((t - p.n1) / p.m1);
}

double step_t(double t, double beta, const TimestepScheduleParams& p) {
  return std::max(t + beta * descent_rate(t, p), static_cast<double>(p.t_min));
}

namespace {

// Unclamped trajectory value after `steps` Euler steps from t_max.
double unclamped_after(const TimestepScheduleParams& p, double beta, int steps) {
  double t = p.t_max;
  for (int i = 0; i < steps; ++i) t += beta * descent_rate(t, p);
  return t;
}

}  // namespace

int arrival_iteration(const TimestepScheduleParams& p, double beta, int limit) {
  double t = p.t_max;
  for (int i = 0; i <= limit; ++i) {
    if (t <= p.t_min) return i;
    t = step_t(t, beta, p);
  }
  return -1;
}

double calibrate_beta(const TimestepScheduleParams& p, int total_iterations) {
  p.validate();
  const int target = static_cast<int>(std::lround(p.target_fraction * total_iterations));
  if (target < 1) {
    throw ConfigError("schedule: target_fraction * total_iterations must be >= 1, got " +
                      std::to_string(target));
  }
  // f(beta) = t_target(beta) - t_min falls from positive to non-positive.
  const auto reached = [&](double beta) { return unclamped_after(p, beta, target) <= p.t_min; };
  double lo = 1e-9;
  double hi = static_cast<double>(p.t_max - p.t_min) / target;
  for (int k = 0; k < 200 && !reached(hi); ++k) hi *= 2.0;
  if (reached(lo) || !reached(hi)) {
    std::ostringstream msg;
    msg << "schedule: no beta in [" << lo << ", " << hi << "] reaches t_min at iteration " << target;
    throw ConfigError(msg.str());
  }
  while ((hi - lo) > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (reached(mid) ? hi : lo) = mid;
  }
  return hi;
}

TimestepMode parse_timestep_mode(const std::string& name) {
  if (name == "progressive") return TimestepMode::kProgressive;
  if (name == "uniform") return TimestepMode::kUniform;
  throw ConfigError("unknown timestep mode '" + name + "'");
}

std::string to_string(TimestepMode mode) {
  return mode == TimestepMode::kProgressive ? "progressive" : "uniform";
}

std::string to_string(Phase phase) {
  return phase == Phase::kDeterministic ? "deterministic" : "random";
}

TimestepSampler::TimestepSampler(const TimestepScheduleParams& params, double beta,
                                 TimestepMode mode)
    : params_(params),
      beta_(beta),
      t_(params.t_max),
      phase_(mode == TimestepMode::kProgressive ? Phase::kDeterministic : Phase::kRandom) {
  params_.validate();
  if (mode == TimestepMode::kProgressive && !(beta > 0.0)) {
    throw ConfigError("schedule: beta must be positive");
  }
}

int TimestepSampler::sample(std::mt19937_64& rng) {
  if (phase_ == Phase::kRandom) {
    return std::uniform_int_distribution<int>(params_.t_min, params_.t_max)(rng);
  }
  const int value = static_cast<int>(std::lround(t_));
  if (t_ <= params_.t_min) {
    phase_ = Phase::kRandom;
  } else {
    t_ = step_t(t_, beta_, params_);
  }
  return value;
}

StageSchedule StageSchedule::equal(int total) {
  StageSchedule s;
  s.total = total;
  for (int m = 0; m < 4; ++m) s.starts[m] = static_cast<int>(static_cast<long long>(total) * m / 4);
  return s;
}

void StageSchedule::validate() const {
  if (total < 4) throw ConfigError("stage schedule: need at least 4 iterations");
  if (starts[0] != 0) throw ConfigError("stage schedule: stage 1 must start at iteration 0");
  for (int m = 1; m < 4; ++m) {
    if (starts[m] <= starts[m - 1]) {
      throw ConfigError("stage schedule: boundaries must be strictly increasing");
    }
  }
  if (starts[3] >= total) throw ConfigError("stage schedule: stage 4 must start before the end");
}

int StageSchedule::stage_of(int iteration) const {
  int stage = 1;
  for (int m = 1; m < 4; ++m) {
    if (iteration >= starts[m]) stage = m + 1;
  }
  return stage;
}

RadiusMode parse_radius_mode(const std::string& name) {
  if (name == "smooth") return RadiusMode::kSmooth;
  if (name == "stepped") return RadiusMode::kStepped;
  if (name == "fixed") return RadiusMode::kFixed;
  throw ConfigError("unknown radius mode '" + name + "'");
}

std::string to_string(RadiusMode mode) {
  switch (mode) {
    case RadiusMode::kSmooth: return "smooth";
    case RadiusMode::kStepped: return "stepped";
    case RadiusMode::kFixed: return "fixed";
  }
  return "?";
}

void RadiusSchedule::validate() const {
  for (const RadiusInterval& r : {start, end}) {
    if (!(r.lo > 0.0 && r.lo <= r.hi)) throw ConfigError("radius interval must satisfy 0 < lo <= hi");
  }
  if (end.lo > start.lo || end.hi > start.hi) {
    throw ConfigError("radius schedule endpoints must not increase");
  }
}

RadiusInterval RadiusSchedule::interval(int iteration, const StageSchedule& stages) const {
  double frac = 0.0;
  switch (mode) {
    case RadiusMode::kFixed: return {end.lo, start.hi};
    case RadiusMode::kSmooth:
      frac = static_cast<double>(iteration) / stages.total;
      break;
    case RadiusMode::kStepped:
      frac = (stages.stage_of(iteration) - 1) / 3.0;
      break;
  }
  frac = std::clamp(frac, 0.0, 1.0);
  return {start.lo + (end.lo - start.lo) * frac, start.hi + (end.hi - start.hi) * frac};
}

void write_schedule_trace(std::ostream& out, const TimestepScheduleParams& params, double beta,
                          TimestepMode mode, const StageSchedule& stages,
                          const RadiusSchedule& radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TimestepSampler sampler(params, beta, mode);
  out << "iteration,t,phase,stage,R_lo,R_hi\n";
  for (int i = 0; i < stages.total; ++i) {
    const Phase phase = sampler.phase();
    const int t = sampler.sample(rng);
    const RadiusInterval r = radius.interval(i, stages);
    out << i << ',' << t << ',' << to_string(phase) << ',' << stages.stage_of(i) << ',' << r.lo
        << ',' << r.hi << '\n';
  }
}

}  // namespace mtn
