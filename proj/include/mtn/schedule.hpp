#pragma once

// Progressive controls over a training run: the deterministic time-step
// descent dt/di = beta v(t) with its switch to uniform sampling, the
// shrinking camera radius interval, and the four-stage plan.

#include "mtn/camera.hpp"

#include <array>
#include <iosfwd>
#include <random>
#include <string>

namespace mtn {

struct TimestepScheduleParams {
  double m1 = 50.0;
  double m2 = 150.0;
  double n1 = 500.0;
  double n2 = 800.0;
  int t_min = 20;
  int t_max = 980;
  double target_fraction = 0.8;  // t reaches t_min at round(rho * total)

  /// Throws ConfigError unless m1, m2 > 0, t_min < n1 <= n2 < t_max (the
  /// degenerate n1 = t_min, n2 = t_max linear case is also accepted) and
  /// 0 < target_fraction <= 1.
  void validate() const;
};

/// v(t): -exp((t - n2) / m2) above n2, -1 on [n1, n2], -exp((t - n1) / m1) below n1.
double descent_rate(double t, const TimestepScheduleParams& params);

/// One explicit Euler step t + beta v(t), clamped below at t_min.
double step_t(double t, double beta, const TimestepScheduleParams& params);

/// beta such that stepping from t_max reaches t_min at iteration
/// round(target_fraction * total_iterations). Bisection to 1e-6 relative;
/// the returned value errs on the side of arriving on time.
/// Throws ConfigError if the target iteration is < 1 or no bracket is found.
double calibrate_beta(const TimestepScheduleParams& params, int total_iterations);

/// First iteration at which the deterministic trajectory is at t_min.
int arrival_iteration(const TimestepScheduleParams& params, double beta, int limit);

enum class TimestepMode { kProgressive, kUniform };
enum class Phase { kDeterministic, kRandom };

TimestepMode parse_timestep_mode(const std::string& name);
std::string to_string(TimestepMode mode);
std::string to_string(Phase phase);

/// Draws one time step per training iteration. Progressive mode emits the
/// rounded deterministic trajectory (starting at t_max) until it has emitted
/// t_min, then switches permanently to uniform integers in [t_min, t_max].
/// Uniform mode starts in the random phase.
class TimestepSampler {
 public:
  TimestepSampler(const TimestepScheduleParams& params, double beta,
                  TimestepMode mode = TimestepMode::kProgressive);

  int sample(std::mt19937_64& rng);
  Phase phase() const { return phase_; }
  double current() const { return t_; }
  double beta() const { return beta_; }

 private:
  TimestepScheduleParams params_;
  double beta_;
  double t_;
  Phase phase_;
};

/// Stage starts; stage m covers [starts[m-1], starts[m]) and stage 4 runs to the end.
struct StageSchedule {
  int total = 6000;
  std::array<int, 4> starts{0, 1500, 3000, 4500};

  static StageSchedule equal(int total);
  /// Throws ConfigError unless starts[0] == 0 and starts is strictly increasing below total.
  void validate() const;
  int stage_of(int iteration) const;
};

enum class RadiusMode { kSmooth, kStepped, kFixed };

RadiusMode parse_radius_mode(const std::string& name);
std::string to_string(RadiusMode mode);

struct RadiusSchedule {
  RadiusInterval start{3.0, 3.5};
  RadiusInterval end{1.8, 2.1};
  RadiusMode mode = RadiusMode::kSmooth;

  void validate() const;
  /// Smooth: both endpoints interpolate linearly with i / total. Stepped: the
  /// same interpolation at (stage - 1) / 3. Fixed: [end.lo, start.hi] throughout.
  RadiusInterval interval(int iteration, const StageSchedule& stages) const;
};

/// CSV with columns iteration,t,phase,stage,R_lo,R_hi for `total` iterations.
void write_schedule_trace(std::ostream& out, const TimestepScheduleParams& params, double beta,
                          TimestepMode mode, const StageSchedule& stages,
                          const RadiusSchedule& radius, std::uint64_t seed);

}  // namespace mtn
