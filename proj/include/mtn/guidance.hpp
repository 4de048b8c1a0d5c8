#pragma once

// Diffusion-side math: noise schedule, forward noising, the denoiser
// contract, the toy target denoiser, and the two gradient sources used by
// training (score distillation and a plain photometric loss).

#include "mtn/renderer.hpp"

#include <any>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mtn {

struct NoiseSchedule {
  int steps = 0;                  // T
  std::vector<double> beta;       // beta[1..T]; beta[0] is unused (0)
  std::vector<double> alpha_bar;  // alpha_bar[0..T], alpha_bar[0] = 1

  double at(int t) const;  // alpha_bar[t], ContractError unless 0 <= t <= T
};

/// Linear variance ramp beta_1 = beta_start ... beta_T = beta_end and its
/// cumulative product. Throws ConfigError unless T >= 1 and
/// 0 < beta_start <= beta_end < 1.
NoiseSchedule build_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(ab) I + sqrt(1 - ab) eps, elementwise.
Image noise_image(const Image& image, double alpha_bar, const Image& eps);
/// Same with ab = schedule.alpha_bar[t]; ContractError unless 1 <= t <= T.
Image noise_image(const Image& image, int t, const Image& eps, const NoiseSchedule& schedule);

/// Opaque conditioning payload owned by the concrete denoiser.
struct Conditioning {
  std::any payload;
  std::optional<double> guidance_scale;  // unused by the toy denoiser
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// Predicted noise, same shape as `noisy`. Must be a pure function.
  virtual Image predict_noise(const Image& noisy, const Conditioning& y, int t) const = 0;
};

/// Exact denoiser for a known target I*:
///   eps_hat = (I_t - sqrt(ab_t) I*) / sqrt(1 - ab_t).
/// If the target carries an alpha channel, a Rgb background passed as the
/// conditioning payload recomposites the target over that background.
class ToyTargetDenoiser final : public Denoiser {
 public:
  ToyTargetDenoiser(Image target, NoiseSchedule schedule);
  /// `target` was composited over `background` with straight `alpha`.
  ToyTargetDenoiser(Image target, std::vector<double> alpha, Rgb background, NoiseSchedule schedule);

  Image predict_noise(const Image& noisy, const Conditioning& y, int t) const override;
  /// The target as seen over `background` (the stored target if no alpha).
  Image target(const std::optional<Rgb>& background = std::nullopt) const;
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  Image target_;
  std::vector<double> alpha_;
  Rgb background_{1.0, 1.0, 1.0};
  NoiseSchedule schedule_;
};

enum class SdsWeight { kSqrtAlphaBar, kOne, kOneMinusAlphaBar };

SdsWeight parse_sds_weight(const std::string& name);
std::string to_string(SdsWeight weight);
double sds_weight(SdsWeight weight, double alpha_bar);

struct StepResult {
  FieldGradients grads;
  RenderedImage image;
  double loss = 0.0;            // photometric: MSE; SDS: mean squared residual
  double residual_norm = 0.0;   // SDS only: ||eps_hat - eps||
  double mean_opacity = 0.0;
};

/// One score-distillation gradient: render, noise with eps ~ N(0, 1) drawn
/// from `rng` in pixel order, predict, and backpropagate w(t) (eps_hat - eps)
/// through the renderer. The denoiser is treated as constant.
StepResult sds_step(const MultiScaleField& field, const CameraPose& pose, int stage,
                    const RenderOptions& options, const Denoiser& denoiser,
                    const Conditioning& y, const NoiseSchedule& schedule, int t,
                    std::mt19937_64& rng, SdsWeight weight = SdsWeight::kSqrtAlphaBar);

/// Mean squared error to `target` over all pixels and channels, with exact
/// gradients. Throws ContractError on a shape mismatch.
StepResult photometric_step(const MultiScaleField& field, const CameraPose& pose, int stage,
                            const RenderOptions& options, const Image& target);

double mean_squared_error(const Image& a, const Image& b);

}  // namespace mtn
