#include "mtn/guidance.hpp"

#include <cmath>
#include <numeric>

namespace mtn {

namespace {

void check_step(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) {
    throw ContractError("time step " + std::to_string(t) + " outside [1, " +
                        std::to_string(schedule.steps) + "]");
  }
}

void check_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw ContractError(std::string(what) + ": image shapes differ");
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double NoiseSchedule::at(int t) const {
  if (t < 0 || t > steps) throw ContractError("time step " + std::to_string(t) + " out of range");
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("noise schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

Image noise_image(const Image& image, double alpha_bar, const Image& eps) {
  check_same_shape(image, eps, "noise_image");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ContractError("alpha_bar outside [0, 1]");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Image out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.size(); ++i) out.data[i] = a * image.data[i] + b * eps.data[i];
  return out;
}

Image noise_image(const Image& image, int t, const Image& eps, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  return noise_image(image, schedule.alpha_bar[t], eps);
}

ToyTargetDenoiser::ToyTargetDenoiser(Image target, NoiseSchedule schedule)
    : target_(std::move(target)), schedule_(std::move(schedule)) {
  for (double x : target_.data) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("toy denoiser target must lie in [0, 1]");
  }
}

ToyTargetDenoiser::ToyTargetDenoiser(Image target, std::vector<double> alpha, Rgb background,
                                     NoiseSchedule schedule)
    : ToyTargetDenoiser(std::move(target), std::move(schedule)) {
  if (alpha.size() != static_cast<std::size_t>(target_.width) * target_.height) {
    throw ConfigError("toy denoiser alpha does not match the target size");
  }
  alpha_ = std::move(alpha);
  background_ = background;
}

Image ToyTargetDenoiser::target(const std::optional<Rgb>& background) const {
  if (alpha_.empty() || !background) return target_;
  Image out = target_;
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const double keep = 1.0 - alpha_[static_cast<std::size_t>(r) * out.width + c];
      for (int k = 0; k < 3; ++k) {
        out.at(r, c, k) += keep * ((*background)[k] - background_[k]);
      }
    }
  }
  return out;
}

Image ToyTargetDenoiser::predict_noise(const Image& noisy, const Conditioning& y, int t) const {
  check_step(t, schedule_);
  std::optional<Rgb> background;
  if (const auto* bg = std::any_cast<Rgb>(&y.payload)) background = *bg;
  const Image clean = target(background);
  check_same_shape(noisy, clean, "toy denoiser");
  const double a = std::sqrt(schedule_.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule_.alpha_bar[t]);
  Image eps(noisy.width, noisy.height, noisy.channels);
  for (std::size_t i = 0; i < noisy.size(); ++i) eps.data[i] = (noisy.data[i] - a * clean.data[i]) / b;
  return eps;
}

SdsWeight parse_sds_weight(const std::string& name) {
  if (name == "sqrt_alpha_bar") return SdsWeight::kSqrtAlphaBar;
  if (name == "one") return SdsWeight::kOne;
  if (name == "one_minus_alpha_bar") return SdsWeight::kOneMinusAlphaBar;
  throw ConfigError("unknown SDS weight '" + name + "'");
}

std::string to_string(SdsWeight weight) {
  switch (weight) {
    case SdsWeight::kSqrtAlphaBar: return "sqrt_alpha_bar";
    case SdsWeight::kOne: return "one";
    case SdsWeight::kOneMinusAlphaBar: return "one_minus_alpha_bar";
  }
  return "?";
}

double sds_weight(SdsWeight weight, double alpha_bar) {
  switch (weight) {
    case SdsWeight::kSqrtAlphaBar: return std::sqrt(alpha_bar);
    case SdsWeight::kOne: return 1.0;
    case SdsWeight::kOneMinusAlphaBar: return 1.0 - alpha_bar;
  }
  return 1.0;
}

StepResult sds_step(const MultiScaleField& field, const CameraPose& pose, int stage,
                    const RenderOptions& options, const Denoiser& denoiser,
                    const Conditioning& y, const NoiseSchedule& schedule, int t,
                    std::mt19937_64& rng, SdsWeight weight) {
  check_step(t, schedule);
  StepResult result;
  const RenderPass pass(field, pose, stage, options);
  result.image = pass.image();
  const Image& rendered = result.image.rgb;

  Image eps(rendered.width, rendered.height, rendered.channels);
  std::normal_distribution<double> normal;
  for (double& x : eps.data) x = normal(rng);
  const Image noisy = noise_image(rendered, t, eps, schedule);
  const Image predicted = denoiser.predict_noise(noisy, y, t);
  check_same_shape(predicted, rendered, "denoiser output");

  const double w = sds_weight(weight, schedule.alpha_bar[t]);
  ImageAdjoint adjoint{Image(rendered.width, rendered.height, rendered.channels), {}};
  double squared = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double r = predicted.data[i] - eps.data[i];
    squared += r * r;
    adjoint.d_rgb.data[i] = w * r;
  }
  result.grads = FieldGradients::zeros_like(field);
  pass.backward(adjoint, result.grads);
  result.residual_norm = std::sqrt(squared);
  result.loss = squared / static_cast<double>(rendered.size());
  result.mean_opacity = mean(result.image.opacity);
  return result;
}

double mean_squared_error(const Image& a, const Image& b) {
  check_same_shape(a, b, "mean_squared_error");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return a.size() == 0 ? 0.0 : sum / static_cast<double>(a.size());
}

StepResult photometric_step(const MultiScaleField& field, const CameraPose& pose, int stage,
                            const RenderOptions& options, const Image& target) {
  if (target.width != options.width || target.height != options.height || target.channels != 3) {
    throw ContractError("photometric target does not match the render size");
  }
  StepResult result;
  result.grads = FieldGradients::zeros_like(field);
  const double scale = 2.0 / (3.0 * options.width * options.height);
  result.image = render_backward(
      field, pose, stage, options,
      [&](int row, int col, const Composite& pixel, Rgb& d_rgb, double&) {
        for (int k = 0; k < 3; ++k) d_rgb[k] = scale * (pixel.rgb[k] - target.at(row, col, k));
      },
      result.grads);
  const Image& rendered = result.image.rgb;
  result.loss = mean_squared_error(rendered, target);
  result.mean_opacity = mean(result.image.opacity);
  return result;
}

}  // namespace mtn
