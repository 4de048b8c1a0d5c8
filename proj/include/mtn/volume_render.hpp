#pragma once

#include "mtn/field.hpp"

#include <span>

namespace mtn {

struct Composite {
  Rgb rgb{0.0, 0.0, 0.0};
  double opacity = 0.0;
  double depth = 0.0;
};

/// Emission-absorption compositing along one ray:
///   alpha_i = 1 - exp(-sigma_i delta_i),  T_i = prod_{j<i} (1 - alpha_j),
///   w_i = T_i alpha_i,  rgb = sum w_i c_i + T_final * background,
///   opacity = 1 - T_final,  depth = sum w_i t_i / max(opacity, 1e-8).
/// Throws ContractError for negative sigma or delta.
Composite volume_render(std::span<const double> sigma, std::span<const Rgb> rgb,
                        std::span<const double> delta, std::span<const double> t,
                        const Rgb& background);

/// Per-sample weights w_i for the same inputs.
std::vector<double> composite_weights(std::span<const double> sigma, std::span<const double> delta);

/// Adjoints of volume_render with respect to sigma_i and c_i given adjoints of
/// the composited color and opacity. Depth carries no gradient.
void volume_render_backward(std::span<const double> sigma, std::span<const Rgb> rgb,
                            std::span<const double> delta, const Rgb& background,
                            const Rgb& d_color, double d_opacity, std::span<double> d_sigma,
                            std::span<Rgb> d_rgb);

}  // namespace mtn
