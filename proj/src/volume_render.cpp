#include "mtn/volume_render.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mtn {

namespace {

void check_inputs(std::span<const double> sigma, std::span<const double> delta) {
  if (sigma.size() != delta.size()) throw ContractError("sigma and delta lengths differ");
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0)) {
      throw ContractError("negative or NaN density at sample " + std::to_string(i));
    }
    if (!(delta[i] >= 0.0)) {
      throw ContractError("negative or NaN step length at sample " + std::to_string(i));
    }
  }
}

}  // namespace

Composite volume_render(std::span<const double> sigma, std::span<const Rgb> rgb,
                        std::span<const double> delta, std::span<const double> t,
                        const Rgb& background) {
  check_inputs(sigma, delta);
  Composite out;
  double transmittance = 1.0;
  double weight_sum = 0.0;
  double depth_sum = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double keep = std::exp(-sigma[i] * delta[i]);
    const double w = transmittance * (1.0 - keep);
    for (int c = 0; c < 3; ++c) out.rgb[c] += w * rgb[i][c];
    weight_sum += w;
    depth_sum += w * t[i];
    transmittance *= keep;
  }
  for (int c = 0; c < 3; ++c) out.rgb[c] += transmittance * background[c];
  out.opacity = weight_sum;
  out.depth = depth_sum / std::max(weight_sum, 1e-8);
  return out;
}

std::vector<double> composite_weights(std::span<const double> sigma, std::span<const double> delta) {
  check_inputs(sigma, delta);
  std::vector<double> w(sigma.size());
  double transmittance = 1.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double keep = std::exp(-sigma[i] * delta[i]);
    w[i] = transmittance * (1.0 - keep);
    transmittance *= keep;
  }
  return w;
}

void volume_render_backward(std::span<const double> sigma, std::span<const Rgb> rgb,
                            std::span<const double> delta, const Rgb& background,
                            const Rgb& d_color, double d_opacity, std::span<double> d_sigma,
                            std::span<Rgb> d_rgb) {
  check_inputs(sigma, delta);
  const std::size_t n = sigma.size();
  // after[i] = T_{i+1}: transmittance just past sample i.
  std::vector<double> after(n);
  std::vector<double> weight(n);
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = std::exp(-sigma[i] * delta[i]);
    weight[i] = transmittance * (1.0 - keep);
    transmittance *= keep;
    after[i] = transmittance;
  }
  const double t_final = transmittance;

  // d rgb / d sigma_k = delta_k (T_{k+1} c_k - S_k), S_k = sum_{i>k} w_i c_i + T_final bg
  // d opacity / d sigma_k = delta_k T_final
  Rgb suffix{t_final * background[0], t_final * background[1], t_final * background[2]};
  for (std::size_t k = n; k-- > 0;) {
    double g = 0.0;
    for (int c = 0; c < 3; ++c) {
      g += d_color[c] * (after[k] * rgb[k][c] - suffix[c]);
      d_rgb[k][c] = d_color[c] * weight[k];
    }
    d_sigma[k] = delta[k] * (g + d_opacity * t_final);
    for (int c = 0; c < 3; ++c) suffix[c] += weight[k] * rgb[k][c];
  }
}

}  // namespace mtn
