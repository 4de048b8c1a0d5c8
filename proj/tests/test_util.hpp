#pragma once

#include "mtn/field.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace mtn::test {

inline FieldConfig small_config() {
  FieldConfig c;
  c.plane_resolution = {4, 8, 16};
  c.vector_resolution = 32;
  c.channels = 3;
  c.fourier_bands = 2;
  c.hidden_width = 8;
  c.hidden_layers = 2;
  return c;
}

/// Field with features large enough to move the decoder output around.
inline MultiScaleField random_field(const FieldConfig& config, std::uint64_t seed,
                                    double feature_scale = 0.5) {
  MultiScaleField field(config, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::uniform_real_distribution<double> u(-feature_scale, feature_scale);
  for (auto& ref : field.parameters()) {
    if (ref.group == ParamGroup::kDecoder) continue;
    for (double& x : ref.values) x = u(rng);
  }
  return field;
}

inline double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Central difference of `loss` with respect to parameter (tensor, index),
/// step 1e-4 * max(1, |param|).
inline double central_difference(MultiScaleField& field, std::size_t tensor, std::size_t index,
                                 const std::function<double(const MultiScaleField&)>& loss) {
  double& x = field.parameters()[tensor].values[index];
  const double saved = x;
  const double h = 1e-4 * std::max(1.0, std::abs(saved));
  x = saved + h;
  field.touch();
  const double up = loss(field);
  x = saved - h;
  field.touch();
  const double down = loss(field);
  x = saved;
  field.touch();
  return (up - down) / (2.0 * h);
}

inline Vec3 random_point(std::mt19937_64& rng, double extent = 0.95) {
  std::uniform_real_distribution<double> u(-extent, extent);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace mtn::test
