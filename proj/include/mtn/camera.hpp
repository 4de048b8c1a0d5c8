#pragma once

// Camera poses on a sphere around the origin, pinhole ray generation and
// stratified sampling along rays.

#include "mtn/common.hpp"

#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace mtn {

inline constexpr double kAzimuthMin = -180.0;
inline constexpr double kAzimuthMax = 180.0;
inline constexpr double kPolarMin = 45.0;
inline constexpr double kPolarMax = 105.0;
inline constexpr double kFovyMin = 10.0;
inline constexpr double kFovyMax = 30.0;

/// Rays are clipped to the sphere enclosing the [-1, 1]^3 domain.
inline constexpr double kBoundingRadius = std::numbers::sqrt3;

/// Angles in degrees. Up axis is +z, polar angle measured from +z, azimuth
/// measured in the xy plane from +x. The camera looks at the origin.
struct CameraPose {
  double azimuth_deg = 0.0;
  double polar_deg = 90.0;
  double radius = 3.0;
  double fovy_deg = 20.0;

  /// Throws ContractError if any value is outside its closed range or radius <= 0.
  void validate() const;
  Vec3 position() const;
};

struct RadiusInterval {
  double lo = 3.0;
  double hi = 3.5;
};

/// azimuth ~ U(-180, 180), polar ~ U(45, 105), fovy ~ U(10, 30), radius ~ U(lo, hi).
/// Throws ConfigError unless 0 < lo <= hi.
CameraPose sample_camera(std::mt19937_64& rng, RadiusInterval radius);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;

  /// False when the ray misses the bounding sphere (t_near == t_far == 0).
  bool hits() const { return t_far > t_near; }
  Vec3 at(double t) const { return origin + t * direction; }
};

/// Ray through the center of pixel (row, col); row 0 is the top of the image.
Ray generate_ray(const CameraPose& pose, int width, int height, int row, int col);

/// Row-major W*H rays.
std::vector<Ray> generate_rays(const CameraPose& pose, int width, int height);

struct RaySamples {
  std::vector<double> t;
  std::vector<double> delta;
};

/// n samples in [t_near, t_far]: one uniform draw per equal bin when
/// stratified, bin midpoints otherwise. delta_i = t_{i+1} - t_i, the last
/// delta reaches t_far. The jitter is a pure function of `seed`.
RaySamples sample_along_ray(const Ray& ray, int n, std::uint64_t seed, bool stratified);

}  // namespace mtn
