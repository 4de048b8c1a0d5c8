#include "mtn/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace mtn {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

}  // namespace

void CameraPose::validate() const {
  if (!in_range(azimuth_deg, kAzimuthMin, kAzimuthMax)) {
    throw ContractError("azimuth " + std::to_string(azimuth_deg) + " outside [-180, 180]");
  }
  if (!in_range(polar_deg, kPolarMin, kPolarMax)) {
    throw ContractError("polar " + std::to_string(polar_deg) + " outside [45, 105]");
  }
  if (!in_range(fovy_deg, kFovyMin, kFovyMax)) {
    throw ContractError("fovy " + std::to_string(fovy_deg) + " outside [10, 30]");
  }
  if (!(radius > 0.0)) throw ContractError("camera radius must be positive");
}

Vec3 CameraPose::position() const {
  const double az = azimuth_deg * kDegToRad;
  const double po = polar_deg * kDegToRad;
  return radius * Vec3(std::sin(po) * std::cos(az), std::sin(po) * std::sin(az), std::cos(po));
}

CameraPose sample_camera(std::mt19937_64& rng, RadiusInterval radius) {
  if (!(radius.lo > 0.0) || !(radius.lo <= radius.hi)) {
    throw ConfigError("invalid radius interval [" + std::to_string(radius.lo) + ", " +
                      std::to_string(radius.hi) + "]");
  }
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit_from_bits(rng()); };
  CameraPose pose;
  pose.azimuth_deg = uniform(kAzimuthMin, kAzimuthMax);
  pose.polar_deg = uniform(kPolarMin, kPolarMax);
  pose.fovy_deg = uniform(kFovyMin, kFovyMax);
  pose.radius = uniform(radius.lo, radius.hi);
  return pose;
}

Ray generate_ray(const CameraPose& pose, int width, int height, int row, int col) {
  const Vec3 origin = pose.position();
  const Vec3 forward = -origin.normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 up = right.cross(forward);
  const double half = std::tan(0.5 * pose.fovy_deg * kDegToRad);
  const double aspect = static_cast<double>(width) / height;
  const double x = ((col + 0.5) / width * 2.0 - 1.0) * half * aspect;
  const double y = (1.0 - (row + 0.5) / height * 2.0) * half;

  Ray ray;
  ray.origin = origin;
  ray.direction = (forward + x * right + y * up).normalized();
  // |o + t d|^2 = r^2  ->  t^2 + 2 b t + c = 0
  const double b = origin.dot(ray.direction);
  const double c = origin.squaredNorm() - kBoundingRadius * kBoundingRadius;
  const double disc = b * b - c;
  if (disc > 0.0) {
    const double root = std::sqrt(disc);
    const double t0 = std::max(0.0, -b - root);
    const double t1 = -b + root;
    if (t1 > t0) {
      ray.t_near = t0;
      ray.t_far = t1;
    }
  }
  return ray;
}

std::vector<Ray> generate_rays(const CameraPose& pose, int width, int height) {
  pose.validate();
  if (width < 1 || height < 1) throw ContractError("image size must be at least 1x1");
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) rays.push_back(generate_ray(pose, width, height, r, c));
  }
  return rays;
}

RaySamples sample_along_ray(const Ray& ray, int n, std::uint64_t seed, bool stratified) {
  if (n < 1) throw ContractError("sample count must be >= 1");
  RaySamples out;
  out.t.resize(n);
  out.delta.resize(n);
  const double bin = (ray.t_far - ray.t_near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = stratified ? unit_from_bits(splitmix64(seed + static_cast<std::uint64_t>(i)))
                                : 0.5;
    out.t[i] = ray.t_near + (i + u) * bin;
  }
  for (int i = 0; i + 1 < n; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
  out.delta[n - 1] = ray.t_far - out.t[n - 1];
  return out;
}

}  // namespace mtn
