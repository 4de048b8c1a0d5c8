#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtn {

using Vec3 = Eigen::Vector3d;

/// Raised for invalid configuration: bad ranges, mismatched shapes at
/// construction time, unknown config keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an API is used out of order (e.g. backward without forward).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a documented precondition on values is violated
/// (negative density, time step out of range, shape mismatch at call time).
class ContractError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Stateless 64-bit mixer; used to derive per-ray and per-sample random
/// streams so results do not depend on evaluation order or worker count.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from 53 high bits.
constexpr double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline bool inside_domain(const Vec3& p) {
  return p.x() >= -1.0 && p.x() <= 1.0 && p.y() >= -1.0 && p.y() <= 1.0 &&
         p.z() >= -1.0 && p.z() <= 1.0;
}

}  // namespace mtn
