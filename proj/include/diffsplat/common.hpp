// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_COMMON_HPP
#define DIFFSPLAT_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffsplat {

using Real = double;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec4 = Eigen::Vector4d;

inline constexpr Real kPi = 3.14159265358979323846;

inline Real deg_to_rad(Real deg) { return deg * kPi / 180.0; }
inline Real rad_to_deg(Real rad) { return rad * 180.0 / kPi; }

inline Real clamp01(Real v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Thrown on malformed inputs and files; CLI maps it to exit code 1.
class DomainError : public std::runtime_error {
  public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace diffsplat

#endif // DIFFSPLAT_COMMON_HPP
