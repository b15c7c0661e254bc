#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>

#include "keyflow/error.hpp"
#include "keyflow/random.hpp"
#include "keyflow/rotmath.hpp"
#include "keyflow/skeleton.hpp"

namespace keyflow::testing {

inline RotMatrix random_rotation(Rng& rng, double max_angle = std::numbers::pi) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  return axis_angle_to_matrix(axis * rng.uniform(0.0, max_angle));
}

inline PoseFrame random_pose(Rng& rng, double max_angle = 1.0) {
  PoseFrame p;
  for (int j = 0; j < kNumJoints; ++j) p.joint(j) = matrix_to_rot6d(random_rotation(rng, max_angle));
  return p;
}

inline RotMatrix rot_z(double deg) {
  return axis_angle_to_matrix(Eigen::Vector3d(0, 0, deg * std::numbers::pi / 180.0));
}

// Code of the keyflow::Error thrown by fn, or nullopt when it returns normally.
inline std::optional<ErrorCode> error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace keyflow::testing
