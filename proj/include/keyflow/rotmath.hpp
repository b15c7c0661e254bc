#pragma once

#include <array>

#include <Eigen/Core>

namespace keyflow {

// First two columns of a rotation matrix, column-major: (a1.x, a1.y, a1.z, a2.x, a2.y, a2.z).
using Rot6D = std::array<double, 6>;
using RotMatrix = Eigen::Matrix3d;

struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline constexpr Rot6D kIdentity6D{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

// Gram-Schmidt: b1 = a1/|a1|, b2 = normalize(a2 - (a2.b1) b1), b3 = b1 x b2.
// Throws DegenerateRotation when a1 vanishes or a2 is parallel to a1.
RotMatrix rot6d_to_matrix(const Rot6D& r);
Rot6D matrix_to_rot6d(const RotMatrix& m);

Quat matrix_to_quat(const RotMatrix& m);
RotMatrix quat_to_matrix(const Quat& q);
Quat normalized(const Quat& q);
// Flips sign so that w >= 0.
Quat canonical(const Quat& q);
double dot(const Quat& a, const Quat& b);

Quat quat_slerp(const Quat& q0, const Quat& q1, double t);
// Throws ParameterOutOfRange for t outside [0, 1].
Rot6D slerp_rot6d(const Rot6D& a, const Rot6D& b, double t);

RotMatrix axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);
Eigen::Vector3d matrix_to_axis_angle(const RotMatrix& m);
// Geodesic angle between two rotations, in radians.
double rotation_angle(const RotMatrix& a, const RotMatrix& b);

bool is_rotation(const RotMatrix& m, double tol = 1e-6);

}  // namespace keyflow
