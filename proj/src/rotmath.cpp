#include "keyflow/rotmath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "keyflow/error.hpp"

namespace keyflow {

namespace {
constexpr double kDegenerateEps = 1e-8;
}

RotMatrix rot6d_to_matrix(const Rot6D& r) {
  for (double v : r) {
    if (!std::isfinite(v)) fail(ErrorCode::kDegenerateRotation, "non-finite 6D component");
  }
  const Eigen::Vector3d a1(r[0], r[1], r[2]);
  const Eigen::Vector3d a2(r[3], r[4], r[5]);
  const double n1 = a1.norm();
  if (n1 < kDegenerateEps) fail(ErrorCode::kDegenerateRotation, "first column vanishes");
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u2 = a2 - a2.dot(b1) * b1;
  const double n2 = u2.norm();
  // Relative test so that scaled inputs behave like their unit versions.
  if (n2 < kDegenerateEps * std::max(1.0, a2.norm())) {
    fail(ErrorCode::kDegenerateRotation, "second column parallel to first");
  }
  const Eigen::Vector3d b2 = u2 / n2;
  RotMatrix m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Rot6D matrix_to_rot6d(const RotMatrix& m) {
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Quat normalized(const Quat& q) {
  const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quat canonical(const Quat& q) {
  if (q.w < 0.0) return {-q.w, -q.x, -q.y, -q.z};
  return q;
}

double dot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

Quat matrix_to_quat(const RotMatrix& m) {
  const Eigen::Quaterniond q(m);
  return canonical(normalized({q.w(), q.x(), q.y(), q.z()}));
}

RotMatrix quat_to_matrix(const Quat& q) {
  return Eigen::Quaterniond(q.w, q.x, q.y, q.z).normalized().toRotationMatrix();
}

Quat quat_slerp(const Quat& q0, const Quat& q1, double t) {
  if (t == 0.0) return q0;
  if (t == 1.0) return q1;
  Quat b = q1;
  double d = dot(q0, q1);
  if (d < 0.0) {
    b = {-q1.w, -q1.x, -q1.y, -q1.z};
    d = -d;
  }
  double s0 = 1.0 - t;
  double s1 = t;
  if (d <= 1.0 - 1e-7) {
    const double theta = std::acos(std::clamp(d, -1.0, 1.0));
    const double sin_theta = std::sin(theta);
    s0 = std::sin((1.0 - t) * theta) / sin_theta;
    s1 = std::sin(t * theta) / sin_theta;
  }
  Quat out{s0 * q0.w + s1 * b.w, s0 * q0.x + s1 * b.x, s0 * q0.y + s1 * b.y, s0 * q0.z + s1 * b.z};
  return normalized(out);
}

Rot6D slerp_rot6d(const Rot6D& a, const Rot6D& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    fail(ErrorCode::kParameterOutOfRange, "slerp parameter " + std::to_string(t) + " outside [0,1]");
  }
  const RotMatrix ma = rot6d_to_matrix(a);
  const RotMatrix mb = rot6d_to_matrix(b);
  if (t == 0.0) return matrix_to_rot6d(ma);
  if (t == 1.0) return matrix_to_rot6d(mb);
  const Quat q = quat_slerp(matrix_to_quat(ma), matrix_to_quat(mb), t);
  return matrix_to_rot6d(quat_to_matrix(q));
}

RotMatrix axis_angle_to_matrix(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-15) return RotMatrix::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Eigen::Vector3d matrix_to_axis_angle(const RotMatrix& m) {
  const Eigen::AngleAxisd aa(m);
  return aa.axis() * aa.angle();
}

double rotation_angle(const RotMatrix& a, const RotMatrix& b) {
  const Eigen::Quaterniond rel(a.transpose() * b);
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

bool is_rotation(const RotMatrix& m, double tol) {
  if (!m.allFinite()) return false;
  const double ortho = (m * m.transpose() - RotMatrix::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(m.determinant() - 1.0) < tol;
}

}  // namespace keyflow
