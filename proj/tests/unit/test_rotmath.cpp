#include <doctest.h>

#include <cmath>
#include <numbers>

#include "keyflow/error.hpp"
#include "keyflow/rotmath.hpp"
#include "test_util.hpp"

using namespace keyflow;
using keyflow::testing::random_rotation;
using keyflow::testing::rot_z;

TEST_CASE("rot6d_to_matrix worked examples") {
  CHECK(rot6d_to_matrix({1, 0, 0, 0, 1, 0}).isApprox(RotMatrix::Identity(), 1e-15));

  RotMatrix expected;
  expected << 0, -1, 0,  //
      1, 0, 0,           //
      0, 0, 1;
  const RotMatrix m = rot6d_to_matrix({0, 1, 0, -1, 0, 0});
  CHECK((m - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((m * m.transpose() - RotMatrix::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(rot6d_to_matrix({2, 0, 0, 0, 3, 0}).isApprox(RotMatrix::Identity(), 1e-15));
}

TEST_CASE("rot6d_to_matrix rejects degenerate input") {
  CHECK_THROWS_AS(rot6d_to_matrix({0, 0, 0, 0, 1, 0}), Error);
  CHECK_THROWS_AS(rot6d_to_matrix({1, 0, 0, 2, 0, 0}), Error);
  CHECK_THROWS_AS(rot6d_to_matrix({NAN, 0, 0, 0, 1, 0}), Error);
  try {
    rot6d_to_matrix({1, 0, 0, -3, 0, 0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateRotation);
  }
}

TEST_CASE("matrix_to_rot6d reads the first two columns") {
  const Rot6D id = matrix_to_rot6d(RotMatrix::Identity());
  CHECK(id == Rot6D{1, 0, 0, 0, 1, 0});
  const Rot6D z90 = matrix_to_rot6d(rot_z(90));
  const Rot6D expected{0, 1, 0, -1, 0, 0};
  for (int k = 0; k < 6; ++k) CHECK(z90[k] == doctest::Approx(expected[k]).epsilon(1e-15));
}

TEST_CASE("6D round trip over random rotations") {
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const RotMatrix m = random_rotation(rng);
    const RotMatrix back = rot6d_to_matrix(matrix_to_rot6d(m));
    worst = std::max(worst, (back - m).cwiseAbs().maxCoeff());
    CHECK(is_rotation(back, 1e-9));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("rot6d_to_matrix yields proper rotations for arbitrary inputs") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    Rot6D r;
    for (double& v : r) v = rng.normal();
    const RotMatrix m = rot6d_to_matrix(r);
    CHECK(is_rotation(m, 1e-9));
  }
}

TEST_CASE("quat_slerp endpoints and halving") {
  Rng rng(3);
  const Quat q = matrix_to_quat(random_rotation(rng));
  const Quat same = quat_slerp(q, q, 0.5);
  CHECK(std::abs(dot(same, q)) == doctest::Approx(1.0).epsilon(1e-12));

  const Quat id{1, 0, 0, 0};
  const Quat z90 = matrix_to_quat(rot_z(90));
  const Quat half = quat_slerp(id, z90, 0.5);
  const double c = std::cos(22.5 * std::numbers::pi / 180.0);
  const double s = std::sin(22.5 * std::numbers::pi / 180.0);
  CHECK(half.w == doctest::Approx(c).epsilon(1e-12));
  CHECK(half.x == doctest::Approx(0.0));
  CHECK(half.y == doctest::Approx(0.0));
  CHECK(half.z == doctest::Approx(s).epsilon(1e-12));

  const Quat a = quat_slerp(id, z90, 0.0);
  const Quat b = quat_slerp(id, z90, 1.0);
  CHECK((a.w == id.w && a.x == id.x && a.y == id.y && a.z == id.z));
  CHECK((b.w == z90.w && b.x == z90.x && b.y == z90.y && b.z == z90.z));
}

TEST_CASE("quat_slerp takes the short arc and handles near-identical inputs") {
  const Quat id{1, 0, 0, 0};
  const Quat z90 = matrix_to_quat(rot_z(90));
  const Quat neg{-z90.w, -z90.x, -z90.y, -z90.z};
  const Quat h1 = quat_slerp(id, z90, 0.5);
  const Quat h2 = quat_slerp(id, neg, 0.5);
  CHECK(std::abs(dot(h1, h2)) == doctest::Approx(1.0).epsilon(1e-12));

  const Quat tiny = normalized({1.0, 1e-9, 0.0, 0.0});
  const Quat mid = quat_slerp(id, tiny, 0.5);
  CHECK(std::isfinite(mid.w));
  CHECK(std::sqrt(dot(mid, mid)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("slerp_rot6d contract") {
  const Rot6D id = kIdentity6D;
  const Rot6D z90 = matrix_to_rot6d(rot_z(90));
  const Rot6D z45 = matrix_to_rot6d(rot_z(45));
  const Rot6D mid = slerp_rot6d(id, z90, 0.5);
  for (int k = 0; k < 6; ++k) CHECK(mid[k] == doctest::Approx(z45[k]).epsilon(1e-12));

  Rng rng(9);
  const Rot6D r = matrix_to_rot6d(random_rotation(rng));
  for (double t : {0.0, 0.3, 0.7, 1.0}) {
    const Rot6D out = slerp_rot6d(r, r, t);
    for (int k = 0; k < 6; ++k) CHECK(out[k] == doctest::Approx(r[k]).epsilon(1e-9));
  }

  CHECK_THROWS_AS(slerp_rot6d(id, z90, -1e-9), Error);
  CHECK_THROWS_AS(slerp_rot6d(id, z90, 1.0 + 1e-9), Error);
  CHECK_THROWS_AS(slerp_rot6d({0, 0, 0, 0, 1, 0}, z90, 0.5), Error);
}

TEST_CASE("slerp angular distance is linear in t") {
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const RotMatrix a = random_rotation(rng);
    const RotMatrix b = random_rotation(rng);
    const double total = rotation_angle(a, b);
    const double t = rng.uniform();
    const RotMatrix m = rot6d_to_matrix(slerp_rot6d(matrix_to_rot6d(a), matrix_to_rot6d(b), t));
    worst = std::max(worst, std::abs(rotation_angle(a, m) - t * total));
  }
  CHECK(worst < 1e-5);
}
