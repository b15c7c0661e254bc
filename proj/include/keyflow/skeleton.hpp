#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "keyflow/rotmath.hpp"

namespace keyflow {

inline constexpr int kBodyJoints = 11;
inline constexpr int kHandJoints = 15;
inline constexpr int kNumJoints = kBodyJoints + 2 * kHandJoints;  // 41
inline constexpr int kPoseDim = 6 * kNumJoints;                   // 246
inline constexpr int kBodyDim = 6 * kBodyJoints;                  // 66
inline constexpr int kHandDim = 6 * kHandJoints;                  // 90
inline constexpr int kLeftHandOffset = kBodyDim;                  // [66, 156)
inline constexpr int kRightHandOffset = kBodyDim + kHandDim;      // [156, 246)
inline constexpr int kNoParent = -1;

// Body joint indices of the built-in rig.
namespace joint {
inline constexpr int kSpine = 0;
inline constexpr int kNeck = 1;
inline constexpr int kHead = 2;
inline constexpr int kLeftClavicle = 3;
inline constexpr int kLeftShoulder = 4;
inline constexpr int kLeftElbow = 5;
inline constexpr int kLeftWrist = 6;
inline constexpr int kRightClavicle = 7;
inline constexpr int kRightShoulder = 8;
inline constexpr int kRightElbow = 9;
inline constexpr int kRightWrist = 10;
inline constexpr int kLeftHandBase = kBodyJoints;
inline constexpr int kRightHandBase = kBodyJoints + kHandJoints;
}  // namespace joint

struct JointDef {
  std::string name;
  int parent = kNoParent;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // meters, in the parent's frame
};

struct SkeletonDef {
  std::vector<JointDef> joints;

  int size() const { return static_cast<int>(joints.size()); }
};

struct PoseFrame {
  std::array<Rot6D, kBodyJoints> body;
  std::array<Rot6D, kHandJoints> left_hand;
  std::array<Rot6D, kHandJoints> right_hand;

  // Joint j in skeleton order (body, left hand, right hand).
  const Rot6D& joint(int j) const;
  Rot6D& joint(int j);

  static PoseFrame identity();
};

// Root-relative joint positions, one row per joint.
using JointPositions = Eigen::Matrix<double, kNumJoints, 3, Eigen::RowMajor>;

// Spine-rooted rig: neck/head chain, two clavicle->shoulder->elbow->wrist arms
// (arm bones 0.25 m) and five three-joint fingers per hand (phalanges 0.03 m).
SkeletonDef default_skeleton();

// Checks topological order, a single root and the 11 + 15 + 15 layout.
void validate_skeleton(const SkeletonDef& skel);

JointPositions forward_kinematics(const PoseFrame& pose, const SkeletonDef& skel);

std::array<double, kPoseDim> flatten(const PoseFrame& pose);
PoseFrame unflatten(std::span<const double> v);
PoseFrame unflatten(std::span<const float> v);

// Schema: {"v":1, "joints":[{"name","parent","offset":[x,y,z]}], "edges":[[parent,child],...]}
nlohmann::json skeleton_to_json(const SkeletonDef& skel);
SkeletonDef skeleton_from_json(const nlohmann::json& doc);

}  // namespace keyflow
