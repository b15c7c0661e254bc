#include "keyflow/skeleton.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"

namespace keyflow {

namespace {

// Bone-length table (meters).
constexpr double kSpineToNeck = 0.45;
constexpr double kNeckToHead = 0.15;
constexpr double kClavicleX = 0.05;
constexpr double kClavicleY = 0.40;
constexpr double kClavicleBone = 0.15;
constexpr double kArmBone = 0.25;
constexpr double kPalmLength = 0.08;
constexpr double kFingerBone = 0.03;
constexpr std::array<double, 5> kFingerSpread{-0.04, -0.02, 0.0, 0.02, 0.04};
constexpr std::array<const char*, 5> kFingerNames{"thumb", "index", "middle", "ring", "pinky"};

void add_hand(SkeletonDef& skel, const std::string& side, int wrist, double dir) {
  for (int f = 0; f < 5; ++f) {
    for (int k = 0; k < 3; ++k) {
      JointDef j;
      j.name = side + "_" + kFingerNames[f] + std::to_string(k + 1);
      if (k == 0) {
        j.parent = wrist;
        j.offset = {dir * kPalmLength, 0.0, kFingerSpread[f]};
      } else {
        j.parent = skel.size() - 1;
        j.offset = {dir * kFingerBone, 0.0, 0.0};
      }
      skel.joints.push_back(std::move(j));
    }
  }
}

}  // namespace

const Rot6D& PoseFrame::joint(int j) const {
  if (j < kBodyJoints) return body[j];
  if (j < kBodyJoints + kHandJoints) return left_hand[j - kBodyJoints];
  return right_hand[j - kBodyJoints - kHandJoints];
}

Rot6D& PoseFrame::joint(int j) {
  return const_cast<Rot6D&>(static_cast<const PoseFrame&>(*this).joint(j));
}

PoseFrame PoseFrame::identity() {
  PoseFrame p;
  p.body.fill(kIdentity6D);
  p.left_hand.fill(kIdentity6D);
  p.right_hand.fill(kIdentity6D);
  return p;
}

SkeletonDef default_skeleton() {
  SkeletonDef s;
  s.joints = {
      {"spine", kNoParent, {0.0, 0.0, 0.0}},
      {"neck", joint::kSpine, {0.0, kSpineToNeck, 0.0}},
      {"head", joint::kNeck, {0.0, kNeckToHead, 0.0}},
      {"left_clavicle", joint::kSpine, {kClavicleX, kClavicleY, 0.0}},
      {"left_shoulder", joint::kLeftClavicle, {kClavicleBone, 0.0, 0.0}},
      {"left_elbow", joint::kLeftShoulder, {kArmBone, 0.0, 0.0}},
      {"left_wrist", joint::kLeftElbow, {kArmBone, 0.0, 0.0}},
      {"right_clavicle", joint::kSpine, {-kClavicleX, kClavicleY, 0.0}},
      {"right_shoulder", joint::kRightClavicle, {-kClavicleBone, 0.0, 0.0}},
      {"right_elbow", joint::kRightShoulder, {-kArmBone, 0.0, 0.0}},
      {"right_wrist", joint::kRightElbow, {-kArmBone, 0.0, 0.0}},
  };
  add_hand(s, "left", joint::kLeftWrist, 1.0);
  add_hand(s, "right", joint::kRightWrist, -1.0);
  return s;
}

void validate_skeleton(const SkeletonDef& skel) {
  if (skel.size() != kNumJoints) {
    fail(ErrorCode::kSchemaError, "skeleton must have 41 joints, got " + std::to_string(skel.size()));
  }
  int roots = 0;
  for (int j = 0; j < skel.size(); ++j) {
    const auto& jd = skel.joints[j];
    if (jd.parent == kNoParent) {
      ++roots;
    } else if (jd.parent < 0 || jd.parent >= j) {
      fail(ErrorCode::kSchemaError, "joint " + jd.name + " breaks topological order");
    }
    if (!jd.offset.allFinite()) fail(ErrorCode::kSchemaError, "non-finite offset on " + jd.name);
  }
  if (roots != 1 || skel.joints[0].parent != kNoParent) {
    fail(ErrorCode::kSchemaError, "skeleton needs exactly one root at index 0");
  }
  // Each hand joint hangs off its own hand chain or its wrist.
  for (int j = kBodyJoints; j < kNumJoints; ++j) {
    const bool left = j < joint::kRightHandBase;
    const int base = left ? joint::kLeftHandBase : joint::kRightHandBase;
    const int wrist = left ? joint::kLeftWrist : joint::kRightWrist;
    const int parent = skel.joints[j].parent;
    if (parent != wrist && (parent < base || parent >= base + kHandJoints)) {
      fail(ErrorCode::kSchemaError, "hand joint " + skel.joints[j].name + " not attached to its hand");
    }
  }
}

JointPositions forward_kinematics(const PoseFrame& pose, const SkeletonDef& skel) {
  JointPositions p;
  std::array<RotMatrix, kNumJoints> global;
  for (int j = 0; j < kNumJoints; ++j) {
    const RotMatrix local = rot6d_to_matrix(pose.joint(j));
    const int parent = skel.joints[j].parent;
    if (parent == kNoParent) {
      global[j] = local;
      p.row(j).setZero();
    } else {
      global[j] = global[parent] * local;
      p.row(j) = p.row(parent) + (global[parent] * skel.joints[j].offset).transpose();
    }
  }
  return p;
}

std::array<double, kPoseDim> flatten(const PoseFrame& pose) {
  std::array<double, kPoseDim> v;
  for (int j = 0; j < kNumJoints; ++j) {
    const Rot6D& r = pose.joint(j);
    std::copy(r.begin(), r.end(), v.begin() + 6 * j);
  }
  return v;
}

namespace {
template <typename T>
PoseFrame unflatten_impl(std::span<const T> v) {
  if (v.size() != kPoseDim) {
    fail(ErrorCode::kBadLength, "pose vector must have 246 entries, got " + std::to_string(v.size()));
  }
  PoseFrame pose;
  for (int j = 0; j < kNumJoints; ++j) {
    Rot6D& r = pose.joint(j);
    for (int k = 0; k < 6; ++k) r[k] = static_cast<double>(v[6 * j + k]);
  }
  return pose;
}
}  // namespace

PoseFrame unflatten(std::span<const double> v) { return unflatten_impl(v); }
PoseFrame unflatten(std::span<const float> v) { return unflatten_impl(v); }

nlohmann::json skeleton_to_json(const SkeletonDef& skel) {
  nlohmann::json joints = nlohmann::json::array();
  nlohmann::json edges = nlohmann::json::array();
  for (int j = 0; j < skel.size(); ++j) {
    const auto& jd = skel.joints[j];
    joints.push_back({{"name", jd.name}, {"parent", jd.parent}, {"offset", {jd.offset.x(), jd.offset.y(), jd.offset.z()}}});
    if (jd.parent != kNoParent) edges.push_back({jd.parent, j});
  }
  return {{"v", 1}, {"joints", joints}, {"edges", edges}};
}

SkeletonDef skeleton_from_json(const nlohmann::json& doc) {
  SkeletonDef skel;
  try {
    if (doc.at("v").get<int>() != 1) fail(ErrorCode::kSchemaError, "unsupported skeleton version");
    for (const auto& j : doc.at("joints")) {
      const auto& off = j.at("offset");
      skel.joints.push_back({j.at("name").get<std::string>(), j.at("parent").get<int>(),
                             {off.at(0).get<double>(), off.at(1).get<double>(), off.at(2).get<double>()}});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, e.what());
  }
  validate_skeleton(skel);
  return skel;
}

}  // namespace keyflow
