#include "keyflow/baselines.hpp"

#include <vector>

#include "keyflow/error.hpp"
#include "keyflow/rotmath.hpp"

namespace keyflow {

MotionSequence slerp_inbetween(const KeyframeMask& mask, const MotionSequence& anchors) {
  const int t_len = anchors.length();
  if (static_cast<int>(mask.size()) != t_len) fail(ErrorCode::kLengthMismatch, "mask and anchors differ in length");
  std::vector<int> keys;
  for (int f = 0; f < t_len; ++f) {
    if (mask[f]) keys.push_back(f);
  }
  if (keys.empty()) fail(ErrorCode::kNoAnchors, "mask has no anchor frames");

  MotionSequence out = MotionSequence::zeros(t_len, anchors.fps);
  for (int f = 0; f < keys.front(); ++f) out.frames.row(f) = anchors.frames.row(keys.front());
  for (int f = keys.back(); f < t_len; ++f) out.frames.row(f) = anchors.frames.row(keys.back());

  for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
    const int fa = keys[k];
    const int fb = keys[k + 1];
    out.frames.row(fa) = anchors.frames.row(fa);
    if (fb - fa < 2) continue;
    const PoseFrame a = anchors.pose(fa);
    const PoseFrame b = anchors.pose(fb);
    std::vector<Quat> qa(kNumJoints);
    std::vector<Quat> qb(kNumJoints);
    for (int j = 0; j < kNumJoints; ++j) {
      qa[j] = matrix_to_quat(rot6d_to_matrix(a.joint(j)));
      qb[j] = matrix_to_quat(rot6d_to_matrix(b.joint(j)));
    }
    for (int f = fa + 1; f < fb; ++f) {
      const double t = static_cast<double>(f - fa) / (fb - fa);
      PoseFrame p;
      for (int j = 0; j < kNumJoints; ++j) p.joint(j) = matrix_to_rot6d(quat_to_matrix(quat_slerp(qa[j], qb[j], t)));
      out.set_pose(f, p);
    }
  }
  return out;
}

}  // namespace keyflow
