#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "keyflow/motion.hpp"
#include "keyflow/skeleton.hpp"

namespace keyflow {

// Joint positions of one frame (N x 3, one joint per row).
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using JointSeq = std::vector<PointSet>;

struct DtwResult {
  double distance = 0.0;  // optimal path cost divided by path length
  std::vector<std::pair<int, int>> path;
};

using FrameCost = std::function<double(int i, int j)>;

// Classic DTW over an n x m cost grid with steps (1,0), (0,1), (1,1).
// Minimises the summed cost; ties on backtrack prefer the diagonal.
DtwResult dtw(int n, int m, const FrameCost& cost);
DtwResult dtw(const JointSeq& a, const JointSeq& b);

// Mean Euclidean distance over corresponding rows.
double mean_joint_distance(const PointSet& a, const PointSet& b);

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  PointSet apply(const PointSet& p) const;
};

struct ProcrustesResult {
  PointSet aligned;
  SimilarityTransform transform;
  double residual = 0.0;  // mean Euclidean distance between aligned P and Q
};

// Closed-form similarity alignment of P onto Q (Umeyama), reflections excluded.
// Throws DegenerateConfiguration for fewer than 3 points or collinear P.
ProcrustesResult procrustes_align(const PointSet& p, const PointSet& q);

struct BodyHandError {
  double body = 0.0;
  double hand = 0.0;
};

struct DtwJpe {
  BodyHandError unaligned;
  BodyHandError aligned;  // per-frame Procrustes inside the cost
};

// Forward kinematics on both sequences, then DTW over the 11 body joints and the
// 30 hand joints (wrist-relative). Meters.
DtwJpe dtw_jpe(const MotionSequence& pred, const MotionSequence& gt, const SkeletonDef& skel);

struct JointTracks {
  JointSeq body;
  JointSeq hands;  // 30 joints, each relative to its own wrist
};
JointTracks joint_tracks(const MotionSequence& seq, const SkeletonDef& skel);

}  // namespace keyflow
