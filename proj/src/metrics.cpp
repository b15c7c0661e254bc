#include "keyflow/metrics.hpp"

#include <algorithm>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "keyflow/error.hpp"

namespace keyflow {

DtwResult dtw(int n, int m, const FrameCost& cost) {
  if (n < 1 || m < 1) fail(ErrorCode::kEmpty, "dtw needs non-empty sequences");
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n, m, inf);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = inf;
        if (i > 0 && j > 0) best = acc(i - 1, j - 1);
        if (i > 0) best = std::min(best, acc(i - 1, j));
        if (j > 0) best = std::min(best, acc(i, j - 1));
      }
      acc(i, j) = best + cost(i, j);
    }
  }
  DtwResult r;
  int i = n - 1;
  int j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = acc(i - 1, j - 1);
      const double up = acc(i - 1, j);
      const double left = acc(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  r.distance = acc(n - 1, m - 1) / static_cast<double>(r.path.size());
  return r;
}

double mean_joint_distance(const PointSet& a, const PointSet& b) {
  return (a - b).rowwise().norm().mean();
}

DtwResult dtw(const JointSeq& a, const JointSeq& b) {
  return dtw(static_cast<int>(a.size()), static_cast<int>(b.size()),
             [&](int i, int j) { return mean_joint_distance(a[i], b[j]); });
}

PointSet SimilarityTransform::apply(const PointSet& p) const {
  PointSet out = (scale * (p * rotation.transpose())).eval();
  out.rowwise() += translation.transpose();
  return out;
}

ProcrustesResult procrustes_align(const PointSet& p, const PointSet& q) {
  if (p.rows() != q.rows()) fail(ErrorCode::kShapeMismatch, "point sets differ in size");
  if (p.rows() < 3) fail(ErrorCode::kDegenerateConfiguration, "need at least 3 points");
  const Eigen::RowVector3d mu_p = p.colwise().mean();
  const Eigen::RowVector3d mu_q = q.colwise().mean();
  const PointSet pc = p.rowwise() - mu_p;
  const PointSet qc = q.rowwise() - mu_q;
  const double var_p = pc.squaredNorm() / static_cast<double>(p.rows());

  // Eigenvalues of the 3x3 scatter, ascending; a rank-1 scatter means collinear points.
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(pc.transpose() * pc).eigenvalues();
  if (var_p < 1e-24 || ev(1) < 1e-12 * ev(2)) {
    fail(ErrorCode::kDegenerateConfiguration, "source points are collinear or coincident");
  }

  // Cross-covariance Q^T P / n.
  const Eigen::Matrix3d cov = (qc.transpose() * pc) / static_cast<double>(p.rows());
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2) = -1.0;

  ProcrustesResult r;
  r.transform.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  r.transform.scale = svd.singularValues().dot(s) / var_p;
  r.transform.translation = mu_q.transpose() - r.transform.scale * r.transform.rotation * mu_p.transpose();
  r.aligned = r.transform.apply(p);
  r.residual = mean_joint_distance(r.aligned, q);
  return r;
}

JointTracks joint_tracks(const MotionSequence& seq, const SkeletonDef& skel) {
  JointTracks tracks;
  tracks.body.reserve(seq.length());
  tracks.hands.reserve(seq.length());
  for (int f = 0; f < seq.length(); ++f) {
    const JointPositions jp = forward_kinematics(seq.pose(f), skel);
    tracks.body.emplace_back(jp.topRows(kBodyJoints));
    PointSet hands(2 * kHandJoints, 3);
    for (int k = 0; k < kHandJoints; ++k) {
      hands.row(k) = jp.row(joint::kLeftHandBase + k) - jp.row(joint::kLeftWrist);
      hands.row(kHandJoints + k) = jp.row(joint::kRightHandBase + k) - jp.row(joint::kRightWrist);
    }
    tracks.hands.push_back(std::move(hands));
  }
  return tracks;
}

namespace {

// Procrustes per hand (15 points each) so the two wrist-relative clouds align independently.
double aligned_hand_cost(const PointSet& pred, const PointSet& gt) {
  double total = 0.0;
  for (int h = 0; h < 2; ++h) {
    const PointSet p = pred.middleRows(h * kHandJoints, kHandJoints);
    const PointSet q = gt.middleRows(h * kHandJoints, kHandJoints);
    total += procrustes_align(p, q).residual;
  }
  return 0.5 * total;
}

}  // namespace

DtwJpe dtw_jpe(const MotionSequence& pred, const MotionSequence& gt, const SkeletonDef& skel) {
  const JointTracks a = joint_tracks(pred, skel);
  const JointTracks b = joint_tracks(gt, skel);
  const int n = pred.length();
  const int m = gt.length();
  DtwJpe out;
  out.unaligned.body = dtw(a.body, b.body).distance;
  out.unaligned.hand = dtw(a.hands, b.hands).distance;
  out.aligned.body =
      dtw(n, m, [&](int i, int j) { return procrustes_align(a.body[i], b.body[j]).residual; }).distance;
  out.aligned.hand = dtw(n, m, [&](int i, int j) { return aligned_hand_cost(a.hands[i], b.hands[j]); }).distance;
  return out;
}

}  // namespace keyflow
