#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "keyflow/motion.hpp"
#include "keyflow/nnet.hpp"
#include "keyflow/synth.hpp"

namespace keyflow::seg {

using Mat = Eigen::MatrixXd;

struct HandFeatures {
  Mat left;   // T x 90
  Mat right;  // T x 90
};

HandFeatures hand_features(const MotionSequence& seq);

struct Segment {
  int start = 0;
  int end = 0;  // inclusive
  bool operator==(const Segment&) const = default;
};

struct FastConfig {
  int hidden = 32;
  int attn_max_distance = 32;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const FastConfig& cfg);
FastConfig fast_config_from_json(const nlohmann::json& doc);

// Two hand streams with identical architecture and independent weights, then a mixer
// (temporal conv + self-attention) ending in a 3-way head over {O, I, B}.
struct FastModel {
  FastConfig config;
  nn::NetSpec stream;
  nn::NetSpec mixer;
  nn::Vector left;
  nn::Vector right;
  nn::Vector mix;

  static FastModel create(const FastConfig& cfg);
  std::size_t param_count() const;
};

// T x 3 logits at full temporal resolution.
Mat fast_forward(const FastModel& model, const HandFeatures& feats);
Mat softmax_rows(const Mat& logits);

struct Decoded {
  std::vector<int> labels;
  std::vector<Segment> segments;
};

// Rewrites every I whose predecessor is O (or the sequence start) to B.
std::vector<int> repair_bio(std::vector<int> labels);
// Maximal runs that start at B and continue through I.
std::vector<Segment> segments_from_labels(const std::vector<int>& labels);
// Row-wise argmax, then grammar repair. Throws NotNormalized unless rows are distributions.
Decoded bio_decode(const Mat& probs);

// Onset, floor mid and offset of every segment.
KeyframeMask select_keyframes(const std::vector<Segment>& segments, int length);

struct CtcResult {
  double loss = 0.0;
  Mat dlogits;  // T x 2
};

// Alphabet {0: blank, 1: SIGN}; target is SIGN repeated target_len times, so consecutive
// tokens need a blank between them. Throws InfeasibleTarget when T < 2 * target_len - 1.
CtcResult ctc_loss(const Mat& logits, int target_len);

struct FastTrainOptions {
  int epochs = 30;
  int batch = 8;
  double lr = 3e-3;
  double lambda_ctc = 0.1;
  int min_crop = 32;
  double frame_drop = 0.05;
  double clip = 1.0;
  std::uint64_t seed = 1;
  std::function<void(int, double)> on_epoch;
};

struct FastTrainReport {
  std::vector<double> loss_curve;  // mean loss per epoch
  double seconds = 0.0;
};

// Loss of one (features, labels) example: mean frame CE plus lambda_ctc * CTC on the
// collapsed {O, I+B} logits. Returns the gradient with respect to all three parameter blocks.
struct FastLoss {
  double ce = 0.0;
  double ctc = 0.0;
  double total = 0.0;
  nn::Vector d_left, d_right, d_mix;
};
FastLoss fast_loss(const FastModel& model, const HandFeatures& feats, const std::vector<int>& labels,
                   double lambda_ctc, bool with_grad = true);

FastTrainReport train_fast(FastModel& model, const std::vector<const CorpusItem*>& items,
                           const FastTrainOptions& opts);

struct SegCounts {
  Eigen::Matrix3d confusion = Eigen::Matrix3d::Zero();  // rows gt, cols pred
  long inter = 0;
  long uni = 0;
  long pred_segments = 0;
  long gt_segments = 0;

  void add(const std::vector<int>& pred, const std::vector<int>& gt);
};

struct SegMetrics {
  double f1 = 0.0;
  double iou = 0.0;
  double sr = 0.0;
  bool sr_infinite = false;
};

SegMetrics finalize(const SegCounts& counts);
// Macro F1 over the classes that occur in either labeling; inside-frame IoU; segment ratio.
SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& gt);

// Directory with manifest.json plus left.spkw, right.spkw, mixer.spkw.
void save_fast(const FastModel& model, const std::filesystem::path& dir);
FastModel load_fast(const std::filesystem::path& dir);

Decoded segment_sequence(const FastModel& model, const MotionSequence& seq);

}  // namespace keyflow::seg
