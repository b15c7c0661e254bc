#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "keyflow/motion.hpp"
#include "keyflow/nnet.hpp"
#include "keyflow/random.hpp"

namespace keyflow::cfm {

using Mat = Eigen::MatrixXd;

struct Channel {
  const char* name;
  int offset;
  int dim;
};
inline constexpr std::array<Channel, 2> kChannels{{{"body", 0, kBodyDim}, {"hands", kBodyDim, 2 * kHandDim}}};

// Euler: x += dt * v, as the field is defined.
// Residual: reads v as the x1 - C residual, x += dt / (1 - t) * v, so the last step lands on C + v.
enum class Integrator { kEuler, kResidual };

struct FlowConfig {
  double lambda_cfm = 2.0;
  double lambda_recon = 1.0;
  double lambda_vel = 1.0;
  double rho = 0.1;
  // Drop keyframes and text as separate events instead of one joint event.
  bool independent_drop = false;
  double gamma = 2.0;
  int steps = 10;
  int anchor_padding = 8;
  Integrator integrator = Integrator::kEuler;

  void validate() const;
};

nlohmann::json to_json(const FlowConfig& cfg);
FlowConfig flow_config_from_json(const nlohmann::json& doc);
std::string to_string(Integrator integrator);
Integrator integrator_from_string(const std::string& name);

// ---- path, control signal and losses (T x d matrices) ----

Mat make_path(const Mat& x1, const Mat& x0, double t);

struct ControlSignal {
  Mat c;
  KeyframeMask mask;
  double t = 0.0;
};
ControlSignal make_control(const Mat& x1, const Mat& x_t, const KeyframeMask& mask, double t = 0.0);
Mat target_field(const Mat& x1, const Mat& c);

struct LossGrad {
  double value = 0.0;
  Mat dv;
};
LossGrad loss_cfm(const Mat& v, const Mat& x1, const Mat& c);
LossGrad loss_recon(const Mat& v, const Mat& x_t, const Mat& x1, double t);
LossGrad loss_vel(const Mat& v, const Mat& x_t, const Mat& x1, double t);

struct LossParts {
  double cfm = 0.0;
  double recon = 0.0;
  double vel = 0.0;
};
double loss_total(const LossParts& parts, const FlowConfig& cfg);

Mat cfg_field(const Mat& v_cond, const Mat& v_uncond, double gamma);

// ---- conditioning ----

// Language names DGS, BSL, ASL, CSL map to 0..3; decimal ids are accepted too.
int parse_lang(const std::string& text);
// Whitespace-separated gloss ids, written "12" or "g12".
std::vector<int> parse_gloss(const std::string& text);

struct TextCondition {
  std::vector<int> gloss_tokens;
  int lang_token = 0;
};

struct ModelConfig {
  int hidden = 64;
  int text_dim = 64;
  int time_dim = 32;
  int vocab = 50;
  int num_langs = 4;
  int attn_max_distance = 32;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

// Per-channel nets; a frame's input is [control, anchor interpolation, anchor difference (d each),
// mask indicator, phase, span, timestep embedding, text embedding]. The net outputs a gain and an
// offset per coordinate; the pose estimate is interp + gain * diff + offset and the field is that
// estimate minus the control signal.
struct FlowModel {
  ModelConfig config;
  std::array<nn::NetSpec, 2> specs;
  std::array<nn::Vector, 2> params;
  // Rows: glosses [0, vocab), languages [vocab, vocab + num_langs), then the null row.
  Mat embed;

  static FlowModel create(const ModelConfig& cfg);
  int null_row() const { return config.vocab + config.num_langs; }
  std::size_t param_count() const;
};

// Per-joint SLERP between consecutive anchor rows of c (held before the first and after the last),
// the next-minus-previous anchor difference, the phase in [0, 1) and the gap length / 32.
// All zero without anchors. Throws DegenerateRotation for anchor rows that are not valid 6D poses.
struct AnchorPrior {
  Mat interp;
  Mat diff;
  Eigen::VectorXd phase;
  Eigen::VectorXd span;
};
AnchorPrior anchor_prior(const Mat& c, const KeyframeMask& mask);

nn::NetSpec channel_spec(const ModelConfig& cfg, int channel_dim);
Eigen::VectorXd timestep_embedding(double t, int width);
// Rows of the embedding table averaged for a condition (language row first); the null row for nullopt.
std::vector<int> text_rows(const FlowModel& model, const std::optional<TextCondition>& text);
Eigen::VectorXd text_embedding(const FlowModel& model, const std::optional<TextCondition>& text);

// Field prediction on a full T x 246 control signal.
Mat predict_field(const FlowModel& model, const Mat& c, const KeyframeMask& mask, double t,
                  const std::optional<TextCondition>& text);

// ---- training ----

struct TrainExample {
  Mat x1;  // T x 246
  KeyframeMask mask;
  TextCondition text;
};

struct ModelGrad {
  std::array<nn::Vector, 2> params;
  Mat embed;
};

struct ExampleResult {
  LossParts parts;
  double total = 0.0;
  ModelGrad grad;
};

// Loss and gradient for one example at fixed (t, x0, drop decisions). Public for gradient checks.
ExampleResult example_loss(const FlowModel& model, const TrainExample& ex, double t, const Mat& x0, bool drop_mask,
                           bool drop_text, const FlowConfig& cfg, bool with_grad = true);

struct StepStats {
  LossParts parts;
  double total = 0.0;
  double grad_norm = 0.0;
};

class Trainer {
 public:
  Trainer(FlowModel& model, FlowConfig cfg, double lr, std::uint64_t seed, double clip = 1.0);

  // One Adam step on the batch. Throws EmptyBatch.
  StepStats step(const std::vector<TrainExample>& batch);
  void set_lr(double lr);

  // Conditioning counters: examples that kept their keyframes / text, and drop events.
  long conditional_count() const { return cond_count_; }
  long drop_count() const { return drop_count_; }

 private:
  FlowModel& model_;
  FlowConfig cfg_;
  double clip_;
  Rng rng_;
  std::array<nn::AdamState, 3> adam_;
  long cond_count_ = 0;
  long drop_count_ = 0;
};

// ---- sampling ----

struct SampleRequest {
  KeyframeMask mask;
  Mat anchors;  // T x 246; rows where mask is true are the anchors
  std::optional<TextCondition> text;
  int steps = 10;
  double gamma = 2.0;
  Integrator integrator = Integrator::kEuler;
  std::uint64_t seed = 0;
};

// Anchor rows of the result equal the request's anchor rows exactly. Throws AnchorMissing when
// a mask-true row holds non-finite values and StepsInvalid for steps < 1.
Mat sample(const FlowModel& model, const SampleRequest& req);
MotionSequence sample_sequence(const FlowModel& model, const SampleRequest& req, float fps);

// Retrieval-style padding: anchors are taken in consecutive triples (onset, mid, offset); each
// triple's onset pose is held over the `pad` frames before it and its offset pose over the
// `pad` frames after it. Frames claimed by two triples go to the nearer one; frames between a
// triple's onset and offset are left alone.
void pad_anchors(KeyframeMask& mask, Mat& anchors, int pad);

// ---- checkpoints ----

// Directory with manifest.json plus body.spkw, hands.spkw and embed.spkw.
void save_model(const FlowModel& model, const FlowConfig& cfg, const std::filesystem::path& dir);
FlowModel load_model(const std::filesystem::path& dir, FlowConfig* cfg = nullptr);

Mat to_mat(const MotionSequence& seq);
MotionSequence from_mat(const Mat& m, float fps);

}  // namespace keyflow::cfm
