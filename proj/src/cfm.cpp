#include "keyflow/cfm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/parallel.hpp"
#include "keyflow/rotmath.hpp"

namespace keyflow::cfm {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) fail(ErrorCode::kShapeMismatch, what);
}

void require_t(double t) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::kParameterOutOfRange, "t must lie in [0, 1]");
}

}  // namespace

void FlowConfig::validate() const {
  if (!(lambda_cfm >= 0.0 && lambda_recon >= 0.0 && lambda_vel >= 0.0)) {
    fail(ErrorCode::kConfigInvalid, "loss weights must be non-negative");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorCode::kConfigInvalid, "rho must lie in [0, 1]");
  if (!(gamma >= 0.0)) fail(ErrorCode::kConfigInvalid, "gamma must be non-negative");
  if (steps < 1) fail(ErrorCode::kStepsInvalid, "steps must be at least 1");
  if (anchor_padding < 0) fail(ErrorCode::kConfigInvalid, "anchor_padding must be non-negative");
}

std::string to_string(Integrator integrator) {
  return integrator == Integrator::kEuler ? "euler" : "residual";
}

Integrator integrator_from_string(const std::string& name) {
  if (name == "euler") return Integrator::kEuler;
  if (name == "residual") return Integrator::kResidual;
  fail(ErrorCode::kConfigInvalid, "unknown integrator '" + name + "'");
}

nlohmann::json to_json(const FlowConfig& cfg) {
  return {{"lambda", {cfg.lambda_cfm, cfg.lambda_recon, cfg.lambda_vel}},
          {"rho", cfg.rho},
          {"independent_drop", cfg.independent_drop},
          {"gamma", cfg.gamma},
          {"steps", cfg.steps},
          {"anchor_padding", cfg.anchor_padding},
          {"integrator", to_string(cfg.integrator)}};
}

FlowConfig flow_config_from_json(const nlohmann::json& doc) {
  FlowConfig cfg;
  try {
    if (doc.contains("lambda")) {
      const auto& l = doc.at("lambda");
      if (!l.is_array() || l.size() != 3) fail(ErrorCode::kSchemaError, "lambda must hold three weights");
      cfg.lambda_cfm = l[0].get<double>();
      cfg.lambda_recon = l[1].get<double>();
      cfg.lambda_vel = l[2].get<double>();
    }
    cfg.rho = doc.value("rho", cfg.rho);
    cfg.independent_drop = doc.value("independent_drop", cfg.independent_drop);
    cfg.gamma = doc.value("gamma", cfg.gamma);
    cfg.steps = doc.value("steps", cfg.steps);
    cfg.anchor_padding = doc.value("anchor_padding", cfg.anchor_padding);
    cfg.integrator = integrator_from_string(doc.value("integrator", std::string("euler")));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, std::string("flow config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- path, control, losses ----

Mat make_path(const Mat& x1, const Mat& x0, double t) {
  require_same_shape(x1, x0, "x1 and x0 differ in shape");
  require_t(t);
  return t * x1 + (1.0 - t) * x0;
}

ControlSignal make_control(const Mat& x1, const Mat& x_t, const KeyframeMask& mask, double t) {
  require_same_shape(x1, x_t, "x1 and x_t differ in shape");
  if (static_cast<Eigen::Index>(mask.size()) != x1.rows()) fail(ErrorCode::kShapeMismatch, "mask length differs from T");
  ControlSignal c{x_t, mask, t};
  for (Eigen::Index f = 0; f < x1.rows(); ++f) {
    if (mask[f]) c.c.row(f) = x1.row(f);
  }
  return c;
}

Mat target_field(const Mat& x1, const Mat& c) {
  require_same_shape(x1, c, "x1 and C differ in shape");
  return x1 - c;
}

LossGrad loss_cfm(const Mat& v, const Mat& x1, const Mat& c) {
  require_same_shape(v, x1, "v and x1 differ in shape");
  const Mat diff = v - target_field(x1, c);
  const double n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

LossGrad loss_recon(const Mat& v, const Mat& x_t, const Mat& x1, double t) {
  require_same_shape(v, x1, "v and x1 differ in shape");
  require_same_shape(x_t, x1, "x_t and x1 differ in shape");
  require_t(t);
  const Mat err = x_t + (1.0 - t) * v - x1;
  const double n = static_cast<double>(err.size());
  return {err.squaredNorm() / n, (2.0 * (1.0 - t) / n) * err};
}

LossGrad loss_vel(const Mat& v, const Mat& x_t, const Mat& x1, double t) {
  require_same_shape(v, x1, "v and x1 differ in shape");
  require_same_shape(x_t, x1, "x_t and x1 differ in shape");
  require_t(t);
  const Eigen::Index frames = x1.rows();
  if (frames < 2) fail(ErrorCode::kTooShort, "velocity loss needs at least two frames");
  const Mat err = x_t + (1.0 - t) * v - x1;
  const Mat d = err.bottomRows(frames - 1) - err.topRows(frames - 1);
  const double n = static_cast<double>(d.size());
  Mat de = Mat::Zero(err.rows(), err.cols());
  de.bottomRows(frames - 1) += d;
  de.topRows(frames - 1) -= d;
  return {d.squaredNorm() / n, (2.0 * (1.0 - t) / n) * de};
}

double loss_total(const LossParts& parts, const FlowConfig& cfg) {
  return cfg.lambda_cfm * parts.cfm + cfg.lambda_recon * parts.recon + cfg.lambda_vel * parts.vel;
}

Mat cfg_field(const Mat& v_cond, const Mat& v_uncond, double gamma) {
  require_same_shape(v_cond, v_uncond, "guidance fields differ in shape");
  if (!(gamma >= 0.0)) fail(ErrorCode::kParameterOutOfRange, "gamma must be non-negative");
  if (gamma == 1.0) return v_cond;
  if (gamma == 0.0) return v_uncond;
  return v_uncond + gamma * (v_cond - v_uncond);
}

// ---- conditioning ----

int parse_lang(const std::string& text) {
  static const char* const kNames[] = {"DGS", "BSL", "ASL", "CSL"};
  std::string upper = text;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
  for (int i = 0; i < 4; ++i) {
    if (upper == kNames[i]) return i;
  }
  if (!text.empty() && std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
    return std::stoi(text);
  }
  fail(ErrorCode::kParameterOutOfRange, "unknown language '" + text + "'");
}

std::vector<int> parse_gloss(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::string digits = tok;
    if (!digits.empty() && (digits[0] == 'g' || digits[0] == 'G')) digits.erase(0, 1);
    if (digits.empty() ||
        !std::all_of(digits.begin(), digits.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
      fail(ErrorCode::kParameterOutOfRange, "bad gloss token '" + tok + "'");
    }
    out.push_back(std::stoi(digits));
  }
  return out;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"hidden", cfg.hidden},       {"text_dim", cfg.text_dim},   {"time_dim", cfg.time_dim},
          {"vocab", cfg.vocab},         {"num_langs", cfg.num_langs}, {"attn_max_distance", cfg.attn_max_distance},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig cfg;
  try {
    cfg.hidden = doc.value("hidden", cfg.hidden);
    cfg.text_dim = doc.value("text_dim", cfg.text_dim);
    cfg.time_dim = doc.value("time_dim", cfg.time_dim);
    cfg.vocab = doc.value("vocab", cfg.vocab);
    cfg.num_langs = doc.value("num_langs", cfg.num_langs);
    cfg.attn_max_distance = doc.value("attn_max_distance", cfg.attn_max_distance);
    cfg.seed = doc.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, std::string("model config: ") + e.what());
  }
  if (cfg.hidden < 1 || cfg.text_dim < 1 || cfg.time_dim < 2 || cfg.time_dim % 2 != 0 || cfg.vocab < 1 ||
      cfg.num_langs < 1 || cfg.attn_max_distance < 1) {
    fail(ErrorCode::kConfigInvalid, "model config out of range");
  }
  return cfg;
}

nn::NetSpec channel_spec(const ModelConfig& cfg, int channel_dim) {
  using nn::Activation;
  const int in = 3 * channel_dim + 3 + cfg.time_dim + cfg.text_dim;
  const int h = cfg.hidden;
  return nn::NetSpec{{
      nn::Dense{in, h, Activation::kGELU},
      nn::TemporalConv{h, h, Activation::kGELU},
      nn::TemporalConv{h, h, Activation::kGELU},
      nn::SelfAttention{h, cfg.attn_max_distance},
      nn::TemporalConv{h, h, Activation::kGELU},
      nn::SelfAttention{h, cfg.attn_max_distance},
      nn::Dense{h, h, Activation::kGELU},
      nn::Dense{h, 2 * channel_dim, Activation::kNone},
  }};
}

FlowModel FlowModel::create(const ModelConfig& cfg) {
  FlowModel m;
  m.config = cfg;
  Rng rng(cfg.seed);
  for (std::size_t c = 0; c < kChannels.size(); ++c) {
    m.specs[c] = channel_spec(cfg, kChannels[c].dim);
    m.params[c] = nn::init_params(m.specs[c], rng);
  }
  m.embed = Mat(cfg.vocab + cfg.num_langs + 1, cfg.text_dim);
  for (Eigen::Index i = 0; i < m.embed.size(); ++i) m.embed.data()[i] = 0.1 * rng.normal();
  return m;
}

std::size_t FlowModel::param_count() const {
  return static_cast<std::size_t>(params[0].size() + params[1].size() + embed.size());
}

Eigen::VectorXd timestep_embedding(double t, int width) {
  const int half = width / 2;
  Eigen::VectorXd e(width);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(1000.0 * t * freq);
    e[half + k] = std::cos(1000.0 * t * freq);
  }
  return e;
}

std::vector<int> text_rows(const FlowModel& model, const std::optional<TextCondition>& text) {
  if (!text) return {model.null_row()};
  const auto& cfg = model.config;
  if (text->lang_token < 0 || text->lang_token >= cfg.num_langs) {
    fail(ErrorCode::kParameterOutOfRange, "language token out of range");
  }
  std::vector<int> rows{cfg.vocab + text->lang_token};
  for (int g : text->gloss_tokens) {
    if (g < 0 || g >= cfg.vocab) fail(ErrorCode::kParameterOutOfRange, "gloss token out of range");
    rows.push_back(g);
  }
  return rows;
}

Eigen::VectorXd text_embedding(const FlowModel& model, const std::optional<TextCondition>& text) {
  const auto rows = text_rows(model, text);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(model.config.text_dim);
  for (int r : rows) z += model.embed.row(r).transpose();
  return z / static_cast<double>(rows.size());
}

namespace {

AnchorPrior anchor_prior_impl(const Mat& c, const KeyframeMask& mask) {
  const Eigen::Index frames = c.rows();
  AnchorPrior p;
  p.interp = Mat::Zero(frames, c.cols());
  p.diff = Mat::Zero(frames, c.cols());
  p.phase = Eigen::VectorXd::Zero(frames);
  p.span = Eigen::VectorXd::Zero(frames);
  std::vector<Eigen::Index> keys;
  for (Eigen::Index f = 0; f < frames; ++f) {
    if (mask[f]) keys.push_back(f);
  }
  if (keys.empty()) return p;
  std::size_t k = 0;
  for (Eigen::Index f = 0; f < frames; ++f) {
    while (k + 1 < keys.size() && keys[k + 1] <= f) ++k;
    if (f < keys.front()) {
      p.interp.row(f) = c.row(keys.front());
    } else if (k + 1 == keys.size()) {
      p.interp.row(f) = c.row(keys.back());
    } else {
      const Eigen::Index a = keys[k];
      const Eigen::Index b = keys[k + 1];
      const double s = static_cast<double>(f - a) / static_cast<double>(b - a);
      for (int j = 0; j < kNumJoints; ++j) {
        Rot6D ra;
        Rot6D rb;
        for (int k = 0; k < 6; ++k) {
          ra[k] = c(a, 6 * j + k);
          rb[k] = c(b, 6 * j + k);
        }
        const Rot6D r = slerp_rot6d(ra, rb, s);
        for (int k = 0; k < 6; ++k) p.interp(f, 6 * j + k) = r[k];
      }
      p.diff.row(f) = c.row(b) - c.row(a);
      p.phase[f] = s;
      p.span[f] = static_cast<double>(b - a) / 32.0;
    }
  }
  return p;
}

nn::Tensor2 channel_input(const FlowModel& model, int ch, const Mat& c, const KeyframeMask& mask,
                          const AnchorPrior& prior, const Eigen::VectorXd& temb, const Eigen::VectorXd& z) {
  const Channel& chan = kChannels[ch];
  const Eigen::Index frames = c.rows();
  const int d = chan.dim;
  const int tdim = model.config.time_dim;
  nn::Tensor2 x(frames, 3 * d + 3 + tdim + z.size());
  x.leftCols(d) = c.middleCols(chan.offset, d);
  x.middleCols(d, d) = prior.interp.middleCols(chan.offset, d);
  x.middleCols(2 * d, d) = prior.diff.middleCols(chan.offset, d);
  for (Eigen::Index f = 0; f < frames; ++f) x(f, 3 * d) = mask[f] ? 1.0 : 0.0;
  x.col(3 * d + 1) = prior.phase;
  x.col(3 * d + 2) = prior.span;
  x.middleCols(3 * d + 3, tdim).rowwise() = temb.transpose();
  x.rightCols(z.size()).rowwise() = z.transpose();
  return x;
}

// Net output [gain | offset]: estimate = interp + gain * diff + offset, field = estimate - C.
Mat channel_field(int ch, const nn::Tensor2& y, const Mat& c, const AnchorPrior& prior) {
  const Channel& chan = kChannels[ch];
  const int d = chan.dim;
  return prior.interp.middleCols(chan.offset, d) + y.leftCols(d).cwiseProduct(prior.diff.middleCols(chan.offset, d)) +
         y.rightCols(d) - c.middleCols(chan.offset, d);
}

nn::Tensor2 channel_output_grad(int ch, const AnchorPrior& prior, const Mat& dv) {
  const Channel& chan = kChannels[ch];
  nn::Tensor2 dy(dv.rows(), 2 * chan.dim);
  dy.leftCols(chan.dim) = dv.cwiseProduct(prior.diff.middleCols(chan.offset, chan.dim));
  dy.rightCols(chan.dim) = dv;
  return dy;
}

void check_request_shape(const Mat& c, const KeyframeMask& mask) {
  if (c.cols() != kPoseDim) fail(ErrorCode::kShapeMismatch, "control signal must have 246 columns");
  if (static_cast<Eigen::Index>(mask.size()) != c.rows()) fail(ErrorCode::kShapeMismatch, "mask length differs from T");
  if (c.rows() < 1) fail(ErrorCode::kShapeMismatch, "empty control signal");
}

}  // namespace

AnchorPrior anchor_prior(const Mat& c, const KeyframeMask& mask) {
  check_request_shape(c, mask);
  return anchor_prior_impl(c, mask);
}

Mat predict_field(const FlowModel& model, const Mat& c, const KeyframeMask& mask, double t,
                  const std::optional<TextCondition>& text) {
  check_request_shape(c, mask);
  const Eigen::VectorXd temb = timestep_embedding(t, model.config.time_dim);
  const Eigen::VectorXd z = text_embedding(model, text);
  const AnchorPrior prior = anchor_prior_impl(c, mask);
  Mat v(c.rows(), kPoseDim);
  for (int ch = 0; ch < 2; ++ch) {
    const auto& chan = kChannels[ch];
    const nn::Tensor2 y = nn::net_apply(model.specs[ch], model.params[ch], channel_input(model, ch, c, mask, prior, temb, z));
    v.middleCols(chan.offset, chan.dim) = channel_field(ch, y, c, prior);
  }
  return v;
}

// ---- training ----

ExampleResult example_loss(const FlowModel& model, const TrainExample& ex, double t, const Mat& x0, bool drop_mask,
                           bool drop_text, const FlowConfig& cfg, bool with_grad) {
  check_request_shape(ex.x1, ex.mask);
  const KeyframeMask mask = drop_mask ? KeyframeMask(ex.mask.size(), false) : ex.mask;
  const std::optional<TextCondition> text = drop_text ? std::nullopt : std::optional<TextCondition>(ex.text);

  const Mat x_t = make_path(ex.x1, x0, t);
  const ControlSignal control = make_control(ex.x1, x_t, mask, t);
  const Eigen::VectorXd temb = timestep_embedding(t, model.config.time_dim);
  const auto rows = text_rows(model, text);
  const Eigen::VectorXd z = text_embedding(model, text);

  const AnchorPrior prior = anchor_prior_impl(control.c, mask);
  Mat v(ex.x1.rows(), kPoseDim);
  std::array<nn::ForwardResult, 2> fwd;
  for (int ch = 0; ch < 2; ++ch) {
    const auto& chan = kChannels[ch];
    fwd[ch] = nn::net_forward(model.specs[ch], model.params[ch],
                              channel_input(model, ch, control.c, mask, prior, temb, z));
    v.middleCols(chan.offset, chan.dim) = channel_field(ch, fwd[ch].y, control.c, prior);
  }

  ExampleResult r;
  const LossGrad lc = loss_cfm(v, ex.x1, control.c);
  const LossGrad lr = loss_recon(v, x_t, ex.x1, t);
  const LossGrad lv = loss_vel(v, x_t, ex.x1, t);
  r.parts = {lc.value, lr.value, lv.value};
  r.total = loss_total(r.parts, cfg);
  if (!with_grad) return r;

  const Mat dv = cfg.lambda_cfm * lc.dv + cfg.lambda_recon * lr.dv + cfg.lambda_vel * lv.dv;
  r.grad.embed = Mat::Zero(model.embed.rows(), model.embed.cols());
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(z.size());
  for (int ch = 0; ch < 2; ++ch) {
    const auto& chan = kChannels[ch];
    const nn::Tensor2 dy = channel_output_grad(ch, prior, dv.middleCols(chan.offset, chan.dim));
    const nn::BackwardResult b = nn::net_backward(model.specs[ch], model.params[ch], fwd[ch].cache, dy);
    r.grad.params[ch] = b.dparams;
    dz += b.dx.rightCols(z.size()).colwise().sum().transpose();
  }
  for (int row : rows) r.grad.embed.row(row) += dz.transpose() / static_cast<double>(rows.size());
  return r;
}

Trainer::Trainer(FlowModel& model, FlowConfig cfg, double lr, std::uint64_t seed, double clip)
    : model_(model), cfg_(cfg), clip_(clip), rng_(seed) {
  cfg_.validate();
  adam_[0] = nn::AdamState::for_params(model.params[0].size(), lr);
  adam_[1] = nn::AdamState::for_params(model.params[1].size(), lr);
  adam_[2] = nn::AdamState::for_params(model.embed.size(), lr);
}

void Trainer::set_lr(double lr) {
  for (auto& a : adam_) a.lr = lr;
}

StepStats Trainer::step(const std::vector<TrainExample>& batch) {
  if (batch.empty()) fail(ErrorCode::kEmptyBatch, "training batch is empty");
  const std::size_t n = batch.size();

  // Random draws happen serially so results do not depend on the worker count.
  std::vector<double> ts(n);
  std::vector<Mat> x0s(n);
  std::vector<char> drop_mask(n), drop_text(n);
  for (std::size_t i = 0; i < n; ++i) {
    ts[i] = rng_.uniform();
    x0s[i] = Mat(batch[i].x1.rows(), batch[i].x1.cols());
    for (Eigen::Index k = 0; k < x0s[i].size(); ++k) x0s[i].data()[k] = rng_.normal();
    if (cfg_.independent_drop) {
      drop_mask[i] = rng_.bernoulli(cfg_.rho);
      drop_text[i] = rng_.bernoulli(cfg_.rho);
    } else {
      drop_mask[i] = drop_text[i] = rng_.bernoulli(cfg_.rho);
    }
    if (drop_mask[i] || drop_text[i]) ++drop_count_;
    if (!drop_mask[i] && !drop_text[i]) ++cond_count_;
  }

  std::vector<ExampleResult> results(n);
  parallel_for(n, [&](std::size_t i) {
    results[i] = example_loss(model_, batch[i], ts[i], x0s[i], drop_mask[i], drop_text[i], cfg_);
  });

  StepStats stats;
  std::array<nn::Vector, 3> grads{nn::Vector::Zero(model_.params[0].size()),
                                  nn::Vector::Zero(model_.params[1].size()), nn::Vector::Zero(model_.embed.size())};
  const double inv = 1.0 / static_cast<double>(n);
  for (const auto& r : results) {
    stats.parts.cfm += r.parts.cfm * inv;
    stats.parts.recon += r.parts.recon * inv;
    stats.parts.vel += r.parts.vel * inv;
    stats.total += r.total * inv;
    grads[0] += r.grad.params[0] * inv;
    grads[1] += r.grad.params[1] * inv;
    grads[2] += Eigen::Map<const nn::Vector>(r.grad.embed.data(), r.grad.embed.size()) * inv;
  }
  const double norm = std::sqrt(grads[0].squaredNorm() + grads[1].squaredNorm() + grads[2].squaredNorm());
  stats.grad_norm = norm;
  if (clip_ > 0.0 && norm > clip_) {
    for (auto& g : grads) g *= clip_ / norm;
  }
  nn::adam_step(model_.params[0], grads[0], adam_[0]);
  nn::adam_step(model_.params[1], grads[1], adam_[1]);
  nn::Vector flat = Eigen::Map<const nn::Vector>(model_.embed.data(), model_.embed.size());
  nn::adam_step(flat, grads[2], adam_[2]);
  Eigen::Map<nn::Vector>(model_.embed.data(), model_.embed.size()) = flat;
  return stats;
}

// ---- sampling ----

Mat sample(const FlowModel& model, const SampleRequest& req) {
  if (req.steps < 1) fail(ErrorCode::kStepsInvalid, "steps must be at least 1");
  if (!(req.gamma >= 0.0)) fail(ErrorCode::kParameterOutOfRange, "gamma must be non-negative");
  const auto frames = static_cast<Eigen::Index>(req.mask.size());
  if (frames < 1) fail(ErrorCode::kShapeMismatch, "mask is empty");
  bool has_mask = false;
  for (Eigen::Index f = 0; f < frames; ++f) {
    if (!req.mask[f]) continue;
    has_mask = true;
    if (f >= req.anchors.rows() || req.anchors.cols() != kPoseDim || !req.anchors.row(f).allFinite()) {
      fail(ErrorCode::kAnchorMissing, "no anchor pose for keyframe " + std::to_string(f));
    }
  }

  Rng rng(req.seed);
  Mat x(frames, kPoseDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  auto clamp = [&] {
    for (Eigen::Index f = 0; f < frames; ++f) {
      if (req.mask[f]) x.row(f) = req.anchors.row(f);
    }
  };
  clamp();

  const KeyframeMask none(req.mask.size(), false);
  const bool single_cond = req.gamma == 1.0 || (!has_mask && !req.text);
  const double dt = 1.0 / req.steps;
  for (int k = 0; k < req.steps; ++k) {
    const double t = static_cast<double>(k) / req.steps;
    // Anchors are already written into x, so the control signal is x itself.
    Mat v;
    if (single_cond) {
      v = predict_field(model, x, req.mask, t, req.text);
    } else if (req.gamma == 0.0) {
      v = predict_field(model, x, none, t, std::nullopt);
    } else {
      v = cfg_field(predict_field(model, x, req.mask, t, req.text), predict_field(model, x, none, t, std::nullopt),
                    req.gamma);
    }
    const double scale = req.integrator == Integrator::kEuler ? dt : dt / (1.0 - t);
    x += scale * v;
    clamp();
  }
  return x;
}

MotionSequence sample_sequence(const FlowModel& model, const SampleRequest& req, float fps) {
  return from_mat(sample(model, req), fps);
}

void pad_anchors(KeyframeMask& mask, Mat& anchors, int pad) {
  if (pad < 0) fail(ErrorCode::kParameterOutOfRange, "padding must be non-negative");
  const int frames = static_cast<int>(mask.size());
  if (anchors.rows() != frames) fail(ErrorCode::kShapeMismatch, "anchors and mask differ in length");
  std::vector<int> keys;
  for (int f = 0; f < frames; ++f) {
    if (mask[f]) keys.push_back(f);
  }
  // Each padded frame records the distance to the anchor it copies so overlaps go to the nearer one.
  std::vector<int> owner_dist(frames, std::numeric_limits<int>::max());
  std::vector<int> source(frames, -1);
  // Frames inside a triple's own span are never padded.
  std::vector<char> inside(frames, 0);
  for (std::size_t g = 0; g < keys.size(); g += 3) {
    for (int f = keys[g]; f <= keys[std::min(g + 2, keys.size() - 1)]; ++f) inside[f] = 1;
  }
  for (std::size_t g = 0; g < keys.size(); g += 3) {
    const int onset = keys[g];
    const int offset = keys[std::min(g + 2, keys.size() - 1)];
    for (int d = 1; d <= pad; ++d) {
      for (const auto& [f, src] : {std::pair{onset - d, onset}, std::pair{offset + d, offset}}) {
        if (f < 0 || f >= frames || inside[f] || d >= owner_dist[f]) continue;
        owner_dist[f] = d;
        source[f] = src;
      }
    }
  }
  for (int f = 0; f < frames; ++f) {
    if (source[f] < 0) continue;
    anchors.row(f) = anchors.row(source[f]);
    mask[f] = true;
  }
}

// ---- checkpoints ----

namespace {

std::uint64_t embed_hash(const Mat& embed) {
  return nn::fnv1a64("embed:" + std::to_string(embed.rows()) + "x" + std::to_string(embed.cols()));
}

}  // namespace

void save_model(const FlowModel& model, const FlowConfig& cfg, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + dir.string());
  nlohmann::json manifest = {{"v", 1},
                             {"kind", "flow"},
                             {"model", to_json(model.config)},
                             {"flow", to_json(cfg)},
                             {"specs", nlohmann::json::array()},
                             {"files", {{"body", "body.spkw"}, {"hands", "hands.spkw"}, {"embed", "embed.spkw"}}}};
  for (int ch = 0; ch < 2; ++ch) {
    manifest["specs"].push_back(nn::to_json(model.specs[ch]));
    nn::save_checkpoint(dir / (std::string(kChannels[ch].name) + ".spkw"), model.specs[ch].hash(), model.params[ch]);
  }
  const Mat row_major = model.embed;
  nn::Vector flat = Eigen::Map<const nn::Vector>(row_major.data(), row_major.size());
  nn::save_checkpoint(dir / "embed.spkw", embed_hash(model.embed), flat);
  write_json(dir / "manifest.json", manifest);
}

FlowModel load_model(const std::filesystem::path& dir, FlowConfig* cfg) {
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  if (!manifest.is_object() || manifest.value("v", 0) != 1 || manifest.value("kind", "") != "flow") {
    fail(ErrorCode::kSchemaError, "not a flow model manifest");
  }
  FlowModel m = FlowModel::create(model_config_from_json(manifest.at("model")));
  for (int ch = 0; ch < 2; ++ch) {
    if (nn::net_spec_from_json(manifest.at("specs").at(ch)).hash() != m.specs[ch].hash()) {
      fail(ErrorCode::kFormatError, "network spec in manifest does not match the model config");
    }
    m.params[ch] = nn::load_checkpoint(dir / (std::string(kChannels[ch].name) + ".spkw"), m.specs[ch].hash());
  }
  const nn::Vector flat = nn::load_checkpoint(dir / "embed.spkw", embed_hash(m.embed));
  if (flat.size() != m.embed.size()) fail(ErrorCode::kFormatError, "embedding table has the wrong size");
  m.embed = Eigen::Map<const Mat>(flat.data(), m.embed.rows(), m.embed.cols());
  if (cfg) *cfg = flow_config_from_json(manifest.value("flow", nlohmann::json::object()));
  return m;
}

Mat to_mat(const MotionSequence& seq) { return seq.frames.cast<double>(); }

MotionSequence from_mat(const Mat& m, float fps) {
  if (m.cols() != kPoseDim) fail(ErrorCode::kShapeMismatch, "pose matrix must have 246 columns");
  MotionSequence seq;
  seq.frames = m.cast<float>();
  seq.fps = fps;
  return seq;
}

}  // namespace keyflow::cfm
