#include "keyflow/segment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/parallel.hpp"

namespace keyflow::seg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Mat log_softmax_rows(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const double m = z.row(t).maxCoeff();
    const double lse = m + std::log((z.row(t).array() - m).exp().sum());
    out.row(t) = z.row(t).array() - lse;
  }
  return out;
}

}  // namespace

HandFeatures hand_features(const MotionSequence& seq) {
  HandFeatures f;
  f.left = seq.frames.middleCols(kLeftHandOffset, kHandDim).cast<double>();
  f.right = seq.frames.middleCols(kRightHandOffset, kHandDim).cast<double>();
  return f;
}

nlohmann::json to_json(const FastConfig& cfg) {
  return {{"hidden", cfg.hidden}, {"attn_max_distance", cfg.attn_max_distance}, {"seed", cfg.seed}};
}

FastConfig fast_config_from_json(const nlohmann::json& doc) {
  FastConfig cfg;
  try {
    cfg.hidden = doc.value("hidden", cfg.hidden);
    cfg.attn_max_distance = doc.value("attn_max_distance", cfg.attn_max_distance);
    cfg.seed = doc.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, std::string("fast config: ") + e.what());
  }
  if (cfg.hidden < 1 || cfg.attn_max_distance < 1) fail(ErrorCode::kConfigInvalid, "fast config out of range");
  return cfg;
}

FastModel FastModel::create(const FastConfig& cfg) {
  using nn::Activation;
  const int h = cfg.hidden;
  FastModel m;
  m.config = cfg;
  m.stream = nn::NetSpec{{nn::Dense{kHandDim, h, Activation::kGELU}, nn::TemporalConv{h, h, Activation::kGELU},
                          nn::TemporalConv{h, h, Activation::kGELU}}};
  m.mixer = nn::NetSpec{{nn::TemporalConv{2 * h, h, Activation::kGELU}, nn::SelfAttention{h, cfg.attn_max_distance},
                         nn::Dense{h, h, Activation::kGELU}, nn::Dense{h, 3, Activation::kNone}}};
  Rng rng(cfg.seed);
  m.left = nn::init_params(m.stream, rng);
  m.right = nn::init_params(m.stream, rng);
  m.mix = nn::init_params(m.mixer, rng);
  return m;
}

std::size_t FastModel::param_count() const {
  return static_cast<std::size_t>(left.size() + right.size() + mix.size());
}

namespace {

struct FastPass {
  nn::ForwardResult left, right, mix;
};

FastPass fast_pass(const FastModel& model, const HandFeatures& feats) {
  if (feats.left.rows() != feats.right.rows() || feats.left.cols() != kHandDim || feats.right.cols() != kHandDim) {
    fail(ErrorCode::kShapeMismatch, "hand features must be two T x 90 matrices");
  }
  if (feats.left.rows() < 1) fail(ErrorCode::kShapeMismatch, "hand features are empty");
  FastPass p;
  p.left = nn::net_forward(model.stream, model.left, feats.left);
  p.right = nn::net_forward(model.stream, model.right, feats.right);
  Mat both(feats.left.rows(), 2 * model.config.hidden);
  both << p.left.y, p.right.y;
  p.mix = nn::net_forward(model.mixer, model.mix, both);
  return p;
}

}  // namespace

Mat fast_forward(const FastModel& model, const HandFeatures& feats) { return fast_pass(model, feats).mix.y; }

Mat softmax_rows(const Mat& logits) { return log_softmax_rows(logits).array().exp(); }

std::vector<int> repair_bio(std::vector<int> labels) {
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == kI && (t == 0 || labels[t - 1] == kO)) labels[t] = kB;
  }
  return labels;
}

std::vector<Segment> segments_from_labels(const std::vector<int>& labels) {
  std::vector<Segment> out;
  const int n = static_cast<int>(labels.size());
  for (int t = 0; t < n; ++t) {
    if (labels[t] != kB) continue;
    int end = t;
    while (end + 1 < n && labels[end + 1] == kI) ++end;
    out.push_back({t, end});
  }
  return out;
}

Decoded bio_decode(const Mat& probs) {
  if (probs.cols() != 3) fail(ErrorCode::kShapeMismatch, "probabilities must have three columns");
  std::vector<int> labels(probs.rows());
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    if (!probs.row(t).allFinite() || probs.row(t).minCoeff() < 0.0 || std::abs(probs.row(t).sum() - 1.0) > 1e-6) {
      fail(ErrorCode::kNotNormalized, "row " + std::to_string(t) + " is not a probability distribution");
    }
    Eigen::Index k = 0;
    probs.row(t).maxCoeff(&k);
    labels[t] = static_cast<int>(k);
  }
  Decoded d;
  d.labels = repair_bio(std::move(labels));
  d.segments = segments_from_labels(d.labels);
  return d;
}

KeyframeMask select_keyframes(const std::vector<Segment>& segments, int length) {
  KeyframeMask mask(std::max(length, 0), false);
  for (const auto& s : segments) {
    if (s.start < 0 || s.end < s.start || s.end >= length) {
      fail(ErrorCode::kParameterOutOfRange, "segment outside the sequence");
    }
    mask[s.start] = true;
    mask[(s.start + s.end) / 2] = true;
    mask[s.end] = true;
  }
  return mask;
}

CtcResult ctc_loss(const Mat& logits, int target_len) {
  if (logits.cols() != 2) fail(ErrorCode::kShapeMismatch, "CTC logits must have two columns");
  const int frames = static_cast<int>(logits.rows());
  if (target_len < 0) fail(ErrorCode::kParameterOutOfRange, "negative target length");
  if (frames < 1 || frames < 2 * target_len - 1) {
    fail(ErrorCode::kInfeasibleTarget,
         "T=" + std::to_string(frames) + " cannot hold " + std::to_string(target_len) + " separated tokens");
  }
  const int states = 2 * target_len + 1;  // blank, SIGN, blank, ..., blank
  const Mat logy = log_softmax_rows(logits);
  auto emit = [&](int t, int s) { return logy(t, s % 2); };

  Mat alpha = Mat::Constant(frames, states, kNegInf);
  alpha(0, 0) = emit(0, 0);
  if (states > 1) alpha(0, 1) = emit(0, 1);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      double a = alpha(t - 1, s);
      if (s > 0) a = logaddexp(a, alpha(t - 1, s - 1));
      // Identical consecutive tokens forbid the s-2 skip.
      if (a != kNegInf) alpha(t, s) = a + emit(t, s);
    }
  }
  Mat beta = Mat::Constant(frames, states, kNegInf);
  beta(frames - 1, states - 1) = emit(frames - 1, states - 1);
  if (states > 1) beta(frames - 1, states - 2) = emit(frames - 1, states - 2);
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < states; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < states) b = logaddexp(b, beta(t + 1, s + 1));
      if (b != kNegInf) beta(t, s) = b + emit(t, s);
    }
  }
  double log_p = alpha(frames - 1, states - 1);
  if (states > 1) log_p = logaddexp(log_p, alpha(frames - 1, states - 2));

  CtcResult r;
  r.loss = -log_p;
  r.dlogits = logy.array().exp();
  for (int t = 0; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      const double lo = alpha(t, s) + beta(t, s);
      if (lo == kNegInf) continue;
      r.dlogits(t, s % 2) -= std::exp(lo - emit(t, s) - log_p);
    }
  }
  return r;
}

FastLoss fast_loss(const FastModel& model, const HandFeatures& feats, const std::vector<int>& labels,
                   double lambda_ctc, bool with_grad) {
  const FastPass pass = fast_pass(model, feats);
  const Mat& z = pass.mix.y;
  const int frames = static_cast<int>(z.rows());
  if (static_cast<int>(labels.size()) != frames) fail(ErrorCode::kLengthMismatch, "labels differ from T");

  FastLoss out;
  const Mat logp = log_softmax_rows(z);
  Mat dz = logp.array().exp();
  for (int t = 0; t < frames; ++t) {
    out.ce -= logp(t, labels[t]);
    dz(t, labels[t]) -= 1.0;
  }
  out.ce /= frames;
  dz /= frames;

  // CTC over {blank = O, SIGN = logsumexp(I, B)}.
  const int target = static_cast<int>(segments_from_labels(labels).size());
  if (lambda_ctc > 0.0 && frames >= 2 * target - 1) {
    Mat collapsed(frames, 2);
    Mat share(frames, 2);  // softmax over (I, B)
    for (int t = 0; t < frames; ++t) {
      const double m = std::max(z(t, kI), z(t, kB));
      const double ei = std::exp(z(t, kI) - m);
      const double eb = std::exp(z(t, kB) - m);
      collapsed(t, 0) = z(t, kO);
      collapsed(t, 1) = m + std::log(ei + eb);
      share(t, 0) = ei / (ei + eb);
      share(t, 1) = eb / (ei + eb);
    }
    const CtcResult ctc = ctc_loss(collapsed, target);
    out.ctc = ctc.loss;
    for (int t = 0; t < frames; ++t) {
      dz(t, kO) += lambda_ctc * ctc.dlogits(t, 0);
      dz(t, kI) += lambda_ctc * ctc.dlogits(t, 1) * share(t, 0);
      dz(t, kB) += lambda_ctc * ctc.dlogits(t, 1) * share(t, 1);
    }
  }
  out.total = out.ce + lambda_ctc * out.ctc;
  if (!with_grad) return out;

  const nn::BackwardResult bm = nn::net_backward(model.mixer, model.mix, pass.mix.cache, dz);
  const int h = model.config.hidden;
  out.d_mix = bm.dparams;
  out.d_left = nn::net_backward(model.stream, model.left, pass.left.cache, bm.dx.leftCols(h)).dparams;
  out.d_right = nn::net_backward(model.stream, model.right, pass.right.cache, bm.dx.rightCols(h)).dparams;
  return out;
}

namespace {

struct Example {
  HandFeatures feats;
  std::vector<int> labels;
};

// Random crop of at least min_crop frames, then independent frame drops; labels are repaired
// afterwards because a crop or a drop can remove a B.
Example augment(const HandFeatures& full, const std::vector<int>& labels, const FastTrainOptions& opts, Rng& rng) {
  const int frames = static_cast<int>(labels.size());
  const int lo = std::min(opts.min_crop, frames);
  const int len = rng.uniform_int(lo, frames);
  const int off = rng.uniform_int(0, frames - len);
  std::vector<int> keep;
  for (int t = off; t < off + len; ++t) {
    if (!rng.bernoulli(opts.frame_drop)) keep.push_back(t);
  }
  if (keep.empty()) keep.push_back(off);
  Example ex;
  ex.feats.left.resize(static_cast<Eigen::Index>(keep.size()), kHandDim);
  ex.feats.right.resize(static_cast<Eigen::Index>(keep.size()), kHandDim);
  std::vector<int> kept;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    ex.feats.left.row(static_cast<Eigen::Index>(i)) = full.left.row(keep[i]);
    ex.feats.right.row(static_cast<Eigen::Index>(i)) = full.right.row(keep[i]);
    kept.push_back(labels[keep[i]]);
  }
  ex.labels = repair_bio(std::move(kept));
  return ex;
}

}  // namespace

FastTrainReport train_fast(FastModel& model, const std::vector<const CorpusItem*>& items,
                           const FastTrainOptions& opts) {
  if (items.empty()) fail(ErrorCode::kEmptyCorpus, "no training items");
  if (opts.epochs < 0 || opts.batch < 1 || opts.min_crop < 1) fail(ErrorCode::kConfigInvalid, "bad training options");
  const auto start = std::chrono::steady_clock::now();
  std::vector<HandFeatures> feats(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) feats[i] = hand_features(items[i]->seq);

  Rng rng(opts.seed);
  std::array<nn::AdamState, 3> adam{nn::AdamState::for_params(model.left.size(), opts.lr),
                                    nn::AdamState::for_params(model.right.size(), opts.lr),
                                    nn::AdamState::for_params(model.mix.size(), opts.lr)};
  FastTrainReport report;
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opts.batch) {
      const std::size_t n = std::min<std::size_t>(opts.batch, order.size() - b0);
      std::vector<Example> batch;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = order[b0 + k];
        batch.push_back(augment(feats[idx], items[idx]->labels.bio, opts, rng));
      }
      std::vector<FastLoss> losses(n);
      parallel_for(n, [&](std::size_t k) {
        losses[k] = fast_loss(model, batch[k].feats, batch[k].labels, opts.lambda_ctc);
      });
      nn::Vector gl = nn::Vector::Zero(model.left.size());
      nn::Vector gr = nn::Vector::Zero(model.right.size());
      nn::Vector gm = nn::Vector::Zero(model.mix.size());
      for (const auto& l : losses) {
        gl += l.d_left / static_cast<double>(n);
        gr += l.d_right / static_cast<double>(n);
        gm += l.d_mix / static_cast<double>(n);
        epoch_loss += l.total;
      }
      const double norm = std::sqrt(gl.squaredNorm() + gr.squaredNorm() + gm.squaredNorm());
      if (opts.clip > 0.0 && norm > opts.clip) {
        const double s = opts.clip / norm;
        gl *= s;
        gr *= s;
        gm *= s;
      }
      nn::adam_step(model.left, gl, adam[0]);
      nn::adam_step(model.right, gr, adam[1]);
      nn::adam_step(model.mix, gm, adam[2]);
    }
    report.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    if (opts.on_epoch) opts.on_epoch(epoch + 1, report.loss_curve.back());
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void SegCounts::add(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) fail(ErrorCode::kLengthMismatch, "prediction and ground truth differ in length");
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t] < 0 || pred[t] > 2 || gt[t] < 0 || gt[t] > 2) {
      fail(ErrorCode::kParameterOutOfRange, "BIO label out of range");
    }
    confusion(gt[t], pred[t]) += 1.0;
    const bool p_in = pred[t] != kO;
    const bool g_in = gt[t] != kO;
    inter += (p_in && g_in) ? 1 : 0;
    uni += (p_in || g_in) ? 1 : 0;
  }
  pred_segments += static_cast<long>(segments_from_labels(pred).size());
  gt_segments += static_cast<long>(segments_from_labels(gt).size());
}

SegMetrics finalize(const SegCounts& c) {
  SegMetrics m;
  double f1_sum = 0.0;
  int classes = 0;
  for (int k = 0; k < 3; ++k) {
    const double tp = c.confusion(k, k);
    const double gt_k = c.confusion.row(k).sum();
    const double pred_k = c.confusion.col(k).sum();
    if (gt_k == 0.0 && pred_k == 0.0) continue;
    f1_sum += 2.0 * tp / (gt_k + pred_k);
    ++classes;
  }
  m.f1 = classes > 0 ? f1_sum / classes : 1.0;
  m.iou = c.uni > 0 ? static_cast<double>(c.inter) / static_cast<double>(c.uni) : 1.0;
  if (c.gt_segments == 0) {
    m.sr = c.pred_segments == 0 ? 1.0 : std::numeric_limits<double>::infinity();
    m.sr_infinite = c.pred_segments != 0;
  } else {
    m.sr = static_cast<double>(c.pred_segments) / static_cast<double>(c.gt_segments);
  }
  return m;
}

SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& gt) {
  SegCounts c;
  c.add(pred, gt);
  return finalize(c);
}

void save_fast(const FastModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + dir.string());
  nn::save_checkpoint(dir / "left.spkw", model.stream.hash(), model.left);
  nn::save_checkpoint(dir / "right.spkw", model.stream.hash(), model.right);
  nn::save_checkpoint(dir / "mixer.spkw", model.mixer.hash(), model.mix);
  const nlohmann::json manifest = {{"v", 1},
                                   {"kind", "fast"},
                                   {"config", to_json(model.config)},
                                   {"stream", nn::to_json(model.stream)},
                                   {"mixer", nn::to_json(model.mixer)},
                                   {"files", {{"left", "left.spkw"}, {"right", "right.spkw"}, {"mixer", "mixer.spkw"}}}};
  write_json(dir / "manifest.json", manifest);
}

FastModel load_fast(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  if (!manifest.is_object() || manifest.value("v", 0) != 1 || manifest.value("kind", "") != "fast") {
    fail(ErrorCode::kSchemaError, "not a segmentation model manifest");
  }
  FastModel m = FastModel::create(fast_config_from_json(manifest.at("config")));
  if (nn::net_spec_from_json(manifest.at("stream")).hash() != m.stream.hash() ||
      nn::net_spec_from_json(manifest.at("mixer")).hash() != m.mixer.hash()) {
    fail(ErrorCode::kFormatError, "network spec in manifest does not match the model config");
  }
  m.left = nn::load_checkpoint(dir / "left.spkw", m.stream.hash());
  m.right = nn::load_checkpoint(dir / "right.spkw", m.stream.hash());
  m.mix = nn::load_checkpoint(dir / "mixer.spkw", m.mixer.hash());
  return m;
}

Decoded segment_sequence(const FastModel& model, const MotionSequence& seq) {
  return bio_decode(softmax_rows(fast_forward(model, hand_features(seq))));
}

}  // namespace keyflow::seg
