#include "keyflow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "keyflow/baselines.hpp"
#include "keyflow/error.hpp"
#include "keyflow/parallel.hpp"

namespace keyflow {

AnchorPolicy policy_from_string(const std::string& name) {
  if (name == "segments" || name == "segment") return AnchorPolicy::kSegments;
  if (name == "random") return AnchorPolicy::kRandom;
  fail(ErrorCode::kConfigInvalid, "unknown keyframe policy '" + name + "'");
}

std::string to_string(AnchorPolicy policy) { return policy == AnchorPolicy::kSegments ? "segments" : "random"; }

KeyframeMask policy_mask(const CorpusItem& item, AnchorPolicy policy, Rng& rng) {
  if (policy == AnchorPolicy::kSegments) return item.labels.mask;
  const int frames = item.seq.length();
  const int budget = static_cast<int>(std::count(item.labels.mask.begin(), item.labels.mask.end(), true));
  // Partial Fisher-Yates over frame indices.
  std::vector<int> idx(frames);
  for (int f = 0; f < frames; ++f) idx[f] = f;
  KeyframeMask mask(frames, false);
  for (int k = 0; k < budget && k < frames; ++k) {
    const int j = rng.uniform_int(k, frames - 1);
    std::swap(idx[k], idx[j]);
    mask[idx[k]] = true;
  }
  return mask;
}

FlowTrainReport train_flow(cfm::FlowModel& model, const cfm::FlowConfig& cfg,
                           const std::vector<const CorpusItem*>& items, const FlowTrainOptions& opts) {
  if (items.empty()) fail(ErrorCode::kEmptyCorpus, "no training items");
  if (opts.iterations < 0 || opts.batch < 1 || opts.crop < 2) fail(ErrorCode::kConfigInvalid, "bad training options");
  const auto start = std::chrono::steady_clock::now();
  cfm::Trainer trainer(model, cfg, opts.lr, opts.seed ^ 0x5bd1e995ULL, opts.clip);
  Rng rng(opts.seed);
  FlowTrainReport report;
  double window = 0.0;
  int window_n = 0;
  for (int it = 0; it < opts.iterations; ++it) {
    std::vector<cfm::TrainExample> batch;
    batch.reserve(opts.batch);
    for (int b = 0; b < opts.batch; ++b) {
      const CorpusItem& item = *items[rng.uniform_int(0, static_cast<int>(items.size()) - 1)];
      const KeyframeMask full_mask = policy_mask(item, opts.policy, rng);
      const int frames = item.seq.length();
      const int len = std::min(frames, opts.crop);
      const int off = frames > len ? rng.uniform_int(0, frames - len) : 0;
      cfm::TrainExample ex;
      ex.x1 = item.seq.frames.middleRows(off, len).cast<double>();
      ex.mask.assign(full_mask.begin() + off, full_mask.begin() + off + len);
      ex.text = {item.labels.gloss_tokens, item.labels.lang_token};
      batch.push_back(std::move(ex));
    }
    const double progress = opts.iterations > 1 ? static_cast<double>(it) / (opts.iterations - 1) : 1.0;
    const double lr = opts.lr_final + 0.5 * (opts.lr - opts.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
    trainer.set_lr(lr);
    const cfm::StepStats stats = trainer.step(batch);
    if (opts.log_every <= 0) {
      report.loss_curve.push_back(stats.total);
      continue;
    }
    window += stats.total;
    ++window_n;
    if ((it + 1) % opts.log_every == 0) {
      report.loss_curve.push_back(window / window_n);
      if (opts.on_log) opts.on_log(it + 1, window / window_n);
      window = 0.0;
      window_n = 0;
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Kf2pScore evaluate_kf2p(const cfm::FlowModel& model, const std::vector<const CorpusItem*>& items,
                        const EvalOptions& opts) {
  if (items.empty()) fail(ErrorCode::kEmptyCorpus, "no evaluation items");
  const SkeletonDef skel = default_skeleton();
  std::vector<DtwJpe> model_scores(items.size());
  std::vector<DtwJpe> slerp_scores(items.size());
  std::vector<KeyframeMask> masks(items.size());
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < items.size(); ++i) masks[i] = policy_mask(*items[i], opts.policy, rng);

  parallel_for(items.size(), [&](std::size_t i) {
    const CorpusItem& item = *items[i];
    cfm::SampleRequest req;
    req.mask = masks[i];
    req.anchors = cfm::to_mat(item.seq);
    // Only anchor rows may reach the sampler.
    for (int f = 0; f < item.seq.length(); ++f) {
      if (!req.mask[f]) req.anchors.row(f).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    if (opts.use_text) req.text = cfm::TextCondition{item.labels.gloss_tokens, item.labels.lang_token};
    req.steps = opts.steps;
    req.gamma = opts.gamma;
    req.integrator = opts.integrator;
    req.seed = opts.seed ^ (static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL);
    const MotionSequence gen = cfm::sample_sequence(model, req, item.seq.fps);
    model_scores[i] = dtw_jpe(gen, item.seq, skel);
    if (opts.with_slerp) slerp_scores[i] = dtw_jpe(slerp_inbetween(masks[i], item.seq), item.seq, skel);
  });

  Kf2pScore s;
  s.n_items = static_cast<int>(items.size());
  const double inv = 1.0 / static_cast<double>(items.size());
  auto accumulate = [inv](DtwJpe& acc, const DtwJpe& x) {
    acc.unaligned.body += x.unaligned.body * inv;
    acc.unaligned.hand += x.unaligned.hand * inv;
    acc.aligned.body += x.aligned.body * inv;
    acc.aligned.hand += x.aligned.hand * inv;
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    accumulate(s.model, model_scores[i]);
    accumulate(s.slerp, slerp_scores[i]);
  }
  return s;
}

}  // namespace keyflow
