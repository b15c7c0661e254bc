#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "keyflow/cfm.hpp"
#include "keyflow/metrics.hpp"
#include "keyflow/synth.hpp"

namespace keyflow {

enum class AnchorPolicy { kSegments, kRandom };

AnchorPolicy policy_from_string(const std::string& name);
std::string to_string(AnchorPolicy policy);

// Segments: the item's onset/mid/offset mask. Random: the same number of distinct frames
// drawn uniformly (sorted), so both policies spend the same anchor budget.
KeyframeMask policy_mask(const CorpusItem& item, AnchorPolicy policy, Rng& rng);

struct FlowTrainOptions {
  int iterations = 3000;
  int batch = 8;
  int crop = 64;
  double lr = 2e-3;
  double lr_final = 2e-4;  // cosine decay target
  double clip = 1.0;
  std::uint64_t seed = 1;
  AnchorPolicy policy = AnchorPolicy::kSegments;
  // Called every `log_every` iterations with (iteration, running mean total loss).
  int log_every = 0;
  std::function<void(int, double)> on_log;
};

struct FlowTrainReport {
  std::vector<double> loss_curve;  // mean total loss per logged window, or per iteration when log_every == 0
  double seconds = 0.0;
};

FlowTrainReport train_flow(cfm::FlowModel& model, const cfm::FlowConfig& cfg,
                           const std::vector<const CorpusItem*>& items, const FlowTrainOptions& opts);

struct Kf2pScore {
  DtwJpe model;
  DtwJpe slerp;
  int n_items = 0;
};

struct EvalOptions {
  int steps = 10;
  double gamma = 2.0;
  cfm::Integrator integrator = cfm::Integrator::kEuler;
  AnchorPolicy policy = AnchorPolicy::kSegments;
  bool use_text = true;
  bool with_slerp = true;
  std::uint64_t seed = 1;
};

// Mean DTW-JPE over items of the sampled in-betweens (and of the SLERP baseline on the same anchors).
Kf2pScore evaluate_kf2p(const cfm::FlowModel& model, const std::vector<const CorpusItem*>& items,
                        const EvalOptions& opts);

}  // namespace keyflow
