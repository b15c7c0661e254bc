#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "keyflow/motion.hpp"

namespace keyflow {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SynthConfig {
  int lexicon_size = 50;
  IntRange signs_per_sentence{3, 8};
  IntRange sign_len{8, 20};
  IntRange coart_len{3, 6};
  int num_languages = 2;
  std::uint64_t seed = 1;
  int num_items = 300;
  float fps = 25.0f;
  double body_max_deg = 60.0;
  double finger_max_deg = 90.0;
  // Peak of the out-of-geodesic swing added inside signs (0 keeps pure eased SLERP).
  double arc_deg = 0.0;
};

void validate(const SynthConfig& cfg);
nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& doc);

// A lexicon entry: onset, mid and offset anchor poses (flattened, single precision).
struct SignDef {
  std::array<std::vector<float>, 3> anchors;
};

struct Lexicon {
  std::vector<std::vector<SignDef>> languages;
  // Per-joint swing axes (local frame) shared by every sign; used when arc_deg > 0.
  std::vector<Eigen::Vector3d> arc_axes;
};

struct CorpusItem {
  MotionSequence seq;
  LabelSidecar labels;
  std::vector<int> anchor_frames;
};

struct SyntheticCorpus {
  SynthConfig config;
  Lexicon lexicon;
  std::vector<CorpusItem> items;
};

// Deterministic in cfg.seed. The lexicon stream is seeded with seed ^ kLexiconStream,
// item i with seed ^ i, so items can be produced in any order or thread count.
SyntheticCorpus synth_generate(const SynthConfig& cfg);
CorpusItem synth_item(const SynthConfig& cfg, const Lexicon& lexicon, int index);
Lexicon synth_lexicon(const SynthConfig& cfg);

inline constexpr std::uint64_t kLexiconStream = 0x9e3779b97f4a7c15ULL;

// Corpus directory: corpus.json manifest plus item_NNNNN.sprk / item_NNNNN.json pairs.
void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
std::vector<CorpusItem> load_corpus_items(const std::filesystem::path& dir);

// Items [0, n - holdout) train, the rest are held out.
struct CorpusSplit {
  std::vector<const CorpusItem*> train;
  std::vector<const CorpusItem*> held_out;
};
CorpusSplit split_corpus(const std::vector<CorpusItem>& items, int holdout);

double smoothstep(double s);

}  // namespace keyflow
