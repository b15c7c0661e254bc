#include "keyflow/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/parallel.hpp"
#include "keyflow/random.hpp"

namespace keyflow {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

bool valid_range(const IntRange& r) { return r.lo >= 0 && r.lo <= r.hi; }

Eigen::Vector3d random_axis(Rng& rng) {
  Eigen::Vector3d a;
  do {
    a = {rng.normal(), rng.normal(), rng.normal()};
  } while (a.norm() < 1e-6);
  return a.normalized();
}

std::vector<float> random_pose(Rng& rng, const SynthConfig& cfg) {
  std::vector<float> v(kPoseDim);
  for (int j = 0; j < kNumJoints; ++j) {
    const double max_angle = (j < kBodyJoints ? cfg.body_max_deg : cfg.finger_max_deg) * kDeg;
    const Eigen::Vector3d axis = random_axis(rng);
    const double angle = rng.uniform(0.0, max_angle);
    const Rot6D r = matrix_to_rot6d(axis_angle_to_matrix(axis * angle));
    for (int k = 0; k < 6; ++k) v[6 * j + k] = static_cast<float>(r[k]);
  }
  return v;
}

using PoseMatrices = std::array<RotMatrix, kNumJoints>;

PoseMatrices to_matrices(const std::vector<float>& pose) {
  PoseMatrices m;
  for (int j = 0; j < kNumJoints; ++j) {
    Rot6D r;
    for (int k = 0; k < 6; ++k) r[k] = pose[6 * j + k];
    m[j] = rot6d_to_matrix(r);
  }
  return m;
}

// Per-joint slerp from a to b at parameter t, optionally swung about a fixed
// local axis by `swing` radians, written into row f.
void write_blend(FrameMatrix& frames, int f, const PoseMatrices& a, const PoseMatrices& b, double t,
                 const std::vector<Eigen::Vector3d>& axes, double swing) {
  for (int j = 0; j < kNumJoints; ++j) {
    RotMatrix m = quat_to_matrix(quat_slerp(matrix_to_quat(a[j]), matrix_to_quat(b[j]), t));
    if (swing != 0.0) m = m * axis_angle_to_matrix(axes[j] * swing);
    const Rot6D r = matrix_to_rot6d(m);
    for (int k = 0; k < 6; ++k) frames(f, 6 * j + k) = static_cast<float>(r[k]);
  }
}

void write_pose(FrameMatrix& frames, int f, const std::vector<float>& pose) {
  for (int k = 0; k < kPoseDim; ++k) frames(f, k) = pose[k];
}

}  // namespace

double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

void validate(const SynthConfig& cfg) {
  if (cfg.lexicon_size < 1) fail(ErrorCode::kConfigInvalid, "lexicon_size must be >= 1");
  if (cfg.num_languages < 1) fail(ErrorCode::kConfigInvalid, "num_languages must be >= 1");
  if (cfg.num_items < 0) fail(ErrorCode::kConfigInvalid, "num_items must be >= 0");
  if (!valid_range(cfg.signs_per_sentence) || cfg.signs_per_sentence.lo < 1) {
    fail(ErrorCode::kConfigInvalid, "signs_per_sentence must be a non-empty range >= 1");
  }
  // Onset, mid and offset must be distinct frames.
  if (!valid_range(cfg.sign_len) || cfg.sign_len.lo < 3) {
    fail(ErrorCode::kConfigInvalid, "sign_len must be a non-empty range >= 3");
  }
  if (!valid_range(cfg.coart_len) || cfg.coart_len.lo < 1) {
    fail(ErrorCode::kConfigInvalid, "coart_len must be a non-empty range >= 1");
  }
  if (!(cfg.fps > 0.0f)) fail(ErrorCode::kConfigInvalid, "fps must be positive");
  if (!(cfg.body_max_deg >= 0.0 && cfg.finger_max_deg >= 0.0 && cfg.arc_deg >= 0.0)) {
    fail(ErrorCode::kConfigInvalid, "angles must be non-negative");
  }
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"lexicon_size", cfg.lexicon_size},
          {"signs_per_sentence", {cfg.signs_per_sentence.lo, cfg.signs_per_sentence.hi}},
          {"sign_len", {cfg.sign_len.lo, cfg.sign_len.hi}},
          {"coart_len", {cfg.coart_len.lo, cfg.coart_len.hi}},
          {"num_languages", cfg.num_languages},
          {"seed", cfg.seed},
          {"num_items", cfg.num_items},
          {"fps", cfg.fps},
          {"body_max_deg", cfg.body_max_deg},
          {"finger_max_deg", cfg.finger_max_deg},
          {"arc_deg", cfg.arc_deg}};
}

SynthConfig synth_config_from_json(const nlohmann::json& doc) {
  SynthConfig cfg;
  auto range = [&](const char* key, IntRange& r) {
    if (!doc.contains(key)) return;
    const auto& v = doc.at(key);
    if (!v.is_array() || v.size() != 2) fail(ErrorCode::kConfigInvalid, std::string(key) + " must be [lo, hi]");
    r = {v.at(0).get<int>(), v.at(1).get<int>()};
  };
  try {
    if (!doc.is_object()) fail(ErrorCode::kConfigInvalid, "config must be a JSON object");
    cfg.lexicon_size = doc.value("lexicon_size", cfg.lexicon_size);
    range("signs_per_sentence", cfg.signs_per_sentence);
    range("sign_len", cfg.sign_len);
    range("coart_len", cfg.coart_len);
    cfg.num_languages = doc.value("num_languages", cfg.num_languages);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.num_items = doc.value("num_items", cfg.num_items);
    cfg.fps = doc.value("fps", cfg.fps);
    cfg.body_max_deg = doc.value("body_max_deg", cfg.body_max_deg);
    cfg.finger_max_deg = doc.value("finger_max_deg", cfg.finger_max_deg);
    cfg.arc_deg = doc.value("arc_deg", cfg.arc_deg);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfigInvalid, e.what());
  }
  validate(cfg);
  return cfg;
}

Lexicon synth_lexicon(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed ^ kLexiconStream);
  Lexicon lex;
  for (int j = 0; j < kNumJoints; ++j) lex.arc_axes.push_back(random_axis(rng));
  lex.languages.resize(cfg.num_languages);
  for (auto& signs : lex.languages) {
    signs.resize(cfg.lexicon_size);
    for (auto& sign : signs) {
      for (auto& anchor : sign.anchors) anchor = random_pose(rng, cfg);
    }
  }
  return lex;
}

CorpusItem synth_item(const SynthConfig& cfg, const Lexicon& lexicon, int index) {
  Rng rng(cfg.seed ^ static_cast<std::uint64_t>(index));
  CorpusItem item;
  LabelSidecar& labels = item.labels;
  labels.lang_token = rng.uniform_int(0, cfg.num_languages - 1);
  const auto& signs = lexicon.languages[labels.lang_token];

  const int n_signs = rng.uniform_int(cfg.signs_per_sentence.lo, cfg.signs_per_sentence.hi);
  std::vector<int> lengths(n_signs);
  std::vector<int> gaps(n_signs + 1);  // gaps[0] lead-in, gaps[n] tail, others coarticulation
  for (int k = 0; k < n_signs; ++k) {
    labels.gloss_tokens.push_back(rng.uniform_int(0, cfg.lexicon_size - 1));
    lengths[k] = rng.uniform_int(cfg.sign_len.lo, cfg.sign_len.hi);
  }
  for (int& g : gaps) g = rng.uniform_int(cfg.coart_len.lo, cfg.coart_len.hi);

  int total = 0;
  for (int k = 0; k < n_signs; ++k) total += lengths[k];
  for (int g : gaps) total += g;

  item.seq = MotionSequence::zeros(total, cfg.fps);
  labels.bio.assign(total, kO);
  labels.mask.assign(total, false);
  FrameMatrix& frames = item.seq.frames;
  const double arc = cfg.arc_deg * kDeg;

  int f = 0;
  const std::vector<float>* prev_offset = nullptr;
  for (int k = 0; k < n_signs; ++k) {
    const SignDef& sign = signs[labels.gloss_tokens[k]];
    const PoseMatrices on = to_matrices(sign.anchors[0]);
    const PoseMatrices mid = to_matrices(sign.anchors[1]);
    const PoseMatrices off = to_matrices(sign.anchors[2]);

    // Lead-in holds the first onset; coarticulation slerps offset -> onset at constant speed.
    const int gap = gaps[k];
    if (prev_offset == nullptr) {
      for (int i = 0; i < gap; ++i) write_pose(frames, f++, sign.anchors[0]);
    } else {
      const PoseMatrices from = to_matrices(*prev_offset);
      for (int i = 1; i <= gap; ++i) {
        write_blend(frames, f++, from, on, static_cast<double>(i) / (gap + 1), lexicon.arc_axes, 0.0);
      }
    }

    const int len = lengths[k];
    const int onset = f;
    const int mid_r = (len - 1) / 2;
    const int offset = onset + len - 1;
    for (int r = 0; r < len; ++r, ++f) {
      labels.bio[f] = r == 0 ? kB : kI;
      if (r == 0) {
        write_pose(frames, f, sign.anchors[0]);
      } else if (r == mid_r) {
        write_pose(frames, f, sign.anchors[1]);
      } else if (r == len - 1) {
        write_pose(frames, f, sign.anchors[2]);
      } else if (r < mid_r) {
        const double s = static_cast<double>(r) / mid_r;
        write_blend(frames, f, on, mid, smoothstep(s), lexicon.arc_axes, arc * std::sin(std::numbers::pi * s));
      } else {
        const double s = static_cast<double>(r - mid_r) / (len - 1 - mid_r);
        write_blend(frames, f, mid, off, smoothstep(s), lexicon.arc_axes, arc * std::sin(std::numbers::pi * s));
      }
    }
    for (int a : {onset, onset + mid_r, offset}) {
      if (item.anchor_frames.empty() || item.anchor_frames.back() != a) item.anchor_frames.push_back(a);
      labels.mask[a] = true;
    }
    prev_offset = &sign.anchors[2];
  }
  for (int i = 0; i < gaps[n_signs]; ++i) write_pose(frames, f++, *prev_offset);
  return item;
}

SyntheticCorpus synth_generate(const SynthConfig& cfg) {
  SyntheticCorpus corpus;
  corpus.config = cfg;
  corpus.lexicon = synth_lexicon(cfg);
  corpus.items.resize(cfg.num_items);
  parallel_for(corpus.items.size(), [&](std::size_t i) {
    corpus.items[i] = synth_item(cfg, corpus.lexicon, static_cast<int>(i));
  });
  return corpus;
}

namespace {
std::string item_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "item_%05zu", i);
  return buf;
}
}  // namespace

void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const auto& item = corpus.items[i];
    const std::string stem = item_stem(i);
    save_sprk(item.seq, dir / (stem + ".sprk"));
    save_sidecar(item.labels, dir / (stem + ".json"));
    items.push_back({{"id", static_cast<int>(i)},
                     {"sprk", stem + ".sprk"},
                     {"labels", stem + ".json"},
                     {"anchor_frames", item.anchor_frames}});
  }
  write_json(dir / "corpus.json", {{"v", 1}, {"config", to_json(corpus.config)}, {"items", items}});
}

std::vector<CorpusItem> load_corpus_items(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_json(dir / "corpus.json");
  std::vector<CorpusItem> items;
  try {
    for (const auto& entry : manifest.at("items")) {
      CorpusItem item;
      item.seq = load_sprk(dir / entry.at("sprk").get<std::string>());
      item.labels = load_sidecar(dir / entry.at("labels").get<std::string>());
      validate_pair(item.seq, item.labels);
      if (entry.contains("anchor_frames")) {
        item.anchor_frames = entry.at("anchor_frames").get<std::vector<int>>();
      } else {
        for (int f = 0; f < item.seq.length(); ++f) {
          if (item.labels.mask[f]) item.anchor_frames.push_back(f);
        }
      }
      items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, e.what());
  }
  return items;
}

CorpusSplit split_corpus(const std::vector<CorpusItem>& items, int holdout) {
  CorpusSplit split;
  const int n = static_cast<int>(items.size());
  const int cut = std::max(0, n - holdout);
  for (int i = 0; i < n; ++i) (i < cut ? split.train : split.held_out).push_back(&items[i]);
  return split;
}

}  // namespace keyflow
