#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

// Keep above httplib.h (<resolv.h> defines _res).
#include "keyflow/baselines.hpp"
#include "keyflow/cfm.hpp"
#include "keyflow/error.hpp"
#include "keyflow/metrics.hpp"
#include "keyflow/motion.hpp"
#include "keyflow/pipeline.hpp"
#include "keyflow/segment.hpp"
#include "keyflow/service.hpp"
#include "keyflow/synth.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace keyflow;

namespace {

bool g_verbose = false;

void log(const std::string& msg) {
  if (g_verbose) std::cerr << msg << "\n";
}

void emit(const json& doc, const std::string& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    write_json(out, doc);
  }
}

json mask_json(const KeyframeMask& mask) {
  json m = json::array();
  for (bool b : mask) m.push_back(b ? 1 : 0);
  return m;
}

std::vector<int> mask_frames(const KeyframeMask& mask) {
  std::vector<int> out;
  for (std::size_t f = 0; f < mask.size(); ++f) {
    if (mask[f]) out.push_back(static_cast<int>(f));
  }
  return out;
}

KeyframeMask mask_from_json(const json& doc) {
  const json& m = doc.is_object() ? doc.at("mask") : doc;
  if (!m.is_array()) fail(ErrorCode::kSchemaError, "mask must be an array");
  KeyframeMask mask;
  for (const auto& x : m) {
    if (x.is_boolean()) {
      mask.push_back(x.get<bool>());
    } else if (x.is_number_integer() && (x.get<int>() == 0 || x.get<int>() == 1)) {
      mask.push_back(x.get<int>() == 1);
    } else {
      fail(ErrorCode::kSchemaError, "mask entries must be 0/1 or booleans");
    }
  }
  return mask;
}

json score_json(const DtwJpe& s) {
  return {{"dtw_jpe", {{"body", s.unaligned.body}, {"hand", s.unaligned.hand}}},
          {"dtw_pa_jpe", {{"body", s.aligned.body}, {"hand", s.aligned.hand}}}};
}

std::vector<double> parse_lambda(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorCode::kConfigInvalid, "--lambda expects three comma-separated numbers");
    }
  }
  if (out.size() != 3) fail(ErrorCode::kConfigInvalid, "--lambda expects three comma-separated numbers");
  return out;
}

struct Corpus {
  std::vector<CorpusItem> items;
  CorpusSplit split;
};

Corpus load_split(const std::string& dir, int holdout) {
  Corpus c;
  c.items = load_corpus_items(dir);
  if (c.items.empty()) fail(ErrorCode::kEmptyCorpus, "no items in " + dir);
  if (holdout < 0 || holdout >= static_cast<int>(c.items.size())) {
    fail(ErrorCode::kConfigInvalid, "--holdout must leave at least one training item");
  }
  c.split = split_corpus(c.items, holdout);
  return c;
}

// ---- flow training options shared by train-cfm and ablate ----

struct FlowArgs {
  std::string lambda = "2,1,1";
  double rho = 0.1;
  int hidden = 64;
  int iterations = 3000;
  int batch = 8;
  int crop = 64;
  double lr = 2e-3;
  std::string policy = "segments";
  std::string integrator = "residual";
  double gamma = 2.0;
  int steps = 10;
};

void add_flow_args(CLI::App* cmd, FlowArgs& a) {
  cmd->add_option("--lambda", a.lambda, "loss weights cfm,recon,vel")->capture_default_str();
  cmd->add_option("--rho", a.rho, "guidance drop probability")->capture_default_str();
  cmd->add_option("--hidden", a.hidden, "hidden width")->capture_default_str();
  cmd->add_option("--iterations", a.iterations, "optimizer steps")->capture_default_str();
  cmd->add_option("--batch", a.batch, "batch size")->capture_default_str();
  cmd->add_option("--crop", a.crop, "training crop length in frames")->capture_default_str();
  cmd->add_option("--lr", a.lr, "initial learning rate")->capture_default_str();
  cmd->add_option("--policy", a.policy, "keyframe policy: segments or random")->capture_default_str();
  cmd->add_option("--integrator", a.integrator, "sampler update: residual or euler")->capture_default_str();
  cmd->add_option("--gamma", a.gamma, "default guidance scale stored in the checkpoint")->capture_default_str();
  cmd->add_option("--steps", a.steps, "default sampling steps stored in the checkpoint")->capture_default_str();
}

cfm::FlowConfig flow_config(const FlowArgs& a) {
  cfm::FlowConfig cfg;
  const auto l = parse_lambda(a.lambda);
  cfg.lambda_cfm = l[0];
  cfg.lambda_recon = l[1];
  cfg.lambda_vel = l[2];
  cfg.rho = a.rho;
  cfg.gamma = a.gamma;
  cfg.steps = a.steps;
  cfg.integrator = cfm::integrator_from_string(a.integrator);
  cfg.validate();
  return cfg;
}

cfm::FlowModel train_flow_model(const FlowArgs& a, const cfm::FlowConfig& cfg, const std::vector<const CorpusItem*>& items,
                                std::uint64_t seed, json& report) {
  cfm::ModelConfig mc;
  mc.hidden = a.hidden;
  mc.seed = seed;
  cfm::FlowModel model = cfm::FlowModel::create(mc);
  FlowTrainOptions opts;
  opts.iterations = a.iterations;
  opts.batch = a.batch;
  opts.crop = a.crop;
  opts.lr = a.lr;
  opts.lr_final = a.lr / 10.0;
  opts.seed = seed;
  opts.policy = policy_from_string(a.policy);
  opts.log_every = std::max(1, a.iterations / 20);
  opts.on_log = [](int it, double loss) { log("iteration " + std::to_string(it) + " loss " + std::to_string(loss)); };
  const FlowTrainReport r = train_flow(model, cfg, items, opts);
  report = {{"iterations", a.iterations},
            {"seconds", r.seconds},
            {"loss_curve", r.loss_curve},
            {"params", model.param_count()},
            {"policy", a.policy},
            {"lambda", {cfg.lambda_cfm, cfg.lambda_recon, cfg.lambda_vel}}};
  return model;
}

json kf2p_json(const Kf2pScore& s, bool with_slerp) {
  json out = {{"n_items", s.n_items}, {"model", score_json(s.model)}};
  if (with_slerp) out["slerp"] = score_json(s.slerp);
  return out;
}

// ---- commands ----

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> items;
  std::optional<double> arc;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = synth_config_from_json(read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.items) cfg.num_items = *a.items;
  if (a.arc) cfg.arc_deg = *a.arc;
  validate(cfg);
  const SyntheticCorpus corpus = synth_generate(cfg);
  save_corpus(corpus, a.out);
  long frames = 0;
  long signs = 0;
  for (const auto& it : corpus.items) {
    frames += it.seq.length();
    signs += static_cast<long>(it.labels.gloss_tokens.size());
  }
  emit({{"out", a.out},
        {"items", corpus.items.size()},
        {"frames", frames},
        {"signs", signs},
        {"languages", cfg.num_languages},
        {"seed", cfg.seed}},
       "");
  return 0;
}

struct TrainSegArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  int epochs = 30;
  int hidden = 32;
  double lr = 3e-3;
  int holdout = 0;
};

int run_train_seg(const TrainSegArgs& a) {
  const Corpus c = load_split(a.data, a.holdout);
  seg::FastConfig fc;
  fc.hidden = a.hidden;
  fc.seed = a.seed;
  seg::FastModel model = seg::FastModel::create(fc);
  seg::FastTrainOptions opts;
  opts.epochs = a.epochs;
  opts.lr = a.lr;
  opts.seed = a.seed;
  opts.on_epoch = [](int e, double loss) { log("epoch " + std::to_string(e) + " loss " + std::to_string(loss)); };
  const seg::FastTrainReport r = seg::train_fast(model, c.split.train, opts);
  seg::save_fast(model, a.out);
  json report = {{"out", a.out},
                 {"epochs", a.epochs},
                 {"seconds", r.seconds},
                 {"loss_curve", r.loss_curve},
                 {"params", model.param_count()},
                 {"train_items", c.split.train.size()}};
  if (!c.split.held_out.empty()) {
    seg::SegCounts counts;
    for (const auto* it : c.split.held_out) counts.add(seg::segment_sequence(model, it->seq).labels, it->labels.bio);
    const seg::SegMetrics m = seg::finalize(counts);
    report["held_out"] = {{"items", c.split.held_out.size()}, {"f1", m.f1}, {"iou", m.iou}, {"sr", m.sr}};
  }
  emit(report, "");
  return 0;
}

int run_segment(const std::string& model_dir, const std::string& in, const std::string& out) {
  const seg::FastModel model = seg::load_fast(model_dir);
  const MotionSequence seq = load_sprk(in);
  const seg::Decoded d = seg::segment_sequence(model, seq);
  json segs = json::array();
  for (const auto& s : d.segments) segs.push_back({s.start, s.end});
  emit({{"v", 1}, {"T", seq.length()}, {"bio", d.labels}, {"segments", segs}}, out);
  return 0;
}

int run_keyframes(const std::string& labels_path, const std::string& out) {
  const json doc = read_json(labels_path);
  if (!doc.is_object() || !doc.contains("bio") || !doc.at("bio").is_array()) {
    fail(ErrorCode::kSchemaError, "labels file needs a 'bio' array");
  }
  std::vector<int> bio;
  for (const auto& x : doc.at("bio")) {
    if (!x.is_number_integer() || x.get<int>() < 0 || x.get<int>() > 2) {
      fail(ErrorCode::kSchemaError, "bio entries must be 0, 1 or 2");
    }
    bio.push_back(x.get<int>());
  }
  const auto segments = seg::segments_from_labels(seg::repair_bio(bio));
  const KeyframeMask mask = seg::select_keyframes(segments, static_cast<int>(bio.size()));
  emit({{"v", 1}, {"mask", mask_json(mask)}, {"anchor_frames", mask_frames(mask)}}, out);
  return 0;
}

struct TrainCfmArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  int holdout = 0;
  int eval_items = 0;
  FlowArgs flow;
};

int run_train_cfm(const TrainCfmArgs& a) {
  const Corpus c = load_split(a.data, a.holdout);
  const cfm::FlowConfig cfg = flow_config(a.flow);
  json report;
  const cfm::FlowModel model = train_flow_model(a.flow, cfg, c.split.train, a.seed, report);
  cfm::save_model(model, cfg, a.out);
  report["out"] = a.out;
  report["train_items"] = c.split.train.size();
  if (!c.split.held_out.empty() && a.eval_items > 0) {
    const int n = std::min<int>(a.eval_items, static_cast<int>(c.split.held_out.size()));
    const std::vector<const CorpusItem*> ev(c.split.held_out.begin(), c.split.held_out.begin() + n);
    EvalOptions eo;
    eo.steps = cfg.steps;
    eo.gamma = cfg.gamma;
    eo.integrator = cfg.integrator;
    eo.seed = a.seed;
    report["held_out"] = kf2p_json(evaluate_kf2p(model, ev, eo), true);
  }
  emit(report, "");
  return 0;
}

struct SampleArgs {
  std::string ckpt;
  std::string mask;
  std::string anchors;
  std::string text;
  std::string lang = "DGS";
  std::optional<int> steps;
  std::optional<double> gamma;
  std::optional<std::string> integrator;
  std::string baseline;
  int pad = 0;
  int frames = 0;
  float fps = 25.0f;
  std::uint64_t seed = 0;
  std::string out;
};

int run_sample(const SampleArgs& a) {
  std::optional<MotionSequence> anchors;
  if (!a.anchors.empty()) anchors = load_sprk(a.anchors);
  KeyframeMask mask;
  if (!a.mask.empty()) {
    mask = mask_from_json(read_json(a.mask));
  } else if (anchors) {
    mask = KeyframeMask(anchors->length(), false);
  } else if (a.frames > 0) {
    mask = KeyframeMask(a.frames, false);
  } else {
    fail(ErrorCode::kConfigInvalid, "give --mask, --anchors or --frames to fix the sequence length");
  }
  const int frames = static_cast<int>(mask.size());
  if (frames < 1) fail(ErrorCode::kBadLength, "mask is empty");
  const float fps = anchors ? anchors->fps : a.fps;
  cfm::Mat anchor_rows = cfm::Mat::Constant(frames, kPoseDim, std::numeric_limits<double>::quiet_NaN());
  if (anchors) {
    if (anchors->length() != frames) fail(ErrorCode::kLengthMismatch, "anchors and mask differ in length");
    anchor_rows = cfm::to_mat(*anchors);
  }
  bool any = false;
  for (int f = 0; f < frames; ++f) any = any || mask[f];
  if (any && !anchors) fail(ErrorCode::kAnchorMissing, "mask selects frames but no --anchors were given");
  if (a.pad > 0) cfm::pad_anchors(mask, anchor_rows, a.pad);

  if (a.baseline == "slerp") {
    if (!anchors) fail(ErrorCode::kAnchorMissing, "the slerp baseline needs --anchors");
    save_sprk(slerp_inbetween(mask, cfm::from_mat(anchor_rows, fps)), a.out);
    emit({{"out", a.out}, {"T", frames}, {"baseline", "slerp"}, {"anchor_frames", mask_frames(mask)}}, "");
    return 0;
  }
  if (!a.baseline.empty()) fail(ErrorCode::kConfigInvalid, "unknown baseline '" + a.baseline + "'");
  if (a.ckpt.empty()) fail(ErrorCode::kConfigInvalid, "--ckpt is required unless --baseline is given");

  cfm::FlowConfig cfg;
  const cfm::FlowModel model = cfm::load_model(a.ckpt, &cfg);
  cfm::SampleRequest req;
  req.mask = mask;
  req.anchors = anchor_rows;
  if (!a.text.empty()) req.text = cfm::TextCondition{cfm::parse_gloss(a.text), cfm::parse_lang(a.lang)};
  req.steps = a.steps.value_or(cfg.steps);
  req.gamma = a.gamma.value_or(cfg.gamma);
  req.integrator = a.integrator ? cfm::integrator_from_string(*a.integrator) : cfg.integrator;
  req.seed = a.seed;
  save_sprk(cfm::sample_sequence(model, req, fps), a.out);
  emit({{"out", a.out},
        {"T", frames},
        {"steps", req.steps},
        {"gamma", req.gamma},
        {"integrator", cfm::to_string(req.integrator)},
        {"conditional", any || req.text.has_value()},
        {"anchor_frames", mask_frames(mask)}},
       "");
  return 0;
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& out) {
  const MotionSequence p = load_sprk(pred);
  const MotionSequence g = load_sprk(gt);
  json report = score_json(dtw_jpe(p, g, default_skeleton()));
  report["v"] = 1;
  report["T_pred"] = p.length();
  report["T_gt"] = g.length();
  emit(report, out);
  return 0;
}

struct AblateArgs {
  std::string suite;
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  int holdout = 50;
  int eval_items = 50;
  FlowArgs flow;
};

int run_ablate(const AblateArgs& a) {
  const Corpus c = load_split(a.data, a.holdout);
  if (c.split.held_out.empty()) fail(ErrorCode::kConfigInvalid, "ablations need --holdout > 0");
  const int n = std::min<int>(a.eval_items, static_cast<int>(c.split.held_out.size()));
  const std::vector<const CorpusItem*> ev(c.split.held_out.begin(), c.split.held_out.begin() + n);
  cfm::FlowConfig base = flow_config(a.flow);
  EvalOptions eo;
  eo.gamma = base.gamma;
  eo.integrator = base.integrator;
  eo.seed = a.seed;
  eo.with_slerp = false;
  json report = {{"v", 1}, {"suite", a.suite}, {"eval_items", n}, {"seed", a.seed}, {"rows", json::array()}};

  if (a.suite == "loss") {
    const std::vector<std::pair<std::string, std::array<double, 3>>> configs{{"cfm+recon+vel (2:1:1)", {2, 1, 1}},
                                                                             {"cfm only", {1, 0, 0}}};
    for (const auto& [name, w] : configs) {
      cfm::FlowConfig cfg = base;
      cfg.lambda_cfm = w[0];
      cfg.lambda_recon = w[1];
      cfg.lambda_vel = w[2];
      json train;
      const cfm::FlowModel model = train_flow_model(a.flow, cfg, c.split.train, a.seed, train);
      json row = {{"name", name}, {"lambda", w}, {"train_seconds", train["seconds"]}, {"steps", json::object()}};
      for (int steps : {1, 10, 100}) {
        eo.steps = steps;
        row["steps"][std::to_string(steps)] = score_json(evaluate_kf2p(model, ev, eo).model);
      }
      report["rows"].push_back(row);
    }
  } else if (a.suite == "policy") {
    for (const std::string policy : {"segments", "random"}) {
      FlowArgs fa = a.flow;
      fa.policy = policy;
      json train;
      const cfm::FlowModel model = train_flow_model(fa, base, c.split.train, a.seed, train);
      eo.steps = base.steps;
      eo.policy = AnchorPolicy::kSegments;
      report["rows"].push_back(
          {{"name", policy}, {"train_seconds", train["seconds"]}, {"score", score_json(evaluate_kf2p(model, ev, eo).model)}});
    }
  } else if (a.suite == "steps") {
    json train;
    const cfm::FlowModel model = train_flow_model(a.flow, base, c.split.train, a.seed, train);
    for (int steps : {1, 2, 5, 10, 20, 50, 100}) {
      eo.steps = steps;
      report["rows"].push_back({{"name", std::to_string(steps) + " steps"},
                                {"steps", steps},
                                {"score", score_json(evaluate_kf2p(model, ev, eo).model)}});
    }
    eo.with_slerp = true;
    eo.steps = 1;
    report["slerp"] = score_json(evaluate_kf2p(model, ev, eo).slerp);
  } else {
    fail(ErrorCode::kConfigInvalid, "unknown suite '" + a.suite + "'");
  }
  emit(report, a.out);
  return 0;
}

int run_serve(const std::string& ckpt, const std::string& data, const std::string& host, int port) {
  cfm::FlowConfig cfg;
  cfm::FlowModel model = cfm::load_model(ckpt, &cfg);
  std::vector<CorpusItem> corpus;
  if (!data.empty()) corpus = load_corpus_items(data);
  svc::Service service(std::move(model), cfg, std::move(corpus));
  httplib::Server server;
  svc::mount(server, service);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  std::cout << json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;
  server.listen_after_bind();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keyflow: keyframe-conditioned sign motion synthesis"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", g_verbose, "progress on stderr");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  c_synth->add_option("--config", synth.config, "SynthConfig JSON")->check(CLI::ExistingFile);
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--seed", synth.seed, "override the config seed");
  c_synth->add_option("--items", synth.items, "override the item count");
  c_synth->add_option("--arc", synth.arc, "override arc_deg");

  TrainSegArgs tseg;
  auto* c_tseg = app.add_subcommand("train-seg", "train the segmenter");
  c_tseg->add_option("--data", tseg.data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  c_tseg->add_option("--out", tseg.out, "model directory")->required();
  c_tseg->add_option("--seed", tseg.seed)->capture_default_str();
  c_tseg->add_option("--epochs", tseg.epochs)->capture_default_str();
  c_tseg->add_option("--hidden", tseg.hidden)->capture_default_str();
  c_tseg->add_option("--lr", tseg.lr)->capture_default_str();
  c_tseg->add_option("--holdout", tseg.holdout, "last N items are held out and scored")->capture_default_str();

  std::string seg_model, seg_in, seg_out;
  auto* c_seg = app.add_subcommand("segment", "BIO-segment a sequence");
  c_seg->add_option("--model", seg_model)->required()->check(CLI::ExistingDirectory);
  c_seg->add_option("--in", seg_in)->required()->check(CLI::ExistingFile);
  c_seg->add_option("--out", seg_out)->required();

  std::string kf_labels, kf_out;
  auto* c_kf = app.add_subcommand("keyframes", "onset/mid/offset keyframes from BIO labels");
  c_kf->add_option("--labels", kf_labels)->required()->check(CLI::ExistingFile);
  c_kf->add_option("--out", kf_out)->required();

  TrainCfmArgs tcfm;
  auto* c_tcfm = app.add_subcommand("train-cfm", "train the flow model");
  c_tcfm->add_option("--data", tcfm.data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  c_tcfm->add_option("--out", tcfm.out, "checkpoint directory")->required();
  c_tcfm->add_option("--seed", tcfm.seed)->capture_default_str();
  c_tcfm->add_option("--holdout", tcfm.holdout, "last N items are held out")->capture_default_str();
  c_tcfm->add_option("--eval-items", tcfm.eval_items, "score this many held-out items")->capture_default_str();
  add_flow_args(c_tcfm, tcfm.flow);

  SampleArgs smp;
  auto* c_smp = app.add_subcommand("sample", "generate a sequence");
  c_smp->add_option("--ckpt", smp.ckpt)->check(CLI::ExistingDirectory);
  c_smp->add_option("--mask", smp.mask)->check(CLI::ExistingFile);
  c_smp->add_option("--anchors", smp.anchors)->check(CLI::ExistingFile);
  c_smp->add_option("--text", smp.text, "gloss ids, e.g. \"g1 g2\"");
  c_smp->add_option("--lang", smp.lang)->capture_default_str();
  c_smp->add_option("--steps", smp.steps);
  c_smp->add_option("--gamma", smp.gamma);
  c_smp->add_option("--integrator", smp.integrator);
  c_smp->add_option("--baseline", smp.baseline, "slerp");
  c_smp->add_option("--pad", smp.pad, "anchor padding in frames")->capture_default_str();
  c_smp->add_option("--frames", smp.frames, "length when neither mask nor anchors are given");
  c_smp->add_option("--fps", smp.fps)->capture_default_str();
  c_smp->add_option("--seed", smp.seed)->capture_default_str();
  c_smp->add_option("--out", smp.out)->required();

  std::string ev_pred, ev_gt, ev_out;
  auto* c_ev = app.add_subcommand("eval", "DTW-JPE of a prediction against ground truth");
  c_ev->add_option("--pred", ev_pred)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--gt", ev_gt)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--out", ev_out);

  AblateArgs abl;
  auto* c_abl = app.add_subcommand("ablate", "loss, keyframe-policy and sampling-step ablations");
  c_abl->add_option("--suite", abl.suite)->required()->check(CLI::IsMember({"loss", "policy", "steps"}));
  c_abl->add_option("--data", abl.data)->required()->check(CLI::ExistingDirectory);
  c_abl->add_option("--out", abl.out);
  c_abl->add_option("--seed", abl.seed)->capture_default_str();
  c_abl->add_option("--holdout", abl.holdout)->capture_default_str();
  c_abl->add_option("--eval-items", abl.eval_items)->capture_default_str();
  add_flow_args(c_abl, abl.flow);

  std::string sv_ckpt, sv_data, sv_host = "127.0.0.1";
  int sv_port = 8080;
  auto* c_sv = app.add_subcommand("serve", "HTTP editing service");
  c_sv->add_option("--ckpt", sv_ckpt)->required()->check(CLI::ExistingDirectory);
  c_sv->add_option("--data", sv_data, "corpus served as session items")->check(CLI::ExistingDirectory);
  c_sv->add_option("--host", sv_host)->capture_default_str();
  c_sv->add_option("--port", sv_port, "0 picks a free port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_tseg) return run_train_seg(tseg);
    if (*c_seg) return run_segment(seg_model, seg_in, seg_out);
    if (*c_kf) return run_keyframes(kf_labels, kf_out);
    if (*c_tcfm) return run_train_cfm(tcfm);
    if (*c_smp) return run_sample(smp);
    if (*c_ev) return run_eval(ev_pred, ev_gt, ev_out);
    if (*c_abl) return run_ablate(abl);
    if (*c_sv) return run_serve(sv_ckpt, sv_data, sv_host, sv_port);
  } catch (const Error& e) {
    std::cerr << json{{"error", to_string(e.code())}, {"detail", e.detail()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"detail", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
