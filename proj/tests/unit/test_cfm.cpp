#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include <nlohmann/json.hpp>

#include "keyflow/cfm.hpp"
#include "keyflow/synth.hpp"
#include "test_util.hpp"

using namespace keyflow;
using namespace keyflow::cfm;
using keyflow::testing::error_code_of;
using keyflow::testing::random_pose;

namespace {

Mat random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ModelConfig tiny_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.hidden = 8;
  c.text_dim = 6;
  c.time_dim = 4;
  c.vocab = 10;
  c.num_langs = 2;
  c.attn_max_distance = 4;
  c.seed = seed;
  return c;
}

KeyframeMask random_mask(Rng& rng, int frames, double p) {
  KeyframeMask m(frames);
  for (int f = 0; f < frames; ++f) m[f] = rng.bernoulli(p);
  return m;
}

// Central-difference check of a loss gradient with respect to v, every coordinate. The losses are
// quadratic in v, so a large step carries no truncation error.
template <typename F>
double max_rel_err(const F& loss, const Mat& v, const Mat& dv) {
  const double h = 1e-2;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    Mat vp = v;
    Mat vm = v;
    vp.data()[i] += h;
    vm.data()[i] -= h;
    const double num = (loss(vp) - loss(vm)) / (2 * h);
    const double a = dv.data()[i];
    worst = std::max(worst, std::abs(num - a) / std::max({std::abs(num), std::abs(a), 1e-6}));
  }
  return worst;
}

// Straightforward guided sampler written from the update rule; the library version must agree bitwise.
Mat reference_sample(const FlowModel& model, const SampleRequest& req, bool conditional) {
  const int frames = static_cast<int>(req.mask.size());
  Rng rng(req.seed);
  Mat x(frames, kPoseDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const KeyframeMask none(frames, false);
  for (int k = 0; k <= req.steps; ++k) {
    for (int f = 0; f < frames; ++f) {
      if (req.mask[f]) x.row(f) = req.anchors.row(f);
    }
    if (k == req.steps) break;
    const double t = static_cast<double>(k) / req.steps;
    const Mat v = conditional ? predict_field(model, x, req.mask, t, req.text)
                              : predict_field(model, x, none, t, std::nullopt);
    x += (1.0 / req.steps) * v;
  }
  return x;
}

SampleRequest random_request(Rng& rng, int frames, std::uint64_t seed) {
  SampleRequest req;
  req.mask = random_mask(rng, frames, 0.3);
  req.mask[0] = true;
  req.anchors = random_mat(rng, frames, kPoseDim);
  req.text = TextCondition{{1, 4}, 1};
  req.seed = seed;
  return req;
}

std::vector<TrainExample> toy_batch(int n, int frames) {
  SynthConfig scfg;
  scfg.num_items = n;
  const SyntheticCorpus corpus = synth_generate(scfg);
  std::vector<TrainExample> batch;
  for (const auto& item : corpus.items) {
    TrainExample ex;
    ex.x1 = to_mat(item.seq).topRows(frames);
    ex.mask.assign(item.labels.mask.begin(), item.labels.mask.begin() + frames);
    ex.text = {item.labels.gloss_tokens, item.labels.lang_token};
    for (int& g : ex.text.gloss_tokens) g %= 10;
    ex.text.lang_token %= 2;
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace

TEST_CASE("channels partition the pose vector") {
  CHECK(kChannels[0].offset == 0);
  CHECK(kChannels[0].dim == 66);
  CHECK(kChannels[1].offset == 66);
  CHECK(kChannels[1].dim == 180);
  CHECK(kChannels[1].offset + kChannels[1].dim == kPoseDim);
}

TEST_CASE("make_path examples") {
  Rng rng(1);
  const Mat x1 = random_mat(rng, 4, 3);
  const Mat x0 = random_mat(rng, 4, 3);
  CHECK(make_path(x1, x0, 1.0) == x1);
  CHECK(make_path(x1, x0, 0.0) == x0);
  CHECK(make_path(Mat::Constant(2, 2, 2.0), Mat::Zero(2, 2), 0.5) == Mat::Ones(2, 2));
  CHECK(error_code_of([&] { make_path(x1, Mat::Zero(3, 3), 0.5); }) == ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { make_path(x1, x0, 1.5); }) == ErrorCode::kParameterOutOfRange);
}

TEST_CASE("make_control and target_field examples") {
  Rng rng(2);
  const Mat x1 = random_mat(rng, 5, 3);
  const Mat xt = random_mat(rng, 5, 3);
  CHECK(make_control(x1, xt, KeyframeMask(5, true)).c == x1);
  CHECK(make_control(x1, xt, KeyframeMask(5, false)).c == xt);

  Mat a(2, 1), b(2, 1);
  a << 7.0, 7.0;
  b << -3.0, -3.0;
  const ControlSignal c = make_control(a, b, {true, false});
  CHECK(c.c(0, 0) == 7.0);
  CHECK(c.c(1, 0) == -3.0);
  CHECK(error_code_of([&] { make_control(x1, xt, KeyframeMask(4, true)); }) == ErrorCode::kShapeMismatch);

  const KeyframeMask mask{true, false, true, false, false};
  const Mat ctl = make_control(x1, xt, mask).c;
  const Mat u = target_field(x1, ctl);
  CHECK(u.row(0).isZero(0.0));
  CHECK(u.row(2).isZero(0.0));
  CHECK(((u + ctl) - x1).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(target_field(x1, Mat::Zero(5, 3)) == x1);
}

TEST_CASE("loss_cfm examples and gradient") {
  Rng rng(3);
  const Mat x1 = random_mat(rng, 6, 4);
  const Mat c = random_mat(rng, 6, 4);
  const Mat u = x1 - c;
  CHECK(loss_cfm(u, x1, c).value == 0.0);
  CHECK(loss_cfm(u.array() + 1.0, x1, c).value == doctest::Approx(1.0).epsilon(1e-12));
  const Mat v = random_mat(rng, 6, 4);
  CHECK(max_rel_err([&](const Mat& p) { return loss_cfm(p, x1, c).value; }, v, loss_cfm(v, x1, c).dv) < 1e-6);
}

TEST_CASE("loss_recon examples and gradient") {
  Rng rng(4);
  const Mat x1 = random_mat(rng, 6, 4);
  const Mat xt = random_mat(rng, 6, 4);
  CHECK(loss_recon((x1 - xt) / 0.5, xt, x1, 0.5).value < 1e-28);

  const Mat v = random_mat(rng, 6, 4);
  const LossGrad at1 = loss_recon(v, xt, x1, 1.0);
  CHECK(at1.value == doctest::Approx((xt - x1).squaredNorm() / 24.0).epsilon(1e-12));
  CHECK(at1.dv.isZero(0.0));
  CHECK(loss_recon(random_mat(rng, 6, 4), xt, x1, 1.0).value == at1.value);

  for (double t : {0.0, 0.3, 0.9}) {
    CHECK(max_rel_err([&](const Mat& p) { return loss_recon(p, xt, x1, t).value; }, v,
                      loss_recon(v, xt, x1, t).dv) < 1e-6);
  }
  CHECK(error_code_of([&] { loss_recon(v, xt, x1, -0.1); }) == ErrorCode::kParameterOutOfRange);
}

TEST_CASE("loss_vel examples and gradient") {
  Rng rng(5);
  const Mat x1 = random_mat(rng, 7, 3);
  const Mat xt = random_mat(rng, 7, 3);
  const double t = 0.5;
  // est = x_t + (1 - t) v = x1 + offset
  Mat offset = Mat::Zero(7, 3);
  offset.rowwise() = Eigen::RowVector3d(0.4, -1.0, 2.5);
  CHECK(loss_vel((x1 + offset - xt) / (1.0 - t), xt, x1, t).value < 1e-26);
  CHECK(loss_vel((x1 - xt) / (1.0 - t), xt, x1, t).value < 1e-28);

  const Mat v = random_mat(rng, 7, 3);
  CHECK(max_rel_err([&](const Mat& p) { return loss_vel(p, xt, x1, 0.2).value; }, v, loss_vel(v, xt, x1, 0.2).dv) <
        1e-6);
  CHECK(error_code_of([&] { loss_vel(Mat::Zero(1, 3), Mat::Zero(1, 3), Mat::Zero(1, 3), 0.5); }) ==
        ErrorCode::kTooShort);
}

TEST_CASE("loss_total weighting") {
  FlowConfig cfg;
  CHECK(loss_total({0, 0, 0}, cfg) == 0.0);
  CHECK(loss_total({1, 1, 1}, cfg) == 4.0);
  cfg.lambda_cfm = 1;
  cfg.lambda_recon = 0;
  cfg.lambda_vel = 0;
  CHECK(loss_total({0.7, 5.0, 9.0}, cfg) == 0.7);
}

TEST_CASE("cfg_field algebra") {
  Rng rng(6);
  const Mat c = random_mat(rng, 3, 4);
  const Mat u = random_mat(rng, 3, 4);
  CHECK(cfg_field(c, u, 1.0) == c);
  CHECK(cfg_field(c, u, 0.0) == u);
  CHECK(cfg_field(Mat::Constant(2, 2, 3.0), Mat::Zero(2, 2), 2.0) == Mat::Constant(2, 2, 6.0));
  for (double g : {0.0, 0.5, 1.0, 2.0, 7.5}) CHECK((cfg_field(c, c, g) - c).cwiseAbs().maxCoeff() < 1e-14);
  // Affine in gamma.
  const Mat mid = cfg_field(c, u, 1.5);
  const Mat avg = 0.5 * (cfg_field(c, u, 0.5) + cfg_field(c, u, 2.5));
  CHECK((mid - avg).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(error_code_of([&] { cfg_field(c, u, -1.0); }) == ErrorCode::kParameterOutOfRange);
}

TEST_CASE("flow config json round trip and validation") {
  FlowConfig cfg;
  cfg.lambda_recon = 0.0;
  cfg.gamma = 1.5;
  cfg.integrator = Integrator::kResidual;
  const FlowConfig back = flow_config_from_json(to_json(cfg));
  CHECK(back.lambda_cfm == 2.0);
  CHECK(back.lambda_recon == 0.0);
  CHECK(back.gamma == 1.5);
  CHECK(back.integrator == Integrator::kResidual);
  CHECK(back.anchor_padding == 8);
  cfg.rho = 1.5;
  CHECK(error_code_of([&] { cfg.validate(); }) == ErrorCode::kConfigInvalid);
  cfg.rho = 0.1;
  cfg.steps = 0;
  CHECK(error_code_of([&] { cfg.validate(); }) == ErrorCode::kStepsInvalid);
}

TEST_CASE("text conditioning rows") {
  const FlowModel model = FlowModel::create(tiny_config());
  CHECK(text_rows(model, std::nullopt) == std::vector<int>{model.null_row()});
  CHECK(text_rows(model, TextCondition{{3, 5}, 1}) == std::vector<int>{11, 3, 5});
  const Eigen::VectorXd z = text_embedding(model, TextCondition{{3, 5}, 1});
  const Eigen::VectorXd expect = (model.embed.row(11) + model.embed.row(3) + model.embed.row(5)).transpose() / 3.0;
  CHECK((z - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(error_code_of([&] { text_rows(model, TextCondition{{10}, 0}); }) == ErrorCode::kParameterOutOfRange);
  CHECK(error_code_of([&] { text_rows(model, TextCondition{{}, 2}); }) == ErrorCode::kParameterOutOfRange);
  CHECK(parse_lang("dgs") == 0);
  CHECK(parse_lang("CSL") == 3);
  CHECK(parse_lang("2") == 2);
  CHECK(parse_gloss("g12 4  g0") == std::vector<int>{12, 4, 0});
  CHECK(error_code_of([] { parse_gloss("g1 x"); }) == ErrorCode::kParameterOutOfRange);
}

TEST_CASE("full-network gradients of each loss match finite differences") {
  const FlowModel model = FlowModel::create(tiny_config(3));
  Rng rng(7);
  TrainExample ex;
  ex.x1 = random_mat(rng, 6, kPoseDim);
  ex.mask = {true, false, false, true, false, false};
  ex.text = {{2, 7}, 1};
  const Mat x0 = random_mat(rng, 6, kPoseDim);
  const double t = 0.37;
  for (int which = 0; which < 3; ++which) {
    FlowConfig cfg;
    cfg.lambda_cfm = which == 0;
    cfg.lambda_recon = which == 1;
    cfg.lambda_vel = which == 2;
    const ExampleResult r = example_loss(model, ex, t, x0, false, false, cfg);
    for (int ch = 0; ch < 2; ++ch) {
      auto fn = [&](const nn::Vector& p) {
        FlowModel m = model;
        m.params[ch] = p;
        return example_loss(m, ex, t, x0, false, false, cfg, false).total;
      };
      const auto rep = nn::finite_difference_check(fn, model.params[ch], r.grad.params[ch], 32, 1e-4, 10 + ch, 1e-5);
      CHECK(rep.passed);
    }
    const std::vector<int> used{model.config.vocab + 1, 2, 7};
    auto fe = [&](const nn::Vector& p) {
      FlowModel m = model;
      m.embed = Eigen::Map<const Mat>(p.data(), m.embed.rows(), m.embed.cols());
      return example_loss(m, ex, t, x0, false, false, cfg, false).total;
    };
    const nn::Vector flat = Eigen::Map<const nn::Vector>(model.embed.data(), model.embed.size());
    const nn::Vector gflat = Eigen::Map<const nn::Vector>(r.grad.embed.data(), r.grad.embed.size());
    CHECK(nn::finite_difference_check(fe, flat, gflat, 32, 1e-4, 20, 1e-5).passed);
    for (int row : used) CHECK(r.grad.embed.row(row).norm() > 0.0);
    CHECK(r.grad.embed.row(model.null_row()).norm() == 0.0);
  }
}

TEST_CASE("keyframe rows carry a zero target during training") {
  Rng rng(8);
  const Mat x1 = random_mat(rng, 8, kPoseDim);
  const KeyframeMask mask = random_mask(rng, 8, 0.5);
  for (double t : {0.0, 0.4, 1.0}) {
    const Mat u = target_field(x1, make_control(x1, make_path(x1, random_mat(rng, 8, kPoseDim), t), mask).c);
    for (int f = 0; f < 8; ++f) {
      if (mask[f]) CHECK(u.row(f).isZero(0.0));
    }
  }
}

TEST_CASE("trainer drop counters") {
  const auto batch = toy_batch(2, 4);
  SUBCASE("rho 0 keeps every condition") {
    FlowModel model = FlowModel::create(tiny_config());
    FlowConfig cfg;
    cfg.rho = 0.0;
    Trainer trainer(model, cfg, 1e-3, 5);
    for (int i = 0; i < 1000; ++i) trainer.step(batch);
    CHECK(trainer.conditional_count() == 2000);
    CHECK(trainer.drop_count() == 0);
  }
  SUBCASE("rho 1 never shows keyframes or text") {
    FlowModel model = FlowModel::create(tiny_config());
    const Mat before = model.embed;
    FlowConfig cfg;
    cfg.rho = 1.0;
    Trainer trainer(model, cfg, 1e-2, 5);
    for (int i = 0; i < 50; ++i) trainer.step(batch);
    CHECK(trainer.conditional_count() == 0);
    CHECK(trainer.drop_count() == 100);
    CHECK(model.embed.topRows(model.null_row()) == before.topRows(model.null_row()));
    CHECK(model.embed.row(model.null_row()) != before.row(model.null_row()));
  }
  SUBCASE("empty batch") {
    FlowModel model = FlowModel::create(tiny_config());
    Trainer trainer(model, FlowConfig{}, 1e-3, 5);
    CHECK(error_code_of([&] { trainer.step({}); }) == ErrorCode::kEmptyBatch);
  }
}

TEST_CASE("training lowers the loss on a fixed toy batch") {
  ModelConfig mc = tiny_config(3);
  mc.hidden = 16;
  mc.time_dim = 16;
  FlowModel model = FlowModel::create(mc);
  const auto batch = toy_batch(8, 16);
  Rng rng(21);
  std::vector<std::pair<double, Mat>> draws;
  for (int i = 0; i < 32; ++i) draws.emplace_back(rng.uniform(), random_mat(rng, 16, kPoseDim));
  const FlowConfig cfg;
  auto eval = [&] {
    double sum = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
      sum += example_loss(model, batch[i % batch.size()], draws[i].first, draws[i].second, false, false, cfg, false).total;
    }
    return sum / static_cast<double>(draws.size());
  };
  const double before = eval();
  Trainer trainer(model, cfg, 3e-3, 3);
  for (int i = 0; i < 500; ++i) trainer.step(batch);
  const double after = eval();
  MESSAGE("fixed-draw loss " << before << " -> " << after);
  CHECK(after < 0.9 * before);
}

TEST_CASE("sampling with every frame anchored returns the anchors") {
  const FlowModel model = FlowModel::create(tiny_config(1));
  Rng rng(9);
  for (int steps : {1, 3, 10}) {
    SampleRequest req;
    req.mask = KeyframeMask(6, true);
    req.anchors = random_mat(rng, 6, kPoseDim);
    req.steps = steps;
    CHECK(sample(model, req) == req.anchors);
  }
}

TEST_CASE("sampling keeps anchors bitwise") {
  const FlowModel model = FlowModel::create(tiny_config(2));
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    for (int steps : {1, 10}) {
      SampleRequest req = random_request(rng, 9, trial);
      req.steps = steps;
      req.integrator = trial % 2 ? Integrator::kResidual : Integrator::kEuler;
      const Mat out = sample(model, req);
      REQUIRE(out.allFinite());
      for (int f = 0; f < 9; ++f) {
        if (req.mask[f]) CHECK(out.row(f) == req.anchors.row(f));
      }
    }
  }
}

TEST_CASE("one step is x0 plus the field at t=0") {
  const FlowModel model = FlowModel::create(tiny_config(4));
  Rng rng(11);
  SampleRequest req = random_request(rng, 7, 99);
  req.steps = 1;
  req.gamma = 1.0;
  Rng noise(99);
  Mat x(7, kPoseDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = noise.normal();
  for (int f = 0; f < 7; ++f) {
    if (req.mask[f]) x.row(f) = req.anchors.row(f);
  }
  Mat expect = x + predict_field(model, x, req.mask, 0.0, req.text);
  for (int f = 0; f < 7; ++f) {
    if (req.mask[f]) expect.row(f) = req.anchors.row(f);
  }
  const Mat out = sample(model, req);
  CHECK(out.rows() == 7);
  CHECK(out.cols() == kPoseDim);
  CHECK(out == expect);
  req.integrator = Integrator::kResidual;
  CHECK(sample(model, req) == expect);
}

TEST_CASE("guidance scale one and zero match the pure branches bitwise") {
  const FlowModel model = FlowModel::create(tiny_config(5));
  Rng rng(12);
  for (int steps : {1, 4}) {
    SampleRequest req = random_request(rng, 8, 7);
    req.steps = steps;
    req.gamma = 1.0;
    CHECK(sample(model, req) == reference_sample(model, req, true));
    req.gamma = 0.0;
    CHECK(sample(model, req) == reference_sample(model, req, false));
    req.gamma = 2.0;
    CHECK(sample(model, req) != reference_sample(model, req, true));
  }
}

TEST_CASE("sampling is deterministic in the seed") {
  const FlowModel model = FlowModel::create(tiny_config(6));
  Rng rng(13);
  SampleRequest req = random_request(rng, 6, 21);
  const Mat a = sample(model, req);
  CHECK(a == sample(model, req));
  req.seed = 22;
  CHECK(a != sample(model, req));
}

TEST_CASE("sampling errors") {
  const FlowModel model = FlowModel::create(tiny_config());
  Rng rng(14);
  SampleRequest req = random_request(rng, 5, 0);
  req.steps = 0;
  CHECK(error_code_of([&] { sample(model, req); }) == ErrorCode::kStepsInvalid);
  req.steps = 2;
  req.anchors(0, 3) = std::nan("");
  CHECK(error_code_of([&] { sample(model, req); }) == ErrorCode::kAnchorMissing);
  req.anchors = Mat::Zero(3, kPoseDim);
  req.mask = {false, false, false, false, true};
  CHECK(error_code_of([&] { sample(model, req); }) == ErrorCode::kAnchorMissing);
  // Non-anchor rows may hold anything.
  req.anchors = Mat::Constant(5, kPoseDim, std::nan(""));
  req.anchors.row(4).setZero();
  CHECK(sample(model, req).allFinite());
}

TEST_CASE("pad_anchors holds the outer poses of each triple") {
  const int frames = 40;
  Mat anchors = Mat::Zero(frames, 2);
  for (int f = 0; f < frames; ++f) anchors(f, 0) = f;
  KeyframeMask mask(frames, false);
  for (int f : {10, 12, 14, 20, 22, 24}) mask[f] = true;
  Mat a = anchors;
  KeyframeMask m = mask;
  pad_anchors(m, a, 8);
  for (int f = 2; f < 10; ++f) {
    CHECK(m[f]);
    CHECK(a(f, 0) == 10);
  }
  CHECK_FALSE(m[1]);
  CHECK_FALSE(m[11]);
  CHECK_FALSE(m[13]);
  CHECK(a(15, 0) == 14);
  CHECK(a(17, 0) == 14);
  CHECK(a(18, 0) == 20);
  CHECK(a(19, 0) == 20);
  for (int f = 25; f <= 32; ++f) CHECK(a(f, 0) == 24);
  CHECK_FALSE(m[33]);
  CHECK(a.row(12) == anchors.row(12));

  KeyframeMask m0 = mask;
  Mat a0 = anchors;
  pad_anchors(m0, a0, 0);
  CHECK(m0 == mask);
  CHECK(a0 == anchors);
  CHECK(error_code_of([&] { pad_anchors(m0, a0, -1); }) == ErrorCode::kParameterOutOfRange);
}

TEST_CASE("flow checkpoint round trip") {
  const FlowModel model = FlowModel::create(tiny_config(8));
  FlowConfig cfg;
  cfg.gamma = 3.0;
  const auto dir = std::filesystem::temp_directory_path() / "keyflow_flow_ckpt";
  std::filesystem::remove_all(dir);
  save_model(model, cfg, dir);
  FlowConfig back_cfg;
  const FlowModel back = load_model(dir, &back_cfg);
  CHECK(back_cfg.gamma == 3.0);
  CHECK(back.config.hidden == 8);
  Rng rng(15);
  const Mat c = random_mat(rng, 5, kPoseDim);
  const KeyframeMask mask{true, false, false, false, true};
  const TextCondition text{{1}, 0};
  CHECK((predict_field(model, c, mask, 0.2, text) - predict_field(back, c, mask, 0.2, text)).cwiseAbs().maxCoeff() <
        1e-4);
  save_model(back, back_cfg, dir);
  CHECK(predict_field(back, c, mask, 0.2, text) == predict_field(load_model(dir), c, mask, 0.2, text));
  std::filesystem::remove(dir / "embed.spkw");
  CHECK(error_code_of([&] { load_model(dir); }) == ErrorCode::kIoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("anchor prior slerps between anchors") {
  Rng rng(31);
  Mat c = random_mat(rng, 7, kPoseDim);
  PoseFrame a = random_pose(rng);
  PoseFrame b = random_pose(rng);
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = 0; k < 6; ++k) {
      c(1, 6 * j + k) = a.joint(j)[k];
      c(5, 6 * j + k) = b.joint(j)[k];
    }
  }
  KeyframeMask mask{false, true, false, false, false, true, false};
  const AnchorPrior p = anchor_prior(c, mask);
  CHECK(p.interp.row(0) == c.row(1));
  CHECK(p.interp.row(6) == c.row(5));
  CHECK(p.interp.row(5) == c.row(5));
  for (int j = 0; j < kNumJoints; ++j) {
    const Rot6D mid = slerp_rot6d(a.joint(j), b.joint(j), 0.5);
    for (int k = 0; k < 6; ++k) CHECK(p.interp(3, 6 * j + k) == doctest::Approx(mid[k]).epsilon(1e-12));
    CHECK((rot6d_to_matrix(slerp_rot6d(a.joint(j), b.joint(j), 0.0)) - rot6d_to_matrix(a.joint(j))).norm() < 1e-9);
  }
  CHECK((p.interp.row(1) - c.row(1)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(p.phase[3] == doctest::Approx(0.5));
  CHECK(p.phase[1] == 0.0);
  CHECK(p.span[2] == doctest::Approx(4.0 / 32.0));
  CHECK(p.diff.row(4) == c.row(5) - c.row(1));
  CHECK(p.diff.row(0).isZero(0.0));
  CHECK(p.diff.row(6).isZero(0.0));

  const AnchorPrior none = anchor_prior(c, KeyframeMask(7, false));
  CHECK(none.interp.isZero(0.0));
  CHECK(none.diff.isZero(0.0));
  CHECK(none.phase.isZero(0.0));
  CHECK(error_code_of([&] { anchor_prior(c, KeyframeMask(6, false)); }) == ErrorCode::kShapeMismatch);
}
