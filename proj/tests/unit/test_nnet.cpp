#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/nnet.hpp"
#include "test_util.hpp"

using namespace keyflow;
using namespace keyflow::nn;
using keyflow::testing::error_code_of;

namespace {

Tensor2 random_tensor(Rng& rng, int rows, int cols) {
  Tensor2 x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

// 0.5 * sum((y - target)^2) against a fixed random target.
OutputLoss quadratic_loss(const Tensor2& target) {
  return [target](const Tensor2& y) {
    const Tensor2 diff = y - target;
    return std::make_pair(0.5 * diff.squaredNorm(), Tensor2(diff));
  };
}

}  // namespace

TEST_CASE("identity dense layer passes input through") {
  const NetSpec spec{{Dense{4, 4, Activation::kNone}}};
  Vector p = Vector::Zero(static_cast<Eigen::Index>(param_count(spec)));
  for (int i = 0; i < 4; ++i) p[i * 4 + i] = 1.0;
  Rng rng(1);
  const Tensor2 x = random_tensor(rng, 5, 4);
  CHECK(net_apply(spec, p, x) == x);
}

TEST_CASE("centre-tap identity convolution passes input through") {
  const NetSpec spec{{TemporalConv{3, 3, Activation::kNone}}};
  Vector p = Vector::Zero(static_cast<Eigen::Index>(param_count(spec)));
  for (int i = 0; i < 3; ++i) p[9 + i * 3 + i] = 1.0;  // tap 1 is the centre
  Rng rng(2);
  const Tensor2 x = random_tensor(rng, 7, 3);
  CHECK(net_apply(spec, p, x) == x);

  const Tensor2 single = random_tensor(rng, 1, 3);
  const Tensor2 y = net_apply(spec, p, single);
  CHECK(y.rows() == 1);
  CHECK(y == single);
}

TEST_CASE("shape mismatches are reported") {
  const NetSpec spec{{Dense{4, 3, Activation::kReLU}}};
  Rng rng(3);
  const Vector p = init_params(spec, rng);
  CHECK(error_code_of([&] { net_forward(spec, p, Tensor2::Zero(2, 5)); }) == ErrorCode::kShapeMismatch);
  const NetSpec broken{{Dense{4, 3, Activation::kReLU}, Dense{4, 2, Activation::kNone}}};
  CHECK(error_code_of([&] { broken.validate(); }) == ErrorCode::kShapeMismatch);
  const auto fr = net_forward(spec, p, Tensor2::Zero(2, 4));
  CHECK(error_code_of([&] { net_backward(spec, p, fr.cache, Tensor2::Zero(2, 4)); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("every layer passes a central finite-difference check") {
  Rng rng(4);
  const std::vector<NetSpec> specs = {
      {{Dense{5, 6, Activation::kGELU}, Dense{6, 3, Activation::kNone}}},
      {{TemporalConv{4, 5, Activation::kGELU}, TemporalConv{5, 3, Activation::kNone}}},
      {{SelfAttention{4, 3}}},
      {{LayerNorm{5}, Dense{5, 2, Activation::kNone}}},
      {{Dense{6, 8, Activation::kGELU}, TemporalConv{8, 8, Activation::kGELU}, SelfAttention{8, 4}, LayerNorm{8},
        Dense{8, 3, Activation::kNone}}},
  };
  for (const auto& spec : specs) {
    Vector p = init_params(spec, rng);
    // Non-trivial attention biases and LayerNorm affine parameters.
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();
    const Tensor2 x = random_tensor(rng, 9, spec.input_dim());
    const Tensor2 target = random_tensor(rng, 9, spec.output_dim());
    const std::string name = spec.canonical();
    CAPTURE(name);
    const auto report = grad_check(spec, p, quadratic_loss(target), x, 1e-4, 64, 17);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-4);

    // Input gradient too.
    const auto fr = net_forward(spec, p, x);
    const auto br = net_backward(spec, p, fr.cache, fr.y - target);
    auto f_x = [&](const Vector& flat) {
      const Tensor2 xi = Eigen::Map<const Tensor2>(flat.data(), x.rows(), x.cols());
      return quadratic_loss(target)(net_apply(spec, p, xi)).first;
    };
    const Vector x_flat = Eigen::Map<const Vector>(x.data(), x.size());
    const Vector dx_flat = Eigen::Map<const Vector>(br.dx.data(), br.dx.size());
    CHECK(finite_difference_check(f_x, x_flat, dx_flat, 40, 1e-4, 5).passed);
  }
}

TEST_CASE("zero output gradient gives zero gradients") {
  Rng rng(5);
  const NetSpec spec{{TemporalConv{3, 4, Activation::kGELU}, SelfAttention{4, 2}, Dense{4, 2, Activation::kNone}}};
  const Vector p = init_params(spec, rng);
  const Tensor2 x = random_tensor(rng, 6, 3);
  const auto fr = net_forward(spec, p, x);
  const auto br = net_backward(spec, p, fr.cache, Tensor2::Zero(6, 2));
  CHECK(br.dparams.cwiseAbs().maxCoeff() == 0.0);
  CHECK(br.dx.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dead ReLU units receive no weight gradient") {
  const NetSpec spec{{Dense{3, 4, Activation::kReLU}, Dense{4, 2, Activation::kNone}}};
  Rng rng(6);
  Vector p = init_params(spec, rng);
  // Force every first-layer pre-activation negative: zero weights, bias -1.
  p.head(12).setZero();
  p.segment(12, 4).setConstant(-1.0);
  const Tensor2 x = random_tensor(rng, 5, 3);
  const auto fr = net_forward(spec, p, x);
  const auto br = net_backward(spec, p, fr.cache, Tensor2::Ones(5, 2));
  CHECK(br.dparams.head(16).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention rows sum to one") {
  const NetSpec spec{{SelfAttention{6, 8}}};
  Rng rng(7);
  Vector p = init_params(spec, rng);
  p.tail(9) = Vector::LinSpaced(9, 0.0, -2.0);
  const auto fr = net_forward(spec, p, random_tensor(rng, 12, 6) * 3.0);
  const Tensor2& a = fr.cache[0].attn;
  CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  CHECK(a.minCoeff() >= 0.0);
}

TEST_CASE("grad_check reports on a linear net with quadratic loss") {
  const NetSpec spec{{Dense{4, 3, Activation::kNone}}};
  Rng rng(8);
  const Vector p = init_params(spec, rng);
  const Tensor2 x = random_tensor(rng, 6, 4);
  const Tensor2 target = random_tensor(rng, 6, 3);
  const auto report = grad_check(spec, p, quadratic_loss(target), x, 1e-7, 15, 1);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-7);

  // Tolerance zero cannot pass.
  const auto strict = grad_check(spec, p, quadratic_loss(target), x, 0.0, 15, 1);
  CHECK_FALSE(strict.passed);
}

TEST_CASE("grad_check catches a corrupted backward pass") {
  const NetSpec spec{{Dense{4, 5, Activation::kGELU}, Dense{5, 2, Activation::kNone}}};
  Rng rng(9);
  const Vector p = init_params(spec, rng);
  const Tensor2 x = random_tensor(rng, 6, 4);
  const Tensor2 target = random_tensor(rng, 6, 2);
  const auto loss = quadratic_loss(target);
  const auto fr = net_forward(spec, p, x);
  Vector corrupted = net_backward(spec, p, fr.cache, loss(fr.y).second).dparams * 1.01;
  auto f = [&](const Vector& q) { return loss(net_apply(spec, q, x)).first; };
  CHECK_FALSE(finite_difference_check(f, p, corrupted, 64, 1e-4, 3).passed);
}

TEST_CASE("adam step basics") {
  Vector p = Vector::LinSpaced(4, -1.0, 1.0);
  const Vector before = p;
  AdamState s = AdamState::for_params(4, 0.01);
  adam_step(p, Vector::Zero(4), s);
  CHECK(p == before);
  CHECK(s.step == 1);
  adam_step(p, Vector::Zero(4), s);
  CHECK(s.step == 2);
}

TEST_CASE("adam under a constant gradient moves by lr per step") {
  // With g constant, m_hat = g and v_hat = g^2 exactly, so |delta| = lr * |g| / (|g| + eps).
  Vector p = Vector::Zero(3);
  const Vector g = (Vector(3) << 0.5, -2.0, 1e-3).finished();
  AdamState s = AdamState::for_params(3, 1e-3);
  Vector prev = p;
  for (int i = 0; i < 1000; ++i) {
    prev = p;
    adam_step(p, g, s);
  }
  const Vector delta = (p - prev).cwiseAbs();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(delta[i] - 1e-3) < 0.05 * 1e-3);
  CHECK(p[0] < 0.0);
  CHECK(p[1] > 0.0);
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  const NetSpec spec{{TemporalConv{3, 4, Activation::kGELU}, Dense{4, 2, Activation::kNone}}};
  Rng rng(10);
  const Vector p = init_params(spec, rng);
  const auto path = std::filesystem::temp_directory_path() / "keyflow_test_ckpt.spkw";
  save_checkpoint(path, spec.hash(), p);
  const Vector back = load_checkpoint(path, spec.hash());
  CHECK((back - p.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(error_code_of([&] { load_checkpoint(path, spec.hash() + 1); }) == ErrorCode::kFormatError);
  CHECK(net_spec_from_json(to_json(spec)).hash() == spec.hash());
}

TEST_CASE("forward is deterministic") {
  const NetSpec spec{{TemporalConv{3, 4, Activation::kGELU}, SelfAttention{4, 4}, Dense{4, 2, Activation::kNone}}};
  Rng rng(11);
  const Vector p = init_params(spec, rng);
  const Tensor2 x = random_tensor(rng, 10, 3);
  CHECK(net_apply(spec, p, x) == net_apply(spec, p, x));
}
