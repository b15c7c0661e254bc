#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "keyflow/random.hpp"

namespace keyflow::nn {

// Time-major activations: one row per frame, one column per channel.
using Tensor2 = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kNone, kReLU, kGELU };

struct Dense {
  int in = 0;
  int out = 0;
  Activation act = Activation::kNone;
};

// Kernel-3 convolution over time with zero "same" padding.
struct TemporalConv {
  int in = 0;
  int out = 0;
  Activation act = Activation::kNone;
  static constexpr int kKernel = 3;
};

// Single-head scaled dot-product attention with a residual connection and a
// learned bias per frame distance (distances beyond max_distance share a bucket).
struct SelfAttention {
  int dim = 0;
  int max_distance = 32;
};

struct LayerNorm {
  int dim = 0;
};

using Layer = std::variant<Dense, TemporalConv, SelfAttention, LayerNorm>;

struct NetSpec {
  std::vector<Layer> layers;

  int input_dim() const;
  int output_dim() const;
  // Throws ShapeMismatch when adjacent layers disagree.
  void validate() const;
  std::string canonical() const;
  std::uint64_t hash() const;
};

nlohmann::json to_json(const NetSpec& spec);
NetSpec net_spec_from_json(const nlohmann::json& doc);

std::size_t param_count(const Layer& layer);
std::size_t param_count(const NetSpec& spec);

// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases, unit LayerNorm gains.
Vector init_params(const NetSpec& spec, Rng& rng);

struct LayerCache {
  Tensor2 input;
  Tensor2 pre;  // pre-activation (dense / conv)
  Tensor2 q, k, v, attn, heads;
  Tensor2 xhat;
  Vector inv_std;
};

struct ForwardResult {
  Tensor2 y;
  std::vector<LayerCache> cache;
};

struct BackwardResult {
  Vector dparams;
  Tensor2 dx;
};

ForwardResult net_forward(const NetSpec& spec, const Vector& params, const Tensor2& x);
BackwardResult net_backward(const NetSpec& spec, const Vector& params, const std::vector<LayerCache>& cache,
                            const Tensor2& dy);
// Forward without keeping the cache.
Tensor2 net_apply(const NetSpec& spec, const Vector& params, const Tensor2& x);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(std::size_t n, double lr);
};

void adam_step(Vector& params, const Vector& grads, AdamState& state);

// Rescales grads in place so that their L2 norm is at most max_norm; returns the original norm.
double clip_grad_norm(Vector& grads, double max_norm);

struct CoordCheck {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<CoordCheck> coords;
  double max_rel_err = 0.0;
  bool passed = false;
};

// rel_err = |a - n| / max(|a|, |n|, 1e-6); n from central differences with step h.
// Passes iff every sampled coordinate has rel_err < tolerance.
GradCheckReport finite_difference_check(const std::function<double(const Vector&)>& f, const Vector& x,
                                        const Vector& analytic, std::size_t num_coords, double tolerance,
                                        std::uint64_t seed, double h = 1e-4);

// Loss on the network output: returns the scalar and dloss/dy.
using OutputLoss = std::function<std::pair<double, Tensor2>(const Tensor2&)>;

GradCheckReport grad_check(const NetSpec& spec, const Vector& params, const OutputLoss& loss, const Tensor2& x,
                           double tolerance, std::size_t num_coords = 64, std::uint64_t seed = 0);

// Parameter checkpoint: "SPKW", u16 version=1, u64 spec hash, u64 count, count x f32, little-endian.
void save_checkpoint(const std::filesystem::path& path, std::uint64_t spec_hash, const Vector& params);
Vector load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash);

std::uint64_t fnv1a64(std::string_view text);

}  // namespace keyflow::nn
