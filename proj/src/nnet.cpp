#include "keyflow/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/le_bytes.hpp"
#include "keyflow/motion.hpp"

namespace keyflow::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

std::string act_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kReLU: return "relu";
    case Activation::kGELU: return "gelu";
  }
  return "none";
}

Activation act_from_name(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kReLU;
  if (s == "gelu") return Activation::kGELU;
  fail(ErrorCode::kSchemaError, "unknown activation " + s);
}

void apply_act(Activation a, const Tensor2& z, Tensor2& y) {
  switch (a) {
    case Activation::kNone: y = z; return;
    case Activation::kReLU: y = z.cwiseMax(0.0); return;
    case Activation::kGELU:
      y = z.unaryExpr([](double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); });
      return;
  }
}

// dZ = dY * act'(Z)
Tensor2 act_backward(Activation a, const Tensor2& z, const Tensor2& dy) {
  switch (a) {
    case Activation::kNone: return dy;
    case Activation::kReLU: return dy.cwiseProduct(z.unaryExpr([](double u) { return u > 0.0 ? 1.0 : 0.0; }));
    case Activation::kGELU:
      return dy.cwiseProduct(z.unaryExpr([](double u) {
        const double inner = kGeluC * (u + 0.044715 * u * u * u);
        const double th = std::tanh(inner);
        const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
        return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * dinner;
      }));
  }
  return dy;
}

int bucket(int i, int j, int max_distance) { return std::min(std::abs(i - j), max_distance); }

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MutMap = Eigen::Map<Eigen::MatrixXd>;
using MutVecMap = Eigen::Map<Eigen::VectorXd>;

void check_input(const Tensor2& x, int dim, const char* what) {
  if (x.cols() != dim) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + " expects " + std::to_string(dim) + " channels, got " +
                                        std::to_string(x.cols()));
  }
  if (x.rows() < 1) fail(ErrorCode::kShapeMismatch, std::string(what) + " needs at least one frame");
}

// ---- Dense ----
void forward(const Dense& l, const double* p, const Tensor2& x, LayerCache& c, Tensor2& y) {
  check_input(x, l.in, "Dense");
  ConstMap w(p, l.in, l.out);
  ConstVecMap b(p + l.in * l.out, l.out);
  c.input = x;
  c.pre = x * w;
  c.pre.rowwise() += b.transpose();
  apply_act(l.act, c.pre, y);
}

void backward(const Dense& l, const double* p, double* g, const LayerCache& c, const Tensor2& dy, Tensor2& dx) {
  ConstMap w(p, l.in, l.out);
  const Tensor2 dz = act_backward(l.act, c.pre, dy);
  MutMap(g, l.in, l.out) += c.input.transpose() * dz;
  MutVecMap(g + l.in * l.out, l.out) += dz.colwise().sum().transpose();
  dx = dz * w.transpose();
}

// ---- TemporalConv ----
// Tap k reads frame t + k - 1.
void forward(const TemporalConv& l, const double* p, const Tensor2& x, LayerCache& c, Tensor2& y) {
  check_input(x, l.in, "TemporalConv");
  const Eigen::Index t = x.rows();
  const std::size_t tap = static_cast<std::size_t>(l.in) * l.out;
  ConstMap w0(p, l.in, l.out), w1(p + tap, l.in, l.out), w2(p + 2 * tap, l.in, l.out);
  ConstVecMap b(p + 3 * tap, l.out);
  c.input = x;
  c.pre = x * w1;
  if (t > 1) {
    c.pre.bottomRows(t - 1).noalias() += x.topRows(t - 1) * w0;
    c.pre.topRows(t - 1).noalias() += x.bottomRows(t - 1) * w2;
  }
  c.pre.rowwise() += b.transpose();
  apply_act(l.act, c.pre, y);
}

void backward(const TemporalConv& l, const double* p, double* g, const LayerCache& c, const Tensor2& dy,
              Tensor2& dx) {
  const Eigen::Index t = c.input.rows();
  const std::size_t tap = static_cast<std::size_t>(l.in) * l.out;
  ConstMap w0(p, l.in, l.out), w1(p + tap, l.in, l.out), w2(p + 2 * tap, l.in, l.out);
  MutMap g0(g, l.in, l.out), g1(g + tap, l.in, l.out), g2(g + 2 * tap, l.in, l.out);
  const Tensor2 dz = act_backward(l.act, c.pre, dy);
  const Tensor2& x = c.input;
  g1.noalias() += x.transpose() * dz;
  dx = dz * w1.transpose();
  if (t > 1) {
    g0.noalias() += x.topRows(t - 1).transpose() * dz.bottomRows(t - 1);
    g2.noalias() += x.bottomRows(t - 1).transpose() * dz.topRows(t - 1);
    dx.topRows(t - 1).noalias() += dz.bottomRows(t - 1) * w0.transpose();
    dx.bottomRows(t - 1).noalias() += dz.topRows(t - 1) * w2.transpose();
  }
  MutVecMap(g + 3 * tap, l.out) += dz.colwise().sum().transpose();
}

// ---- SelfAttention ----
// Parameters: Wq, Wk, Wv, Wo (dim x dim each), then max_distance + 1 distance biases.
void forward(const SelfAttention& l, const double* p, const Tensor2& x, LayerCache& c, Tensor2& y) {
  check_input(x, l.dim, "SelfAttention");
  const int d = l.dim;
  const std::size_t sq = static_cast<std::size_t>(d) * d;
  ConstMap wq(p, d, d), wk(p + sq, d, d), wv(p + 2 * sq, d, d), wo(p + 3 * sq, d, d);
  const double* bias = p + 4 * sq;
  const Eigen::Index t = x.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.input = x;
  c.q = x * wq;
  c.k = x * wk;
  c.v = x * wv;
  c.attn = (c.q * c.k.transpose()) * scale;
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) {
      c.attn(i, j) += bias[bucket(static_cast<int>(i), static_cast<int>(j), l.max_distance)];
    }
    const double mx = c.attn.row(i).maxCoeff();
    c.attn.row(i) = (c.attn.row(i).array() - mx).exp();
    c.attn.row(i) /= c.attn.row(i).sum();
  }
  c.heads = c.attn * c.v;
  y = x + c.heads * wo;
}

void backward(const SelfAttention& l, const double* p, double* g, const LayerCache& c, const Tensor2& dy,
              Tensor2& dx) {
  const int d = l.dim;
  const std::size_t sq = static_cast<std::size_t>(d) * d;
  ConstMap wq(p, d, d), wk(p + sq, d, d), wv(p + 2 * sq, d, d), wo(p + 3 * sq, d, d);
  MutMap gq(g, d, d), gk(g + sq, d, d), gv(g + 2 * sq, d, d), go(g + 3 * sq, d, d);
  double* gbias = g + 4 * sq;
  const Eigen::Index t = c.input.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  go.noalias() += c.heads.transpose() * dy;
  const Tensor2 dheads = dy * wo.transpose();
  const Tensor2 dattn = dheads * c.v.transpose();
  const Tensor2 dv = c.attn.transpose() * dheads;
  // Softmax Jacobian, row by row.
  Tensor2 ds = c.attn.cwiseProduct(dattn);
  const Eigen::VectorXd row_dot = ds.rowwise().sum();
  ds -= c.attn.cwiseProduct(row_dot.replicate(1, t));
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) {
      gbias[bucket(static_cast<int>(i), static_cast<int>(j), l.max_distance)] += ds(i, j);
    }
  }
  const Tensor2 dq = (ds * c.k) * scale;
  const Tensor2 dk = (ds.transpose() * c.q) * scale;
  const Tensor2& x = c.input;
  gq.noalias() += x.transpose() * dq;
  gk.noalias() += x.transpose() * dk;
  gv.noalias() += x.transpose() * dv;
  dx = dy;
  dx.noalias() += dq * wq.transpose();
  dx.noalias() += dk * wk.transpose();
  dx.noalias() += dv * wv.transpose();
}

// ---- LayerNorm ----
void forward(const LayerNorm& l, const double* p, const Tensor2& x, LayerCache& c, Tensor2& y) {
  check_input(x, l.dim, "LayerNorm");
  ConstVecMap gamma(p, l.dim), beta(p + l.dim, l.dim);
  c.input = x;
  const Eigen::VectorXd mean = x.rowwise().mean();
  c.xhat = x.colwise() - mean;
  const Eigen::VectorXd var = c.xhat.rowwise().squaredNorm() / l.dim;
  c.inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  c.xhat = c.inv_std.asDiagonal() * c.xhat;
  y = c.xhat * gamma.asDiagonal();
  y.rowwise() += beta.transpose();
}

void backward(const LayerNorm& l, const double* p, double* g, const LayerCache& c, const Tensor2& dy, Tensor2& dx) {
  ConstVecMap gamma(p, l.dim);
  MutVecMap(g, l.dim) += dy.cwiseProduct(c.xhat).colwise().sum().transpose();
  MutVecMap(g + l.dim, l.dim) += dy.colwise().sum().transpose();
  const Tensor2 dxhat = dy * gamma.asDiagonal();
  const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
  const Eigen::VectorXd mean_dx = dxhat.cwiseProduct(c.xhat).rowwise().mean();
  dx = dxhat.colwise() - mean_d;
  dx -= c.xhat.cwiseProduct(mean_dx.replicate(1, l.dim));
  dx = c.inv_std.asDiagonal() * dx;
}

int layer_in(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense& l) { return l.in; }, [](const TemporalConv& l) { return l.in; },
                               [](const SelfAttention& l) { return l.dim; }, [](const LayerNorm& l) { return l.dim; }},
                    layer);
}

int layer_out(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense& l) { return l.out; }, [](const TemporalConv& l) { return l.out; },
                               [](const SelfAttention& l) { return l.dim; }, [](const LayerNorm& l) { return l.dim; }},
                    layer);
}

}  // namespace

int NetSpec::input_dim() const { return layers.empty() ? 0 : layer_in(layers.front()); }
int NetSpec::output_dim() const { return layers.empty() ? 0 : layer_out(layers.back()); }

void NetSpec::validate() const {
  if (layers.empty()) fail(ErrorCode::kShapeMismatch, "network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layer_in(layers[i]) < 1 || layer_out(layers[i]) < 1) {
      fail(ErrorCode::kShapeMismatch, "layer " + std::to_string(i) + " has a zero dimension");
    }
    if (i > 0 && layer_out(layers[i - 1]) != layer_in(layers[i])) {
      fail(ErrorCode::kShapeMismatch, "layer " + std::to_string(i) + " input does not match previous output");
    }
  }
}

std::string NetSpec::canonical() const {
  std::ostringstream os;
  for (const auto& layer : layers) {
    std::visit(Overloaded{[&](const Dense& l) { os << "dense(" << l.in << "," << l.out << "," << act_name(l.act) << ");"; },
                          [&](const TemporalConv& l) {
                            os << "tconv3(" << l.in << "," << l.out << "," << act_name(l.act) << ");";
                          },
                          [&](const SelfAttention& l) { os << "attn(" << l.dim << "," << l.max_distance << ");"; },
                          [&](const LayerNorm& l) { os << "ln(" << l.dim << ");"; }},
               layer);
  }
  return os.str();
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t NetSpec::hash() const { return fnv1a64(canonical()); }

nlohmann::json to_json(const NetSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    std::visit(Overloaded{[&](const Dense& l) {
                            layers.push_back({{"type", "dense"}, {"in", l.in}, {"out", l.out}, {"act", act_name(l.act)}});
                          },
                          [&](const TemporalConv& l) {
                            layers.push_back(
                                {{"type", "tconv3"}, {"in", l.in}, {"out", l.out}, {"act", act_name(l.act)}});
                          },
                          [&](const SelfAttention& l) {
                            layers.push_back({{"type", "attn"}, {"dim", l.dim}, {"max_distance", l.max_distance}});
                          },
                          [&](const LayerNorm& l) { layers.push_back({{"type", "ln"}, {"dim", l.dim}}); }},
               layer);
  }
  return {{"layers", layers}};
}

NetSpec net_spec_from_json(const nlohmann::json& doc) {
  NetSpec spec;
  try {
    for (const auto& l : doc.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.emplace_back(Dense{l.at("in"), l.at("out"), act_from_name(l.at("act"))});
      } else if (type == "tconv3") {
        spec.layers.emplace_back(TemporalConv{l.at("in"), l.at("out"), act_from_name(l.at("act"))});
      } else if (type == "attn") {
        spec.layers.emplace_back(SelfAttention{l.at("dim"), l.at("max_distance")});
      } else if (type == "ln") {
        spec.layers.emplace_back(LayerNorm{l.at("dim")});
      } else {
        fail(ErrorCode::kSchemaError, "unknown layer type " + type);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, e.what());
  }
  spec.validate();
  return spec;
}

std::size_t param_count(const Layer& layer) {
  return std::visit(
      Overloaded{[](const Dense& l) { return static_cast<std::size_t>(l.in) * l.out + l.out; },
                 [](const TemporalConv& l) { return 3 * static_cast<std::size_t>(l.in) * l.out + l.out; },
                 [](const SelfAttention& l) { return 4 * static_cast<std::size_t>(l.dim) * l.dim + l.max_distance + 1; },
                 [](const LayerNorm& l) { return 2 * static_cast<std::size_t>(l.dim); }},
      layer);
}

std::size_t param_count(const NetSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec.layers) n += param_count(l);
  return n;
}

Vector init_params(const NetSpec& spec, Rng& rng) {
  spec.validate();
  Vector p = Vector::Zero(static_cast<Eigen::Index>(param_count(spec)));
  double* cursor = p.data();
  auto fill_uniform = [&](std::size_t count, double limit) {
    for (std::size_t i = 0; i < count; ++i) *cursor++ = rng.uniform(-limit, limit);
  };
  for (const auto& layer : spec.layers) {
    std::visit(Overloaded{[&](const Dense& l) {
                            fill_uniform(static_cast<std::size_t>(l.in) * l.out, std::sqrt(6.0 / (l.in + l.out)));
                            cursor += l.out;
                          },
                          [&](const TemporalConv& l) {
                            const double fan = 3.0 * l.in + l.out;
                            fill_uniform(3 * static_cast<std::size_t>(l.in) * l.out, std::sqrt(6.0 / fan));
                            cursor += l.out;
                          },
                          [&](const SelfAttention& l) {
                            const double limit = std::sqrt(6.0 / (2.0 * l.dim));
                            fill_uniform(3 * static_cast<std::size_t>(l.dim) * l.dim, limit);
                            // Output projection starts small so the block begins close to identity.
                            fill_uniform(static_cast<std::size_t>(l.dim) * l.dim, 0.1 * limit);
                            cursor += l.max_distance + 1;
                          },
                          [&](const LayerNorm& l) {
                            for (int i = 0; i < l.dim; ++i) *cursor++ = 1.0;
                            cursor += l.dim;
                          }},
               layer);
  }
  return p;
}

ForwardResult net_forward(const NetSpec& spec, const Vector& params, const Tensor2& x) {
  if (static_cast<std::size_t>(params.size()) != param_count(spec)) {
    fail(ErrorCode::kShapeMismatch, "parameter vector does not match network spec");
  }
  ForwardResult r;
  r.cache.resize(spec.layers.size());
  const double* p = params.data();
  Tensor2 h = x;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Tensor2 out;
    std::visit([&](const auto& l) { forward(l, p, h, r.cache[i], out); }, spec.layers[i]);
    p += param_count(spec.layers[i]);
    h = std::move(out);
  }
  r.y = std::move(h);
  return r;
}

Tensor2 net_apply(const NetSpec& spec, const Vector& params, const Tensor2& x) {
  return net_forward(spec, params, x).y;
}

BackwardResult net_backward(const NetSpec& spec, const Vector& params, const std::vector<LayerCache>& cache,
                            const Tensor2& dy) {
  if (cache.size() != spec.layers.size()) fail(ErrorCode::kShapeMismatch, "cache does not match network spec");
  if (dy.cols() != spec.output_dim() || dy.rows() != cache.front().input.rows()) {
    fail(ErrorCode::kShapeMismatch, "output gradient has the wrong shape");
  }
  BackwardResult r;
  r.dparams = Vector::Zero(params.size());
  std::vector<std::size_t> offsets(spec.layers.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    offsets[i] = off;
    off += param_count(spec.layers[i]);
  }
  Tensor2 grad = dy;
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    Tensor2 dx;
    std::visit([&](const auto& l) { backward(l, params.data() + offsets[i], r.dparams.data() + offsets[i], cache[i], grad, dx); },
               spec.layers[i]);
    grad = std::move(dx);
  }
  r.dx = std::move(grad);
  return r;
}

AdamState AdamState::for_params(std::size_t n, double lr) {
  AdamState s;
  s.m = Vector::Zero(static_cast<Eigen::Index>(n));
  s.v = Vector::Zero(static_cast<Eigen::Index>(n));
  s.lr = lr;
  return s;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorCode::kShapeMismatch, "Adam state, parameters and gradients must share a shape");
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

double clip_grad_norm(Vector& grads, double max_norm) {
  const double norm = grads.norm();
  if (norm > max_norm && norm > 0.0) grads *= max_norm / norm;
  return norm;
}

GradCheckReport finite_difference_check(const std::function<double(const Vector&)>& f, const Vector& x,
                                        const Vector& analytic, std::size_t num_coords, double tolerance,
                                        std::uint64_t seed, double h) {
  GradCheckReport report;
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first num_coords entries become a uniform sample.
  const std::size_t take = std::min(num_coords, n);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  Vector probe = x;
  for (std::size_t s = 0; s < take; ++s) {
    const std::size_t i = idx[s];
    const double orig = probe[static_cast<Eigen::Index>(i)];
    probe[static_cast<Eigen::Index>(i)] = orig + h;
    const double fp = f(probe);
    probe[static_cast<Eigen::Index>(i)] = orig - h;
    const double fm = f(probe);
    probe[static_cast<Eigen::Index>(i)] = orig;
    CoordCheck c;
    c.index = i;
    c.analytic = analytic[static_cast<Eigen::Index>(i)];
    c.numeric = (fp - fm) / (2.0 * h);
    c.rel_err = std::abs(c.analytic - c.numeric) / std::max({std::abs(c.analytic), std::abs(c.numeric), 1e-6});
    report.max_rel_err = std::max(report.max_rel_err, c.rel_err);
    report.coords.push_back(c);
  }
  report.passed = !report.coords.empty() && report.max_rel_err < tolerance;
  return report;
}

GradCheckReport grad_check(const NetSpec& spec, const Vector& params, const OutputLoss& loss, const Tensor2& x,
                           double tolerance, std::size_t num_coords, std::uint64_t seed) {
  const ForwardResult fr = net_forward(spec, params, x);
  const auto [value, dy] = loss(fr.y);
  const BackwardResult br = net_backward(spec, params, fr.cache, dy);
  auto f = [&](const Vector& p) { return loss(net_apply(spec, p, x)).first; };
  return finite_difference_check(f, params, br.dparams, num_coords, tolerance, seed);
}

namespace {
constexpr char kSpkwMagic[4] = {'S', 'P', 'K', 'W'};
constexpr std::uint16_t kSpkwVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::uint64_t spec_hash, const Vector& params) {
  std::string out(kSpkwMagic, 4);
  le::put_u16(out, kSpkwVersion);
  le::put_u64(out, spec_hash);
  le::put_u64(out, static_cast<std::uint64_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) le::put_f32(out, static_cast<float>(params[i]));
  write_file(path, out);
}

Vector load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 4 || bytes.compare(0, 4, std::string(kSpkwMagic, 4)) != 0) {
    fail(ErrorCode::kFormatError, "bad magic in " + path.string());
  }
  le::Reader r(std::string_view(bytes).substr(4));
  if (r.u16() != kSpkwVersion) fail(ErrorCode::kFormatError, "unsupported checkpoint version");
  if (r.u64() != expected_hash) fail(ErrorCode::kFormatError, "checkpoint was written for a different network");
  const std::uint64_t n = r.u64();
  if (r.remaining() != n * 4) fail(ErrorCode::kFormatError, "bad length in " + path.string());
  Vector p(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = r.f32();
  return p;
}

}  // namespace keyflow::nn
