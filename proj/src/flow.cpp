#include "uflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uflow/errors.hpp"

namespace uflow {

namespace {

void require_channels(const Volume& x, int expected, const char* layer) {
  if (x.channels() != expected) {
    throw ShapeError(std::string(layer) + " expects " + std::to_string(expected) +
                     " channels, got " + std::to_string(x.channels()));
  }
}

// dst += a * src over whole planes.
void axpy(std::span<double> dst, double a, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------- ActNorm

LayerOutput ActNorm::apply(const Volume& x, Direction dir) const {
  require_channels(x, channels(), "actnorm");
  double log_scale = 0.0;
  for (int c = 0; c < channels(); ++c) {
    if (scale[c] == 0.0) {
      throw InvertibilityError("actnorm scale of channel " + std::to_string(c) + " is zero");
    }
    log_scale += std::log(std::abs(scale[c]));
  }
  LayerOutput out{x, static_cast<double>(x.plane_size()) * log_scale};
  for (int c = 0; c < channels(); ++c) {
    auto ch = out.value.channel(c);
    if (dir == Direction::forward) {
      for (double& v : ch) v = scale[c] * v + bias[c];
    } else {
      for (double& v : ch) v = (v - bias[c]) / scale[c];
    }
  }
  if (dir == Direction::inverse) out.logdet = -out.logdet;
  return out;
}

Volume ActNorm::backward(const Volume& input, const Volume& grad_output, double grad_logdet,
                         ActNorm& grad) const {
  Volume grad_in(input.shape());
  const double positions = static_cast<double>(input.plane_size());
  for (int c = 0; c < channels(); ++c) {
    auto g = grad_output.channel(c);
    auto x = input.channel(c);
    auto gi = grad_in.channel(c);
    double gs = 0.0;
    double gb = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) {
      gs += g[p] * x[p];
      gb += g[p];
      gi[p] = scale[c] * g[p];
    }
    grad.scale[c] += gs + grad_logdet * positions / scale[c];
    grad.bias[c] += gb;
  }
  return grad_in;
}

// ------------------------------------------------------------- InvConv1x1

InvConv1x1 InvConv1x1::identity(int channels) {
  InvConv1x1 m;
  m.permutation.resize(channels);
  std::iota(m.permutation.begin(), m.permutation.end(), 0);
  m.sign.assign(channels, 1.0);
  m.lower.assign(packed_size(channels), 0.0);
  m.upper.assign(packed_size(channels), 0.0);
  m.log_diag.assign(channels, 0.0);
  return m;
}

InvConv1x1 InvConv1x1::from_matrix(int channels, std::span<const double> matrix) {
  const int n = channels;
  if (n <= 0 || matrix.size() != static_cast<std::size_t>(n) * n) {
    throw ShapeError("1x1 mixing matrix must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  std::vector<double> a(matrix.begin(), matrix.end());
  std::vector<int> pivot(n);
  std::iota(pivot.begin(), pivot.end(), 0);
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  for (int k = 0; k < n; ++k) {
    int best = k;
    for (int i = k + 1; i < n; ++i) {
      if (std::abs(at(i, k)) > std::abs(at(best, k))) best = i;
    }
    if (at(best, k) == 0.0) throw InvertibilityError("1x1 mixing matrix is singular");
    if (best != k) {
      for (int j = 0; j < n; ++j) std::swap(at(k, j), at(best, j));
      std::swap(pivot[k], pivot[best]);
    }
    for (int i = k + 1; i < n; ++i) {
      at(i, k) /= at(k, k);
      for (int j = k + 1; j < n; ++j) at(i, j) -= at(i, k) * at(k, j);
    }
  }
  InvConv1x1 m = identity(n);
  // Row i of the factored product is row pivot[i] of the input.
  for (int i = 0; i < n; ++i) m.permutation[pivot[i]] = i;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) m.lower[lower_index(i, j)] = at(i, j);
    for (int j = i + 1; j < n; ++j) m.upper[upper_index(i, j)] = at(i, j);
    m.sign[i] = at(i, i) > 0.0 ? 1.0 : -1.0;
    m.log_diag[i] = std::log(std::abs(at(i, i)));
  }
  return m;
}

InvConv1x1 InvConv1x1::random_rotation(int channels, Rng& rng) {
  const int n = channels;
  std::vector<double> g(static_cast<std::size_t>(n) * n);
  for (auto& v : g) v = rng.normal();
  // Modified Gram-Schmidt on the columns; positive R diagonal makes Q Haar.
  std::vector<double> q(g.size());
  auto col = [n](std::vector<double>& m, int j, int i) -> double& {
    return m[static_cast<std::size_t>(i) * n + j];
  };
  for (int j = 0; j < n; ++j) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = col(g, j, i);
    for (int k = 0; k < j; ++k) {
      double r = 0.0;
      for (int i = 0; i < n; ++i) r += col(q, k, i) * v[i];
      for (int i = 0; i < n; ++i) v[i] -= r * col(q, k, i);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw NumericError("degenerate random matrix");
    for (int i = 0; i < n; ++i) col(q, j, i) = v[i] / norm;
  }
  return from_matrix(n, q);
}

double InvConv1x1::lower_at(int i, int j) const {
  if (i == j) return 1.0;
  if (i < j) return 0.0;
  return lower[lower_index(i, j)];
}

double InvConv1x1::upper_at(int i, int j) const {
  if (i > j) return 0.0;
  if (i == j) return sign[i] * std::exp(log_diag[i]);
  return upper[upper_index(i, j)];
}

void InvConv1x1::check() const {
  const int n = channels();
  if (static_cast<int>(permutation.size()) != n || static_cast<int>(sign.size()) != n ||
      lower.size() != packed_size(n) || upper.size() != packed_size(n)) {
    throw ShapeError("1x1 mixing parameters are inconsistent");
  }
  for (int k = 0; k < n; ++k) {
    if (!std::isfinite(log_diag[k])) {
      throw InvertibilityError("1x1 mixing has a zero diagonal entry at " + std::to_string(k));
    }
  }
}

std::vector<double> InvConv1x1::matrix() const {
  const int n = channels();
  std::vector<double> lu(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k <= std::min(i, j); ++k) s += lower_at(i, k) * upper_at(k, j);
      lu[static_cast<std::size_t>(i) * n + j] = s;
    }
  }
  std::vector<double> w(lu.size());
  for (int i = 0; i < n; ++i) {
    std::copy_n(lu.begin() + static_cast<std::ptrdiff_t>(permutation[i]) * n, n,
                w.begin() + static_cast<std::ptrdiff_t>(i) * n);
  }
  return w;
}

LayerOutput InvConv1x1::apply(const Volume& x, Direction dir) const {
  check();
  require_channels(x, channels(), "1x1 mixing");
  const int n = channels();
  const double logdet =
      static_cast<double>(x.plane_size()) * std::accumulate(log_diag.begin(), log_diag.end(), 0.0);
  if (dir == Direction::forward) {
    const auto w = matrix();
    LayerOutput out{Volume(x.shape()), logdet};
    for (int o = 0; o < n; ++o) {
      auto dst = out.value.channel(o);
      for (int c = 0; c < n; ++c) {
        const double wt = w[static_cast<std::size_t>(o) * n + c];
        if (wt != 0.0) axpy(dst, wt, x.channel(c));
      }
    }
    return out;
  }
  // x = U^-1 L^-1 P^T y.
  LayerOutput out{Volume(x.shape()), -logdet};
  Volume& v = out.value;
  for (int i = 0; i < n; ++i) {
    auto src = x.channel(i);
    std::copy(src.begin(), src.end(), v.channel(permutation[i]).begin());
  }
  for (int i = 0; i < n; ++i) {
    auto vi = v.channel(i);
    for (int j = 0; j < i; ++j) {
      const double l = lower[lower_index(i, j)];
      if (l != 0.0) axpy(vi, -l, v.channel(j));
    }
  }
  for (int i = n - 1; i >= 0; --i) {
    auto vi = v.channel(i);
    for (int j = i + 1; j < n; ++j) {
      const double u = upper[upper_index(i, j)];
      if (u != 0.0) axpy(vi, -u, v.channel(j));
    }
    const double d = upper_at(i, i);
    for (double& e : vi) e /= d;
  }
  return out;
}

Volume InvConv1x1::backward(const Volume& input, const Volume& grad_output, double grad_logdet,
                            InvConv1x1& grad) const {
  const int n = channels();
  const auto w = matrix();
  auto idx = [n](int i, int j) { return static_cast<std::size_t>(i) * n + j; };

  Volume grad_in(input.shape());
  for (int c = 0; c < n; ++c) {
    auto dst = grad_in.channel(c);
    for (int o = 0; o < n; ++o) {
      const double wt = w[idx(o, c)];
      if (wt != 0.0) axpy(dst, wt, grad_output.channel(o));
    }
  }

  // G = sum over pixels of grad_output * input^T, then A = P^T G.
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (int o = 0; o < n; ++o) {
    for (int c = 0; c < n; ++c) {
      a[idx(permutation[o], c)] = dot(grad_output.channel(o), input.channel(c));
    }
  }
  // dL = A U^T (strict lower), dU = L^T A (upper incl. diagonal).
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      double s = 0.0;
      for (int k = j; k < n; ++k) s += a[idx(i, k)] * upper_at(j, k);
      grad.lower[lower_index(i, j)] += s;
    }
  }
  const double positions = static_cast<double>(input.plane_size());
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = i; k < n; ++k) s += lower_at(k, i) * a[idx(k, j)];
      if (i == j) {
        grad.log_diag[i] += s * upper_at(i, i) + grad_logdet * positions;
      } else {
        grad.upper[upper_index(i, j)] += s;
      }
    }
  }
  return grad_in;
}

// --------------------------------------------------------- AffineCoupling

AffineCoupling::AffineCoupling(int channels, int kernel_size, double clamp)
    : channels_(channels), clamp_(clamp) {
  if (channels <= 0 || channels % 2 != 0) {
    throw ShapeError("affine coupling needs an even channel count, got " + std::to_string(channels));
  }
  if (!(clamp > 0.0)) throw ParameterError("coupling clamp must be positive");
  first = ConvKernel(channels / 2, channels, kernel_size);
  second = ConvKernel(channels, channels, kernel_size);
}

namespace {

struct SubnetPass {
  Volume pre;  // first conv output, before ReLU
  Volume hidden;
  Volume out;  // [raw scale | shift]
};

SubnetPass run_subnet(const AffineCoupling& layer, const Volume& conditioner) {
  SubnetPass p;
  p.pre = conv2d(conditioner, layer.first);
  p.hidden = p.pre;
  for (double& v : p.hidden.data()) v = std::max(v, 0.0);
  p.out = conv2d(p.hidden, layer.second);
  return p;
}

}  // namespace

LayerOutput AffineCoupling::apply(const Volume& x, Direction dir) const {
  if (x.channels() % 2 != 0) {
    throw ShapeError("affine coupling needs an even channel count, got " +
                     std::to_string(x.channels()));
  }
  require_channels(x, channels_, "affine coupling");
  const int half = channels_ / 2;
  const auto net = run_subnet(*this, x.slice_channels(0, half));
  LayerOutput out{x, 0.0};
  double logdet = 0.0;
  for (int c = 0; c < half; ++c) {
    auto raw = net.out.channel(c);
    auto shift = net.out.channel(half + c);
    auto target = out.value.channel(half + c);
    for (std::size_t p = 0; p < target.size(); ++p) {
      const double log_scale = clamp_ * std::tanh(raw[p]);
      logdet += log_scale;
      if (dir == Direction::forward) {
        target[p] = std::exp(log_scale) * target[p] + shift[p];
      } else {
        target[p] = (target[p] - shift[p]) * std::exp(-log_scale);
      }
    }
  }
  out.logdet = dir == Direction::forward ? logdet : -logdet;
  return out;
}

Volume AffineCoupling::backward(const Volume& input, const Volume& grad_output,
                                double grad_logdet, AffineCoupling& grad) const {
  const int half = channels_ / 2;
  const Volume conditioner = input.slice_channels(0, half);
  const auto net = run_subnet(*this, conditioner);

  Volume grad_in(input.shape());
  Volume grad_net(channels_, input.height(), input.width());
  for (int c = 0; c < half; ++c) {
    auto raw = net.out.channel(c);
    auto xb = input.channel(half + c);
    auto gy = grad_output.channel(half + c);
    auto g_raw = grad_net.channel(c);
    auto g_shift = grad_net.channel(half + c);
    auto g_xb = grad_in.channel(half + c);
    for (std::size_t p = 0; p < gy.size(); ++p) {
      const double th = std::tanh(raw[p]);
      const double scale = std::exp(clamp_ * th);
      g_xb[p] = gy[p] * scale;
      g_shift[p] = gy[p];
      g_raw[p] = (gy[p] * xb[p] * scale + grad_logdet) * clamp_ * (1.0 - th * th);
    }
  }
  conv2d_accumulate_kernel_grad(net.hidden, grad_net, grad.second);
  Volume g_hidden = conv2d_backward_input(grad_net, second);
  for (std::size_t p = 0; p < g_hidden.size(); ++p) {
    if (!(net.pre.data()[p] > 0.0)) g_hidden.data()[p] = 0.0;
  }
  conv2d_accumulate_kernel_grad(conditioner, g_hidden, grad.first);
  const Volume g_cond = conv2d_backward_input(g_hidden, first);
  for (int c = 0; c < half; ++c) {
    auto dst = grad_in.channel(c);
    auto pass = grad_output.channel(c);
    auto via_net = g_cond.channel(c);
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = pass[p] + via_net[p];
  }
  return grad_in;
}

// ------------------------------------------------------------- upsampling

Volume invertible_upsample(const Volume& x, Direction dir) {
  if (dir == Direction::forward) {
    if (x.channels() % 4 != 0) {
      throw ShapeError("invertible upsample needs channels divisible by 4, got " +
                       std::to_string(x.channels()));
    }
    const int c_out = x.channels() / 4;
    Volume out(c_out, 2 * x.height(), 2 * x.width());
    for (int k = 0; k < c_out; ++k) {
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
          const int src = 4 * k + 2 * r + c;
          for (int i = 0; i < x.height(); ++i) {
            for (int j = 0; j < x.width(); ++j) out(k, 2 * i + r, 2 * j + c) = x(src, i, j);
          }
        }
      }
    }
    return out;
  }
  if (x.height() % 2 != 0 || x.width() % 2 != 0) {
    throw ShapeError("inverse upsample needs even spatial size");
  }
  Volume out(4 * x.channels(), x.height() / 2, x.width() / 2);
  for (int k = 0; k < x.channels(); ++k) {
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        const int dst = 4 * k + 2 * r + c;
        for (int i = 0; i < out.height(); ++i) {
          for (int j = 0; j < out.width(); ++j) out(dst, i, j) = x(k, 2 * i + r, 2 * j + c);
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ graph

std::vector<int> stage_channel_counts(const std::vector<int>& feature_channels) {
  const int levels = static_cast<int>(feature_channels.size());
  if (levels == 0) throw ParameterError("flow needs at least one level");
  for (int l = 0; l < levels; ++l) {
    if (feature_channels[l] <= 0) {
      throw ShapeError("stage " + std::to_string(l) + ": feature channel count must be positive");
    }
  }
  std::vector<int> d(levels);
  d[levels - 1] = feature_channels[levels - 1];
  for (int l = levels - 1; l >= 0; --l) {
    if (l < levels - 1) d[l] = feature_channels[l] + d[l + 1] / 8;
    if (d[l] % 2 != 0) {
      throw ShapeError("stage " + std::to_string(l) + ": input channel count " +
                       std::to_string(d[l]) + " is odd");
    }
    if (l > 0 && d[l] % 8 != 0) {
      throw ShapeError("stage " + std::to_string(l) + ": input channel count " +
                       std::to_string(d[l]) + " is not divisible by 8");
    }
  }
  return d;
}

std::size_t LatentPyramid::total_size() const {
  std::size_t n = 0;
  for (const auto& v : z) n += v.size();
  return n;
}

UFlowGraph::UFlowGraph(GraphConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.steps_per_stage < 1) throw ParameterError("steps_per_stage must be positive");
  stage_channels_ = stage_channel_counts(config_.feature_channels);
  Rng rng(seed);
  stages_.resize(stage_channels_.size());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const int d = stage_channels_[s];
    for (int t = 0; t < config_.steps_per_stage; ++t) {
      FlowStep step;
      step.actnorm = ActNorm(d);
      step.mixing = InvConv1x1::random_rotation(d, rng);
      step.coupling = AffineCoupling(d, step_kernel_size(t), config_.clamp);
      const int k = step.coupling.first.size;
      const double spread = 1.0 / std::sqrt(static_cast<double>(d / 2 * k * k));
      for (double& w : step.coupling.first.weight) w = spread * rng.normal();
      stages_[s].push_back(std::move(step));
    }
  }
}

UFlowGraph UFlowGraph::identity(GraphConfig config) {
  UFlowGraph g(std::move(config), 0);
  for (auto& stage : g.stages_) {
    for (auto& step : stage) {
      step.mixing = InvConv1x1::identity(step.actnorm.channels());
      std::fill(step.coupling.first.weight.begin(), step.coupling.first.weight.end(), 0.0);
    }
  }
  return g;
}

int UFlowGraph::latent_channels(int level) const {
  return level == 0 ? stage_channels_[0] : stage_channels_[level] / 2;
}

void UFlowGraph::check_features(const FeaturePyramid& features) const {
  if (features.num_levels() != num_levels()) {
    throw ShapeError("graph has " + std::to_string(num_levels()) + " stages, input has " +
                     std::to_string(features.num_levels()) + " levels");
  }
  features.validate();
  for (int l = 0; l < num_levels(); ++l) {
    if (features.levels[l].channels() != config_.feature_channels[l]) {
      throw ShapeError("stage " + std::to_string(l) + ": expected " +
                       std::to_string(config_.feature_channels[l]) + " feature channels, got " +
                       std::to_string(features.levels[l].channels()));
    }
  }
}

Volume UFlowGraph::run_steps(int stage, Volume x, double& logdet,
                             std::vector<Tape::StepRecord>* records, int stop_step) const {
  const auto& steps = stages_[stage];
  for (int t = 0; t < static_cast<int>(steps.size()); ++t) {
    if (t == stop_step) return x;
    auto a = steps[t].actnorm.apply(x, Direction::forward);
    auto m = steps[t].mixing.apply(a.value, Direction::forward);
    auto c = steps[t].coupling.apply(m.value, Direction::forward);
    logdet += a.logdet + m.logdet + c.logdet;
    if (records) {
      records->push_back({std::move(x), std::move(a.value), std::move(m.value)});
    }
    x = std::move(c.value);
  }
  return x;
}

LatentPyramid UFlowGraph::forward(const FeaturePyramid& features) const {
  check_features(features);
  const int levels = num_levels();
  LatentPyramid out;
  out.z.resize(levels);
  Volume carry;
  for (int s = levels - 1; s >= 0; --s) {
    Volume x = s == levels - 1 ? features.levels[s] : concat_channels(features.levels[s], carry);
    Volume y = run_steps(s, std::move(x), out.logdet, nullptr, -1);
    if (s > 0) {
      const int half = stage_channels_[s] / 2;
      out.z[s] = y.slice_channels(0, half);
      carry = invertible_upsample(y.slice_channels(half, half), Direction::forward);
    } else {
      out.z[0] = std::move(y);
    }
  }
  return out;
}

LatentPyramid UFlowGraph::forward(const FeaturePyramid& features, Tape& tape) const {
  check_features(features);
  const int levels = num_levels();
  tape.stages.assign(levels, {});
  LatentPyramid out;
  out.z.resize(levels);
  Volume carry;
  for (int s = levels - 1; s >= 0; --s) {
    Volume x = s == levels - 1 ? features.levels[s] : concat_channels(features.levels[s], carry);
    Volume y = run_steps(s, std::move(x), out.logdet, &tape.stages[s], -1);
    if (s > 0) {
      const int half = stage_channels_[s] / 2;
      out.z[s] = y.slice_channels(0, half);
      carry = invertible_upsample(y.slice_channels(half, half), Direction::forward);
    } else {
      out.z[0] = std::move(y);
    }
  }
  return out;
}

Volume UFlowGraph::actnorm_input(const FeaturePyramid& features, int stage, int step) const {
  check_features(features);
  const int levels = num_levels();
  if (stage < 0 || stage >= levels || step < 0 || step >= config_.steps_per_stage) {
    throw ParameterError("actnorm_input: no layer at stage " + std::to_string(stage) + " step " +
                         std::to_string(step));
  }
  double logdet = 0.0;
  Volume carry;
  for (int s = levels - 1; s >= stage; --s) {
    Volume x = s == levels - 1 ? features.levels[s] : concat_channels(features.levels[s], carry);
    if (s == stage) return run_steps(s, std::move(x), logdet, nullptr, step);
    Volume y = run_steps(s, std::move(x), logdet, nullptr, -1);
    const int half = stage_channels_[s] / 2;
    carry = invertible_upsample(y.slice_channels(half, half), Direction::forward);
  }
  throw ParameterError("actnorm_input: unreachable stage");
}

InverseResult UFlowGraph::inverse(const LatentPyramid& latents) const {
  const int levels = num_levels();
  if (static_cast<int>(latents.z.size()) != levels) {
    throw ShapeError("graph has " + std::to_string(levels) + " stages, latents have " +
                     std::to_string(latents.z.size()) + " levels");
  }
  const int h0 = latents.z[0].height();
  const int w0 = latents.z[0].width();
  for (int l = 0; l < levels; ++l) {
    const auto& z = latents.z[l];
    if (z.channels() != latent_channels(l)) {
      throw ShapeError("stage " + std::to_string(l) + ": expected " +
                       std::to_string(latent_channels(l)) + " latent channels, got " +
                       std::to_string(z.channels()));
    }
    if ((z.height() << l) != h0 || (z.width() << l) != w0) {
      throw ShapeError("stage " + std::to_string(l) + ": latent spatial size is not dyadic");
    }
  }
  InverseResult out;
  out.features.levels.resize(levels);
  Volume carry;  // second half of the next coarser stage output, at this resolution
  for (int s = 0; s < levels; ++s) {
    Volume y = s == 0 ? latents.z[0] : concat_channels(latents.z[s], carry);
    const auto& steps = stages_[s];
    for (int t = static_cast<int>(steps.size()) - 1; t >= 0; --t) {
      auto c = steps[t].coupling.apply(y, Direction::inverse);
      auto m = steps[t].mixing.apply(c.value, Direction::inverse);
      auto a = steps[t].actnorm.apply(m.value, Direction::inverse);
      out.logdet += c.logdet + m.logdet + a.logdet;
      y = std::move(a.value);
    }
    if (s < levels - 1) {
      const int feat = config_.feature_channels[s];
      out.features.levels[s] = y.slice_channels(0, feat);
      carry = invertible_upsample(y.slice_channels(feat, stage_channels_[s] - feat),
                                  Direction::inverse);
    } else {
      out.features.levels[s] = std::move(y);
    }
  }
  return out;
}

FeaturePyramid UFlowGraph::backward(const Tape& tape, const std::vector<Volume>& grad_latents,
                                    double grad_logdet, UFlowGraph& grad) const {
  const int levels = num_levels();
  if (static_cast<int>(tape.stages.size()) != levels ||
      static_cast<int>(grad_latents.size()) != levels) {
    throw ShapeError("backward: tape or latent gradient does not match the graph");
  }
  FeaturePyramid grad_features;
  grad_features.levels.resize(levels);
  Volume grad_carry;
  for (int s = 0; s < levels; ++s) {
    Volume g = s == 0 ? grad_latents[0]
                      : concat_channels(grad_latents[s],
                                        invertible_upsample(grad_carry, Direction::inverse));
    const auto& steps = stages_[s];
    for (int t = static_cast<int>(steps.size()) - 1; t >= 0; --t) {
      const auto& rec = tape.stages[s][t];
      auto& gstep = grad.stages_[s][t];
      g = steps[t].coupling.backward(rec.after_mixing, g, grad_logdet, gstep.coupling);
      g = steps[t].mixing.backward(rec.after_actnorm, g, grad_logdet, gstep.mixing);
      g = steps[t].actnorm.backward(rec.input, g, grad_logdet, gstep.actnorm);
    }
    if (s < levels - 1) {
      const int feat = config_.feature_channels[s];
      grad_features.levels[s] = g.slice_channels(0, feat);
      grad_carry = g.slice_channels(feat, stage_channels_[s] - feat);
    } else {
      grad_features.levels[s] = std::move(g);
    }
  }
  return grad_features;
}

UFlowGraph UFlowGraph::zeros_like() const {
  UFlowGraph g = *this;
  g.visit_parameters([](const std::string&, std::span<double> v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return g;
}

std::size_t UFlowGraph::parameter_count() const {
  std::size_t n = 0;
  visit_parameters([&](const std::string&, std::span<const double> v) { n += v.size(); });
  return n;
}

void UFlowGraph::round_to_float32() {
  visit_parameters([](const std::string&, std::span<double> v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  });
}

}  // namespace uflow
