#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uflow/features.hpp"
#include "uflow/numerics.hpp"
#include "uflow/rng.hpp"
#include "uflow/volume.hpp"

namespace uflow {

enum class Direction { forward, inverse };

struct LayerOutput {
  Volume value;
  double logdet = 0.0;  // log|det J| of the applied direction
};

// Per-channel affine map y = scale * x + bias.
class ActNorm {
 public:
  ActNorm() = default;
  explicit ActNorm(int channels) : scale(channels, 1.0), bias(channels, 0.0) {}

  int channels() const { return static_cast<int>(scale.size()); }

  // Throws InvertibilityError if any scale is zero.
  LayerOutput apply(const Volume& x, Direction dir) const;

  // Returns d(loss)/d(input); adds parameter gradients into `grad`.
  // `grad_logdet` is d(loss)/d(total logdet).
  Volume backward(const Volume& input, const Volume& grad_output, double grad_logdet,
                  ActNorm& grad) const;

  template <typename F>
  void visit(F&& f) {
    f("actnorm.scale", std::span<double>(scale));
    f("actnorm.bias", std::span<double>(bias));
  }

  std::vector<double> scale;
  std::vector<double> bias;
};

// Learned invertible 1x1 convolution, W = P * L * U with P a fixed
// permutation, L unit lower triangular and U upper triangular whose diagonal
// is sign * exp(log_diag).
class InvConv1x1 {
 public:
  InvConv1x1() = default;
  static InvConv1x1 identity(int channels);
  // Haar-random rotation, factored with partial pivoting.
  static InvConv1x1 random_rotation(int channels, Rng& rng);
  // Factors an arbitrary row-major matrix. Throws InvertibilityError if it is
  // singular.
  static InvConv1x1 from_matrix(int channels, std::span<const double> matrix);

  int channels() const { return static_cast<int>(log_diag.size()); }
  std::vector<double> matrix() const;  // row-major dense W

  double lower_at(int i, int j) const;  // i > j
  double upper_at(int i, int j) const;  // i <= j, diagonal included
  static std::size_t packed_size(int channels) {
    return static_cast<std::size_t>(channels) * (channels - 1) / 2;
  }
  static std::size_t lower_index(int i, int j) { return static_cast<std::size_t>(i) * (i - 1) / 2 + j; }
  static std::size_t upper_index(int i, int j) { return static_cast<std::size_t>(j) * (j - 1) / 2 + i; }

  // Inverse applies two triangular solves; W^-1 is never formed.
  LayerOutput apply(const Volume& x, Direction dir) const;
  Volume backward(const Volume& input, const Volume& grad_output, double grad_logdet,
                  InvConv1x1& grad) const;

  template <typename F>
  void visit(F&& f) {
    f("mixing.lower", std::span<double>(lower));
    f("mixing.upper", std::span<double>(upper));
    f("mixing.log_diag", std::span<double>(log_diag));
  }

  // (P v)[i] = v[permutation[i]]; fixed, not trained.
  std::vector<int> permutation;
  std::vector<double> sign;  // +-1, fixed
  std::vector<double> lower;  // strictly lower part, packed row by row
  std::vector<double> upper;  // strictly upper part, packed column by column
  std::vector<double> log_diag;

 private:
  void check() const;
};

// Affine coupling: the first half conditions a scale and shift of the second
// half through conv(k) -> ReLU -> conv(k). The scale is soft-clamped as
// exp(clamp * tanh(raw)).
class AffineCoupling {
 public:
  AffineCoupling() = default;
  AffineCoupling(int channels, int kernel_size, double clamp);

  int channels() const { return channels_; }
  double clamp() const { return clamp_; }
  int kernel_size() const { return first.size; }

  LayerOutput apply(const Volume& x, Direction dir) const;
  Volume backward(const Volume& input, const Volume& grad_output, double grad_logdet,
                  AffineCoupling& grad) const;

  template <typename F>
  void visit(F&& f) {
    f("coupling.first.weight", std::span<double>(first.weight));
    f("coupling.first.bias", std::span<double>(first.bias));
    f("coupling.second.weight", std::span<double>(second.weight));
    f("coupling.second.bias", std::span<double>(second.bias));
  }

  ConvKernel first;   // C/2 -> C
  ConvKernel second;  // C -> C, first half raw scale, second half shift

 private:
  int channels_ = 0;
  double clamp_ = 2.0;
};

// [4C, H, W] -> [C, 2H, 2W]: output (k, 2i+r, 2j+c) reads input (4k+2r+c, i, j).
// Throws ShapeError unless the channel count is divisible by 4 (forward) .
Volume invertible_upsample(const Volume& x, Direction dir);

struct FlowStep {
  ActNorm actnorm;
  InvConv1x1 mixing;
  AffineCoupling coupling;

  template <typename F>
  void visit(F&& f) {
    actnorm.visit(f);
    mixing.visit(f);
    coupling.visit(f);
  }
};

struct GraphConfig {
  std::vector<int> feature_channels;  // C_l, finest first
  int steps_per_stage = 4;
  double clamp = 2.0;
};

// Input channel count D_l of every stage, finest first:
// D_{L-1} = C_{L-1}, D_l = C_l + D_{l+1} / 8. Throws ShapeError naming the
// stage if a count violates the split/reorganization divisibility rules.
std::vector<int> stage_channel_counts(const std::vector<int>& feature_channels);

struct LatentPyramid {
  std::vector<Volume> z;  // finest first
  double logdet = 0.0;

  std::size_t total_size() const;
};

struct InverseResult {
  FeaturePyramid features;
  double logdet = 0.0;  // equals minus the forward logdet
};

// Intermediates recorded by a forward pass for reverse-mode differentiation.
struct Tape {
  struct StepRecord {
    Volume input;          // actnorm input
    Volume after_actnorm;  // mixing input
    Volume after_mixing;   // coupling input
  };
  std::vector<std::vector<StepRecord>> stages;  // finest first
};

// The U-shaped flow. Stages run coarsest first; every non-finest stage emits
// the first half of its output channels as a latent and hands the second
// half, upsampled, to the next finer stage, where it is appended after the
// feature channels. The finest stage's whole output is the last latent.
class UFlowGraph {
 public:
  UFlowGraph() = default;
  // Mixings start as random rotations, actnorms and couplings as identities
  // (the second subnet convolution is zero, the first is random).
  UFlowGraph(GraphConfig config, std::uint64_t seed);
  // Every layer an identity: identity mixings, unit actnorms, zero subnets.
  static UFlowGraph identity(GraphConfig config);

  const GraphConfig& config() const { return config_; }
  int num_levels() const { return static_cast<int>(config_.feature_channels.size()); }
  const std::vector<int>& stage_channels() const { return stage_channels_; }
  // Channel count of latent l.
  int latent_channels(int level) const;

  std::vector<std::vector<FlowStep>>& stages() { return stages_; }
  const std::vector<std::vector<FlowStep>>& stages() const { return stages_; }

  bool actnorm_initialized() const { return actnorm_initialized_; }
  void set_actnorm_initialized(bool v) { actnorm_initialized_ = v; }

  LatentPyramid forward(const FeaturePyramid& features) const;
  LatentPyramid forward(const FeaturePyramid& features, Tape& tape) const;
  InverseResult inverse(const LatentPyramid& latents) const;

  // Propagates d(loss)/d(z) and d(loss)/d(logdet) back through a recorded
  // pass. Parameter gradients are added into `grad` (shaped like *this);
  // the return value is d(loss)/d(features).
  FeaturePyramid backward(const Tape& tape, const std::vector<Volume>& grad_latents,
                          double grad_logdet, UFlowGraph& grad) const;

  // Input of the actnorm of (stage, step) for `features`, running the graph
  // only as far as needed.
  Volume actnorm_input(const FeaturePyramid& features, int stage, int step) const;

  // Same structure with every trainable array set to zero.
  UFlowGraph zeros_like() const;

  // Visits trainable arrays as f(name, span) in declaration order: stages
  // finest first, steps in order, layer fields as declared.
  template <typename F>
  void visit_parameters(F&& f) {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t t = 0; t < stages_[s].size(); ++t) {
        const std::string prefix = "stage" + std::to_string(s) + ".step" + std::to_string(t) + ".";
        stages_[s][t].visit([&](const std::string& name, std::span<double> values) {
          f(prefix + name, values);
        });
      }
    }
  }
  template <typename F>
  void visit_parameters(F&& f) const {
    const_cast<UFlowGraph*>(this)->visit_parameters(
        [&](const std::string& name, std::span<double> values) {
          f(name, std::span<const double>(values));
        });
  }

  std::size_t parameter_count() const;
  // Rounds every trainable value to the nearest float32.
  void round_to_float32();

 private:
  void check_features(const FeaturePyramid& features) const;
  Volume run_steps(int stage, Volume x, double& logdet, std::vector<Tape::StepRecord>* records,
                   int stop_step) const;

  GraphConfig config_;
  std::vector<int> stage_channels_;
  std::vector<std::vector<FlowStep>> stages_;  // finest first
  bool actnorm_initialized_ = false;
};

// Kernel size used by the coupling subnet of a step: 1, 3, 1, 3, ...
inline int step_kernel_size(int step) { return step % 2 == 0 ? 1 : 3; }

}  // namespace uflow
