#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uflow/features.hpp"
#include "uflow/flow.hpp"

namespace uflow {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 1;
  double gradient_clip_norm = 1.0;  // global L2 norm; <= 0 disables clipping
  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int jobs = 1;  // threads for per-sample gradients; does not affect results
};

// Throws ParameterError on invalid settings.
void validate(const TrainConfig& config);

// Mean negative log-likelihood per latent dimension under N(0, 1):
// (1/D) [sum(z^2/2 + ln(2 pi)/2) - logdet]. Throws NumericError on
// non-finite latents.
double nll_loss(const LatentPyramid& latents);

struct NllGradient {
  double loss = 0.0;
  UFlowGraph grad;  // same structure as the graph, holding d(loss)/d(param)
};

// Reverse-mode gradient of nll_loss(forward(features)).
// Throws ParameterError if actnorms are not initialized, NumericError naming
// the layer if an intermediate is non-finite.
NllGradient grad_nll(const UFlowGraph& graph, const FeaturePyramid& features);

// Data-dependent actnorm initialization, layer by layer in evaluation order.
// Throws ParameterError on an empty batch.
void actnorm_init(UFlowGraph& graph, const std::vector<FeaturePyramid>& batch, int jobs = 1);

struct TrainHistory {
  // Entry 0 is the dataset mean NLL right after actnorm initialization;
  // entry e the mean batch NLL during epoch e.
  std::vector<double> mean_nll;
};

// Mini-batch Adam with global-norm clipping. Parameters are kept
// float32-representable after every update. Throws TrainingError on
// divergence.
TrainHistory train(UFlowGraph& graph, const std::vector<FeaturePyramid>& dataset,
                   const TrainConfig& config);

// Mean NLL of the graph over a dataset.
double mean_nll(const UFlowGraph& graph, const std::vector<FeaturePyramid>& dataset, int jobs = 1);

// CSV with header "epoch,mean_nll".
void write_loss_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace uflow
