#include "uflow/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "uflow/errors.hpp"
#include "uflow/parallel.hpp"
#include "uflow/rng.hpp"

namespace uflow {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

std::string layer_name(int stage, int step, const char* layer) {
  return "stage " + std::to_string(stage) + " step " + std::to_string(step) + " " + layer;
}

void check_tape(const Tape& tape) {
  for (std::size_t s = 0; s < tape.stages.size(); ++s) {
    for (std::size_t t = 0; t < tape.stages[s].size(); ++t) {
      const auto& rec = tape.stages[s][t];
      const int si = static_cast<int>(s);
      const int ti = static_cast<int>(t);
      if (!rec.input.all_finite()) throw NumericError("non-finite input to " + layer_name(si, ti, "actnorm"));
      if (!rec.after_actnorm.all_finite()) throw NumericError("non-finite output of " + layer_name(si, ti, "actnorm"));
      if (!rec.after_mixing.all_finite()) throw NumericError("non-finite output of " + layer_name(si, ti, "1x1 mixing"));
    }
  }
}

std::vector<double> flatten(const UFlowGraph& g) {
  std::vector<double> out;
  out.reserve(g.parameter_count());
  g.visit_parameters([&](const std::string&, std::span<const double> v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ParameterError("learning_rate must be positive");
  }
  if (config.batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (config.epochs < 0) throw ParameterError("epochs must be non-negative");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ParameterError("Adam betas must lie in [0, 1)");
  }
  if (!(config.epsilon > 0.0)) throw ParameterError("Adam epsilon must be positive");
}

double nll_loss(const LatentPyramid& latents) {
  const double d = static_cast<double>(latents.total_size());
  if (d == 0.0) throw ShapeError("nll_loss: empty latents");
  double sum = 0.0;
  for (const auto& z : latents.z) {
    for (double v : z.data()) sum += 0.5 * v * v;
  }
  const double loss = (sum - latents.logdet) / d + kHalfLog2Pi;
  if (!std::isfinite(loss)) throw NumericError("non-finite latents or log-determinant");
  return loss;
}

NllGradient grad_nll(const UFlowGraph& graph, const FeaturePyramid& features) {
  if (!graph.actnorm_initialized()) throw ParameterError("grad_nll: actnorm is not initialized");
  Tape tape;
  const auto latents = graph.forward(features, tape);
  check_tape(tape);
  for (std::size_t l = 0; l < latents.z.size(); ++l) {
    if (!latents.z[l].all_finite()) throw NumericError("non-finite latent at level " + std::to_string(l));
  }
  NllGradient out{nll_loss(latents), graph.zeros_like()};
  const double inv_d = 1.0 / static_cast<double>(latents.total_size());
  std::vector<Volume> grad_z = latents.z;
  for (auto& g : grad_z) {
    for (double& v : g.data()) v *= inv_d;
  }
  graph.backward(tape, grad_z, -inv_d, out.grad);
  return out;
}

void actnorm_init(UFlowGraph& graph, const std::vector<FeaturePyramid>& batch, int jobs) {
  if (batch.empty()) throw ParameterError("actnorm_init: empty batch");
  const int levels = graph.num_levels();
  for (int s = levels - 1; s >= 0; --s) {
    for (int t = 0; t < graph.config().steps_per_stage; ++t) {
      std::vector<Volume> inputs(batch.size());
      parallel_for(batch.size(), jobs, [&](std::size_t i) {
        inputs[i] = graph.actnorm_input(batch[i], s, t);
      });
      auto& actnorm = graph.stages()[s][t].actnorm;
      for (int c = 0; c < actnorm.channels(); ++c) {
        double n = 0.0;
        double sum = 0.0;
        for (const auto& x : inputs) {
          for (double v : x.channel(c)) sum += v;
          n += static_cast<double>(x.plane_size());
        }
        const double mean = sum / n;
        double var = 0.0;
        for (const auto& x : inputs) {
          for (double v : x.channel(c)) var += (v - mean) * (v - mean);
        }
        const double sd = std::max(std::sqrt(var / n), 1e-6);
        actnorm.scale[c] = 1.0 / sd;
        actnorm.bias[c] = -mean / sd;
      }
    }
  }
  graph.set_actnorm_initialized(true);
}

double mean_nll(const UFlowGraph& graph, const std::vector<FeaturePyramid>& dataset, int jobs) {
  if (dataset.empty()) throw ParameterError("mean_nll: empty dataset");
  std::vector<double> losses(dataset.size());
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    losses[i] = nll_loss(graph.forward(dataset[i]));
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

TrainHistory train(UFlowGraph& graph, const std::vector<FeaturePyramid>& dataset,
                   const TrainConfig& config) {
  validate(config);
  if (dataset.empty()) throw ParameterError("train: empty dataset");
  Rng rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  if (!graph.actnorm_initialized()) {
    rng.shuffle(order);
    const std::size_t n = std::min<std::size_t>(order.size(), config.batch_size);
    std::vector<FeaturePyramid> first;
    for (std::size_t i = 0; i < n; ++i) first.push_back(dataset[order[i]]);
    actnorm_init(graph, first, config.jobs);
    graph.round_to_float32();
  }

  TrainHistory history;
  try {
    history.mean_nll.push_back(mean_nll(graph, dataset, config.jobs));
  } catch (const NumericError& e) {
    throw TrainingError(std::string("initial NLL: ") + e.what());
  }
  if (!std::isfinite(history.mean_nll[0])) throw TrainingError("initial NLL is not finite");

  const std::size_t count = graph.parameter_count();
  std::vector<double> m(count, 0.0);
  std::vector<double> v(count, 0.0);
  long long step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      std::vector<NllGradient> grads(n);
      try {
        parallel_for(n, config.jobs, [&](std::size_t i) {
          grads[i] = grad_nll(graph, dataset[order[start + i]]);
        });
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + ": " + e.what());
      }
      std::vector<double> g(count, 0.0);
      double batch_loss = 0.0;
      for (const auto& sample : grads) {
        batch_loss += sample.loss;
        const auto flat = flatten(sample.grad);
        for (std::size_t k = 0; k < count; ++k) g[k] += flat[k];
      }
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + ": NLL is not finite");
      }
      double norm = 0.0;
      for (double& x : g) {
        x /= static_cast<double>(n);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + ": gradient is not finite");
      }
      if (config.gradient_clip_norm > 0.0 && norm > config.gradient_clip_norm) {
        const double shrink = config.gradient_clip_norm / norm;
        for (double& x : g) x *= shrink;
      }

      ++step;
      const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      std::size_t k = 0;
      graph.visit_parameters([&](const std::string&, std::span<double> values) {
        for (double& p : values) {
          m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
          v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
          const double mhat = m[k] / bias1;
          const double vhat = v[k] / bias2;
          p -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
          ++k;
        }
      });
      graph.round_to_float32();
      epoch_sum += batch_loss;
      ++batches;
    }
    history.mean_nll.push_back(epoch_sum / static_cast<double>(batches));
  }
  return history;
}

void write_loss_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_nll\n";
  char buf[64];
  for (std::size_t e = 0; e < history.mean_nll.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.17g", history.mean_nll[e]);
    out << e << ',' << buf << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace uflow
