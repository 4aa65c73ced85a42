#include "uflow/nfa.hpp"

#include <cmath>
#include <string>

#include "uflow/errors.hpp"
#include "uflow/numerics.hpp"

namespace uflow {

double NfaConfig::tau() const {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("nfa p must lie in (0, 1)");
  return chi2_quantile(p);
}

void validate(const NfaConfig& config, const LatentPyramid& latents) {
  if (!(config.p > 0.0 && config.p < 1.0)) throw ParameterError("nfa p must lie in (0, 1)");
  if (config.windows.size() != latents.z.size()) {
    throw ParameterError("nfa needs one window per scale: got " +
                         std::to_string(config.windows.size()) + " for " +
                         std::to_string(latents.z.size()) + " scales");
  }
  for (std::size_t l = 0; l < latents.z.size(); ++l) {
    const int w = config.windows[l];
    const auto& z = latents.z[l];
    if (w <= 0 || w % 2 == 0) {
      throw ParameterError("window of scale " + std::to_string(l) + " must be odd, got " +
                           std::to_string(w));
    }
    if (w > 2 * std::min(z.height(), z.width()) - 1) {
      throw ParameterError("window " + std::to_string(w) + " of scale " + std::to_string(l) +
                           " exceeds its " + std::to_string(z.height()) + "x" +
                           std::to_string(z.width()) + " grid");
    }
  }
}

std::vector<Volume> candidate_mask(const LatentPyramid& latents, double tau) {
  if (!(tau >= 0.0)) throw ParameterError("candidate threshold must be non-negative");
  std::vector<Volume> masks;
  masks.reserve(latents.z.size());
  for (const auto& z : latents.z) {
    Volume m(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      m.data()[i] = z.data()[i] * z.data()[i] > tau ? 1.0 : 0.0;
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

LogNfaMap log_nfa_map(const LatentPyramid& latents, const NfaConfig& config) {
  if (latents.z.empty()) throw ShapeError("log_nfa_map: no latents");
  validate(config, latents);
  const auto masks = candidate_mask(latents, config.tau());
  const double q = 1.0 - config.p;
  const Precision precision = config.high_precision ? Precision::extended : Precision::standard;
  const int h = latents.z[0].height();
  const int w = latents.z[0].width();

  LogNfaMap out;
  out.map = Raster(h, w, 0.0);
  for (std::size_t l = 0; l < masks.size(); ++l) {
    const auto& mask = masks[l];
    const double channels = mask.channels();
    const auto blocks = block_counts(mask, config.windows[l]);
    Raster tail(mask.height(), mask.width());
    for (std::size_t p = 0; p < tail.size(); ++p) {
      const double k = static_cast<double>(blocks.counts[p]) / channels;
      const double n = static_cast<double>(blocks.sizes[p] / mask.channels());
      tail.values[p] = log_binomial_tail(k, n, q, precision);
    }
    const Raster up = upsample_bilinear(tail, h, w);
    for (std::size_t p = 0; p < out.map.size(); ++p) out.map.values[p] += up.values[p];
    out.n_tests += static_cast<std::int64_t>(mask.height()) * mask.width();
  }
  const double log_tests = std::log(static_cast<double>(out.n_tests));
  for (double& v : out.map.values) v += log_tests;
  return out;
}

Mask auto_segment(const LogNfaMap& map, double threshold) {
  Mask out(map.map.height, map.map.width);
  for (std::size_t p = 0; p < out.size(); ++p) out.values[p] = map.map.values[p] < threshold ? 1 : 0;
  return out;
}

}  // namespace uflow
