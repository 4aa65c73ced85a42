#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "uflow/flow.hpp"

namespace uflow {

// Row-major 2-D real array.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  friend bool operator==(const Raster&, const Raster&) = default;
};

using ScoreMap = Raster;

// Row-major binary raster, 1 = anomalous.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }
  std::uint8_t at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
  std::size_t size() const { return values.size(); }
  std::size_t count() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class ScoreFormula {
  // exp(-1/2 * mean_k(z^2 / 2)), the anomaly score exactly as printed.
  printed,
  // exp(-mean_k(z^2) / 2); deviates from the printed formula.
  single_half,
};

// Per scale e_l = exp(-factor * mean_k z_k^2) at native resolution, each
// bilinearly upsampled to the finest grid; the map is -(1/L) sum_l e_l, so
// values lie in [-1, 0). Throws ShapeError on empty latents.
ScoreMap likelihood_score_map(const LatentPyramid& latents,
                              ScoreFormula formula = ScoreFormula::printed);

// Maximum over pixels. Throws ShapeError on an empty map.
double image_score(const ScoreMap& map);

// Corner-aligned bilinear interpolation: output corners coincide with input
// corners. Throws ParameterError when asked to shrink either axis.
Raster upsample_bilinear(const Raster& map, int height, int width);

}  // namespace uflow
