#include "uflow/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uflow/errors.hpp"

namespace uflow {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

Raster upsample_bilinear(const Raster& map, int height, int width) {
  if (map.empty()) throw ShapeError("upsample_bilinear: empty map");
  if (height < map.height || width < map.width) {
    throw ParameterError("upsample_bilinear: cannot shrink " + std::to_string(map.height) + "x" +
                         std::to_string(map.width) + " to " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  if (height == map.height && width == map.width) return map;
  // Source coordinate of output index o along an axis of n -> m samples.
  auto source = [](int o, int n, int m, int& lo, double& frac) {
    if (m == 1 || n == 1) {
      lo = 0;
      frac = 0.0;
      return;
    }
    const double pos = static_cast<double>(o) * (n - 1) / (m - 1);
    lo = std::min(static_cast<int>(std::floor(pos)), n - 2);
    frac = pos - lo;
  };
  Raster out(height, width);
  std::vector<int> col_lo(width);
  std::vector<double> col_frac(width);
  for (int j = 0; j < width; ++j) source(j, map.width, width, col_lo[j], col_frac[j]);
  for (int i = 0; i < height; ++i) {
    int r0;
    double fr;
    source(i, map.height, height, r0, fr);
    const int r1 = map.height == 1 ? 0 : r0 + 1;
    for (int j = 0; j < width; ++j) {
      const int c0 = col_lo[j];
      const int c1 = map.width == 1 ? 0 : c0 + 1;
      const double fc = col_frac[j];
      const double top = map.at(r0, c0) + fc * (map.at(r0, c1) - map.at(r0, c0));
      const double bottom = map.at(r1, c0) + fc * (map.at(r1, c1) - map.at(r1, c0));
      out.at(i, j) = top + fr * (bottom - top);
    }
  }
  return out;
}

ScoreMap likelihood_score_map(const LatentPyramid& latents, ScoreFormula formula) {
  if (latents.z.empty()) throw ShapeError("likelihood_score_map: no latents");
  const double factor = formula == ScoreFormula::printed ? 0.25 : 0.5;
  const int h = latents.z[0].height();
  const int w = latents.z[0].width();
  ScoreMap total(h, w, 0.0);
  for (const auto& z : latents.z) {
    Raster e(z.height(), z.width(), 0.0);
    for (int c = 0; c < z.channels(); ++c) {
      auto ch = z.channel(c);
      for (std::size_t p = 0; p < ch.size(); ++p) e.values[p] += ch[p] * ch[p];
    }
    for (double& v : e.values) v = std::exp(-factor * v / z.channels());
    const Raster up = upsample_bilinear(e, h, w);
    for (std::size_t p = 0; p < total.size(); ++p) total.values[p] += up.values[p];
  }
  const double levels = static_cast<double>(latents.z.size());
  for (double& v : total.values) v = -v / levels;
  return total;
}

double image_score(const ScoreMap& map) {
  if (map.empty()) throw ShapeError("image_score: empty map");
  return *std::max_element(map.values.begin(), map.values.end());
}

}  // namespace uflow
