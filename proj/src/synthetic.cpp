#include "uflow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "uflow/errors.hpp"
#include "uflow/parallel.hpp"

namespace uflow {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPixelRadius = 0.70711;  // half pixel diagonal, rounded up
constexpr int kMaxAttempts = 100;

// Room a defect needs beyond its nominal extent (soft edge, scratch width).
int defect_footprint(const SynthConfig& config) { return config.defect_size_max + 4; }

void gaussian_blur_periodic(std::vector<double>& v, int size, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    k[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += k[d + radius];
  }
  for (double& x : k) x /= total;
  auto wrap = [size](int i) { return ((i % size) + size) % size; };
  std::vector<double> tmp(v.size(), 0.0);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += k[d + radius] * v[i * size + wrap(j + d)];
      tmp[i * size + j] = s;
    }
  }
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += k[d + radius] * tmp[wrap(i + d) * size + j];
      v[i * size + j] = s;
    }
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Opacity of each pixel for one defect, in [0, 1].
std::vector<double> defect_alpha(DefectKind kind, const SynthConfig& config, Rng& rng) {
  const int size = config.image_size;
  const double lo = config.defect_size_min;
  const double hi = config.defect_size_max;
  const double half = 0.5 * defect_footprint(config);
  const double cy = rng.uniform(half, size - half);
  const double cx = rng.uniform(half, size - half);
  std::vector<double> alpha(static_cast<std::size_t>(size) * size, 0.0);
  switch (kind) {
    case DefectKind::blob: {
      const double ra = 0.5 * rng.uniform(lo, hi);
      const double rb = 0.5 * rng.uniform(lo, hi);
      const double angle = rng.uniform(0.0, kPi);
      const double ca = std::cos(angle);
      const double sa = std::sin(angle);
      const double m = std::min(ra, rb);
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          const double dy = i - cy;
          const double dx = j - cx;
          const double u = (ca * dx + sa * dy) / ra;
          const double v = (-sa * dx + ca * dy) / rb;
          const double rho = std::sqrt(u * u + v * v);
          alpha[i * size + j] = clamp01(0.5 + m * (1.0 - rho));
        }
      }
      break;
    }
    case DefectKind::scratch: {
      const double length = rng.uniform(lo, hi);
      const double width = rng.uniform(1.0, 3.0);
      const double angle = rng.uniform(0.0, kPi);
      const double hx = 0.5 * length * std::cos(angle);
      const double hy = 0.5 * length * std::sin(angle);
      const double x0 = cx - hx;
      const double y0 = cy - hy;
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          const double px = j - x0;
          const double py = i - y0;
          const double t = std::clamp((px * 2 * hx + py * 2 * hy) / (length * length), 0.0, 1.0);
          const double ex = px - t * 2 * hx;
          const double ey = py - t * 2 * hy;
          const double dist = std::sqrt(ex * ex + ey * ey);
          alpha[i * size + j] = clamp01(0.5 * width + 0.5 - dist);
        }
      }
      break;
    }
    case DefectKind::patch: {
      const int h = config.defect_size_min +
                    static_cast<int>(rng.below(config.defect_size_max - config.defect_size_min + 1));
      const int w = config.defect_size_min +
                    static_cast<int>(rng.below(config.defect_size_max - config.defect_size_min + 1));
      const Image modulation = render_texture(config.texture, size, rng);
      const int i0 = static_cast<int>(std::floor(cy - 0.5 * h));
      const int j0 = static_cast<int>(std::floor(cx - 0.5 * w));
      for (int i = i0; i < i0 + h; ++i) {
        for (int j = j0; j < j0 + w; ++j) alpha[i * size + j] = 0.5 + 0.5 * modulation.at(i, j);
      }
      break;
    }
  }
  return alpha;
}

}  // namespace

void validate(const SynthConfig& config) {
  if (config.image_size <= 0) throw ParameterError("image_size must be positive");
  if (config.n_train < 0 || config.n_test_normal < 0 || config.n_test_anomalous < 0) {
    throw ParameterError("image counts must be non-negative");
  }
  if (!(config.contrast > 0.0) || !std::isfinite(config.contrast)) {
    throw ParameterError("defect contrast must be positive");
  }
  if (config.defects.empty() && config.n_test_anomalous > 0) {
    throw ParameterError("no defect kinds configured");
  }
  if (config.defect_size_min < 2 || config.defect_size_max < config.defect_size_min) {
    throw ParameterError("defect size bounds must satisfy 2 <= min <= max");
  }
  if (defect_footprint(config) > config.image_size - 2) {
    throw ParameterError("defect of size " + std::to_string(config.defect_size_max) +
                         " is larger than the " + std::to_string(config.image_size) + "px image allows");
  }
}

std::uint64_t image_seed(std::uint64_t seed, int split, int index) {
  return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(split)),
                     static_cast<std::uint64_t>(index));
}

Image render_texture(Texture texture, int size, Rng& rng) {
  Image img(size, size);
  switch (texture) {
    case Texture::gaussian_field: {
      for (double& v : img.pixels) v = rng.normal();
      gaussian_blur_periodic(img.pixels, size, 2.0);
      double mean = 0.0;
      for (double v : img.pixels) mean += v;
      mean /= static_cast<double>(img.pixels.size());
      double var = 0.0;
      for (double v : img.pixels) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(img.pixels.size()));
      for (double& v : img.pixels) v = clamp01(0.5 + 0.15 * (v - mean) / sd);
      break;
    }
    case Texture::grating: {
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          img.at(i, j) = clamp01(0.5 + 0.3 * std::sin(2.0 * kPi * j / 8.0 + phase) + 0.02 * rng.normal());
        }
      }
      break;
    }
    case Texture::checker: {
      const int tile = 8;
      const int oy = static_cast<int>(rng.below(tile));
      const int ox = static_cast<int>(rng.below(tile));
      const int tiles = size / tile + 2;
      std::vector<double> jitter(static_cast<std::size_t>(tiles) * tiles);
      for (double& v : jitter) v = 0.03 * rng.normal();
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          const int ti = (i + oy) / tile;
          const int tj = (j + ox) / tile;
          const double base = (ti + tj) % 2 == 0 ? 0.35 : 0.65;
          img.at(i, j) = clamp01(base + jitter[ti * tiles + tj] + 0.01 * rng.normal());
        }
      }
      break;
    }
  }
  return img;
}

DefectResult composite_defect(const Image& base, DefectKind kind, const SynthConfig& config,
                              Rng& rng) {
  validate(config);
  if (base.height != config.image_size || base.width != config.image_size || base.channels != 1) {
    throw ShapeError("defect base image must be a single-channel " +
                     std::to_string(config.image_size) + "px square");
  }
  const double delta = config.contrast;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const auto alpha = defect_alpha(kind, config, rng);
    DefectResult out{base, Mask(base.height, base.width)};
    for (std::size_t p = 0; p < alpha.size(); ++p) {
      if (alpha[p] == 0.0) continue;
      const double orig = base.pixels[p];
      const double shift = delta * alpha[p];
      double v = orig + sign * shift;
      if (v < 0.0 || v > 1.0) v = orig - sign * shift;
      out.image.pixels[p] = clamp01(v);
      out.mask.values[p] = std::abs(out.image.pixels[p] - orig) > delta / 4.0 ? 1 : 0;
    }
    if (out.mask.count() > 0) return out;
  }
  throw ParameterError("could not place a visible defect");
}

std::pair<std::size_t, std::size_t> defect_area_bounds(DefectKind kind, const SynthConfig& config) {
  const double lo = config.defect_size_min;
  const double hi = config.defect_size_max;
  switch (kind) {
    case DefectKind::blob: {
      // The mask is the ellipse scaled by 1 + 1/(4 min semi-axis).
      const double a_lo = 0.5 * lo * (1.0 + 1.0 / (2.0 * lo));
      const double shrink = std::max(0.0, 1.0 - kPixelRadius / a_lo);
      const double a_hi = 0.5 * hi * (1.0 + 1.0 / (2.0 * lo)) + kPixelRadius;
      return {static_cast<std::size_t>(std::floor(kPi * a_lo * a_lo * shrink * shrink)),
              static_cast<std::size_t>(std::ceil(kPi * a_hi * a_hi))};
    }
    case DefectKind::scratch: {
      // Stadium of radius width/2 + 1/4 around the segment.
      const double r_hi = 1.75 + kPixelRadius;
      return {std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(lo / std::sqrt(2.0)))),
              static_cast<std::size_t>(std::ceil(2.0 * r_hi * hi + kPi * r_hi * r_hi))};
    }
    case DefectKind::patch:
      return {static_cast<std::size_t>(lo * lo), static_cast<std::size_t>(hi * hi)};
  }
  return {0, 0};
}

Dataset gen_dataset(const SynthConfig& config, int jobs) {
  validate(config);
  Dataset out;
  out.train.resize(config.n_train);
  parallel_for(out.train.size(), jobs, [&](std::size_t i) {
    Rng rng(image_seed(config.seed, 0, static_cast<int>(i)));
    out.train[i] = render_texture(config.texture, config.image_size, rng);
  });
  const int n_test = config.n_test_normal + config.n_test_anomalous;
  out.test.resize(n_test);
  out.test_masks.resize(n_test);
  out.test_labels.assign(n_test, false);
  parallel_for(static_cast<std::size_t>(n_test), jobs, [&](std::size_t i) {
    Rng rng(image_seed(config.seed, 1, static_cast<int>(i)));
    Image base = render_texture(config.texture, config.image_size, rng);
    if (static_cast<int>(i) < config.n_test_normal) {
      out.test[i] = std::move(base);
      out.test_masks[i] = Mask(config.image_size, config.image_size);
      return;
    }
    const DefectKind kind = config.defects[rng.below(config.defects.size())];
    auto d = composite_defect(base, kind, config, rng);
    out.test[i] = std::move(d.image);
    out.test_masks[i] = std::move(d.mask);
  });
  for (int i = config.n_test_normal; i < n_test; ++i) out.test_labels[i] = true;
  return out;
}

Texture parse_texture(const std::string& name) {
  if (name == "gaussian_field") return Texture::gaussian_field;
  if (name == "grating") return Texture::grating;
  if (name == "checker") return Texture::checker;
  throw ParameterError("unknown texture '" + name + "'");
}

DefectKind parse_defect(const std::string& name) {
  if (name == "blob") return DefectKind::blob;
  if (name == "scratch") return DefectKind::scratch;
  if (name == "patch") return DefectKind::patch;
  throw ParameterError("unknown defect kind '" + name + "'");
}

std::string to_string(Texture texture) {
  switch (texture) {
    case Texture::gaussian_field: return "gaussian_field";
    case Texture::grating: return "grating";
    case Texture::checker: return "checker";
  }
  return "?";
}

std::string to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::blob: return "blob";
    case DefectKind::scratch: return "scratch";
    case DefectKind::patch: return "patch";
  }
  return "?";
}

}  // namespace uflow
