#include "uflow/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uflow/binary_io.hpp"
#include "uflow/errors.hpp"
#include "uflow/rng.hpp"

namespace uflow {

std::size_t FeaturePyramid::total_size() const {
  std::size_t n = 0;
  for (const auto& v : levels) n += v.size();
  return n;
}

std::vector<int> FeaturePyramid::channel_counts() const {
  std::vector<int> out;
  for (const auto& v : levels) out.push_back(v.channels());
  return out;
}

void FeaturePyramid::validate() const {
  if (levels.empty()) throw ShapeError("feature pyramid has no levels");
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const auto& fine = levels[l - 1];
    const auto& coarse = levels[l];
    if (fine.height() != 2 * coarse.height() || fine.width() != 2 * coarse.width()) {
      throw ShapeError("pyramid level " + std::to_string(l) + " is " +
                       std::to_string(coarse.height()) + "x" + std::to_string(coarse.width()) +
                       ", expected half of " + std::to_string(fine.height()) + "x" +
                       std::to_string(fine.width()));
    }
  }
}

namespace {

struct Plane {
  int height;
  int width;
  std::vector<double> values;
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
};

Plane luminance(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(image.channels));
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw ShapeError("image pixel buffer does not match its dimensions");
  }
  Plane p{image.height, image.width,
          std::vector<double>(static_cast<std::size_t>(image.height) * image.width)};
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      double s = 0.0;
      for (int c = 0; c < image.channels; ++c) s += image.at(i, j, c);
      p.values[static_cast<std::size_t>(i) * image.width + j] = s / image.channels;
    }
  }
  return p;
}

Plane box_downsample(const Plane& in) {
  Plane out{in.height / 2, in.width / 2, {}};
  out.values.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int i = 0; i < out.height; ++i) {
    for (int j = 0; j < out.width; ++j) {
      out.values[static_cast<std::size_t>(i) * out.width + j] =
          0.25 * (in.at(2 * i, 2 * j) + in.at(2 * i, 2 * j + 1) + in.at(2 * i + 1, 2 * j) +
                  in.at(2 * i + 1, 2 * j + 1));
    }
  }
  return out;
}

// Zero-mean Gaussian filters over a patch x patch cell, one set per level.
std::vector<std::vector<double>> projection_filters(std::uint64_t seed, int level, int count,
                                                    int patch) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(level)));
  const int n = patch * patch;
  std::vector<std::vector<double>> filters(count, std::vector<double>(n));
  for (auto& f : filters) {
    double mean = 0.0;
    for (auto& v : f) {
      v = rng.normal() / patch;
      mean += v;
    }
    mean /= n;
    for (auto& v : f) v -= mean;
  }
  return filters;
}

void check_config(const Image& image, const ExtractorConfig& config) {
  if (config.levels < 1) throw ParameterError("extractor needs at least one level");
  if (config.patch < 1) throw ParameterError("extractor patch must be positive");
  if (static_cast<int>(config.channels_per_level.size()) != config.levels) {
    throw ParameterError("channels_per_level has " +
                         std::to_string(config.channels_per_level.size()) + " entries for " +
                         std::to_string(config.levels) + " levels");
  }
  for (int c : config.channels_per_level) {
    if (c < 1) throw ParameterError("channel counts must be positive");
  }
  const int factor = config.patch << (config.levels - 1);
  if (image.height <= 0 || image.width <= 0 || image.height % factor != 0 ||
      image.width % factor != 0) {
    throw ShapeError("image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " is not divisible by patch*2^(L-1) = " +
                     std::to_string(factor));
  }
}

Volume cell_features(const Plane& plane, int patch, int channels,
                     const std::vector<std::vector<double>>& filters) {
  const int ch = plane.height / patch;
  const int cw = plane.width / patch;
  Volume out(channels, ch, cw);
  std::vector<double> cell(static_cast<std::size_t>(patch) * patch);
  std::vector<double> desc(kHandcraftedFeatures + filters.size());
  const double n = static_cast<double>(cell.size());
  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, patch - 1);
    x = std::clamp(x, 0, patch - 1);
    return cell[static_cast<std::size_t>(y) * patch + x];
  };
  for (int ci = 0; ci < ch; ++ci) {
    for (int cj = 0; cj < cw; ++cj) {
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          cell[static_cast<std::size_t>(y) * patch + x] = plane.at(ci * patch + y, cj * patch + x);
        }
      }
      double mean = 0.0;
      for (double v : cell) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : cell) var += (v - mean) * (v - mean);
      double dx = 0.0;
      double dy = 0.0;
      double lap = 0.0;
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          if (x + 1 < patch) dx += std::abs(px(y, x + 1) - px(y, x));
          if (y + 1 < patch) dy += std::abs(px(y + 1, x) - px(y, x));
          lap += std::abs(px(y - 1, x) + px(y + 1, x) + px(y, x - 1) + px(y, x + 1) -
                          4.0 * px(y, x));
        }
      }
      const double pairs = static_cast<double>(patch) * (patch - 1);
      desc[0] = mean;
      desc[1] = std::sqrt(var / n);
      desc[2] = pairs > 0 ? dx / pairs : 0.0;
      desc[3] = pairs > 0 ? dy / pairs : 0.0;
      desc[4] = lap / n;
      for (std::size_t f = 0; f < filters.size(); ++f) {
        double r = 0.0;
        for (std::size_t p = 0; p < cell.size(); ++p) r += filters[f][p] * cell[p];
        desc[kHandcraftedFeatures + f] = r;
      }
      for (int c = 0; c < channels; ++c) out(c, ci, cj) = desc[c];
    }
  }
  return out;
}

void standardize_channels(Volume& v) {
  const double n = static_cast<double>(v.plane_size());
  for (int c = 0; c < v.channels(); ++c) {
    auto ch = v.channel(c);
    double mean = 0.0;
    for (double x : ch) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : ch) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      std::fill(ch.begin(), ch.end(), 0.0);
      continue;
    }
    for (double& x : ch) x = (x - mean) / sd;
  }
}

}  // namespace

FeaturePyramid extract_multiscale_raw(const Image& image, const ExtractorConfig& config) {
  check_config(image, config);
  Plane plane = luminance(image);
  FeaturePyramid pyramid;
  for (int l = 0; l < config.levels; ++l) {
    if (l > 0) plane = box_downsample(plane);
    const int channels = config.channels_per_level[l];
    const int projections = std::max(0, channels - kHandcraftedFeatures);
    const auto filters = projection_filters(config.seed, l, projections, config.patch);
    pyramid.levels.push_back(cell_features(plane, config.patch, channels, filters));
  }
  return pyramid;
}

FeaturePyramid extract_multiscale(const Image& image, const ExtractorConfig& config) {
  FeaturePyramid pyramid = extract_multiscale_raw(image, config);
  for (auto& level : pyramid.levels) standardize_channels(level);
  return pyramid;
}

std::vector<std::uint8_t> encode_ufv(const FeaturePyramid& pyramid) {
  pyramid.validate();
  binary::Writer w;
  w.bytes("UFV1");
  w.u32(static_cast<std::uint32_t>(pyramid.levels.size()));
  for (const auto& v : pyramid.levels) {
    w.u32(static_cast<std::uint32_t>(v.channels()));
    w.u32(static_cast<std::uint32_t>(v.height()));
    w.u32(static_cast<std::uint32_t>(v.width()));
  }
  for (const auto& v : pyramid.levels) {
    for (double x : v.data()) w.f32(static_cast<float>(x));
  }
  return std::move(w.buffer());
}

FeaturePyramid decode_ufv(const std::vector<std::uint8_t>& bytes) {
  binary::Reader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "UFV1") throw ParseError("bad magic");
  const std::uint32_t levels = r.u32("header (level count)");
  if (levels == 0) throw ParseError("level count is zero");
  if (r.remaining() / 12 < levels) throw ParseError("truncated header (level shapes)");
  std::vector<Shape> shapes(levels);
  std::uint64_t total = 0;
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::uint32_t c = r.u32("header (channels)");
    const std::uint32_t h = r.u32("header (height)");
    const std::uint32_t w = r.u32("header (width)");
    const std::string at = " of level " + std::to_string(l);
    if (c == 0) throw ParseError("shape inconsistency: channels" + at + " is zero");
    if (h == 0) throw ParseError("shape inconsistency: height" + at + " is zero");
    if (w == 0) throw ParseError("shape inconsistency: width" + at + " is zero");
    if (c > (1u << 20) || h > (1u << 16) || w > (1u << 16)) {
      throw ParseError("shape inconsistency: level " + std::to_string(l) + " is implausibly large");
    }
    if (l > 0) {
      if (shapes[l - 1].height != 2 * static_cast<int>(h)) {
        throw ParseError("shape inconsistency: height" + at + " is not half of the previous level");
      }
      if (shapes[l - 1].width != 2 * static_cast<int>(w)) {
        throw ParseError("shape inconsistency: width" + at + " is not half of the previous level");
      }
    }
    shapes[l] = {static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)};
    total += static_cast<std::uint64_t>(c) * h * w;
  }
  if (r.remaining() < total * 4) throw ParseError("truncated payload");
  if (r.remaining() > total * 4) throw ParseError("trailing bytes after payload");
  FeaturePyramid pyramid;
  for (std::uint32_t l = 0; l < levels; ++l) {
    std::vector<double> data(shapes[l].size());
    for (auto& x : data) {
      const float f = r.f32("payload");
      if (!std::isfinite(f)) throw ParseError("non-finite value in level " + std::to_string(l));
      x = f;
    }
    pyramid.levels.emplace_back(shapes[l].channels, shapes[l].height, shapes[l].width,
                                std::move(data));
  }
  return pyramid;
}

void write_ufv(const FeaturePyramid& pyramid, const std::filesystem::path& path) {
  binary::write_file(path, encode_ufv(pyramid));
}

FeaturePyramid read_ufv(const std::filesystem::path& path) {
  try {
    return decode_ufv(binary::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + std::string(e.what()).substr(13));
  }
}

}  // namespace uflow
