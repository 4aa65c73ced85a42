#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uflow/volume.hpp"

namespace uflow {

// Grayscale or RGB raster with values in [0, 1], stored channel-major.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int i, int j, int c = 0) {
    return pixels[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
  double at(int i, int j, int c = 0) const {
    return pixels[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Level 0 is the finest scale; every further level halves height and width.
struct FeaturePyramid {
  std::vector<Volume> levels;

  int num_levels() const { return static_cast<int>(levels.size()); }
  std::size_t total_size() const;
  std::vector<int> channel_counts() const;
  // Throws ShapeError unless the levels are nonempty and halve exactly.
  void validate() const;

  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

struct ExtractorConfig {
  int levels = 2;
  int patch = 4;
  std::vector<int> channels_per_level{16, 16};
  std::uint64_t seed = 7;  // random-projection filters
};

// Number of hand-crafted descriptors that precede the random projections.
inline constexpr int kHandcraftedFeatures = 5;

// Deterministic patch-statistics extractor. Each patch x patch cell of the
// image downsampled by 2^l yields [mean, std, mean|dx|, mean|dy|,
// mean|laplacian|, random projections...] cut to the level's channel count;
// each channel is then standardized over the image (zero-variance channels
// become all zeros).
// Throws ShapeError when the image size is not a multiple of patch*2^(L-1).
FeaturePyramid extract_multiscale(const Image& image, const ExtractorConfig& config);

// Same cell features without the per-image standardization.
FeaturePyramid extract_multiscale_raw(const Image& image, const ExtractorConfig& config);

// UFV v1: "UFV1", u32 L, L x (u32 C, u32 H, u32 W), then float32 payloads,
// all little-endian, no padding, no trailing bytes.
std::vector<std::uint8_t> encode_ufv(const FeaturePyramid& pyramid);
FeaturePyramid decode_ufv(const std::vector<std::uint8_t>& bytes);
void write_ufv(const FeaturePyramid& pyramid, const std::filesystem::path& path);
FeaturePyramid read_ufv(const std::filesystem::path& path);

}  // namespace uflow
