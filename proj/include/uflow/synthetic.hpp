#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uflow/features.hpp"
#include "uflow/rng.hpp"
#include "uflow/scoring.hpp"

namespace uflow {

enum class Texture { gaussian_field, grating, checker };
enum class DefectKind { blob, scratch, patch };

struct SynthConfig {
  int image_size = 64;
  int n_train = 200;
  int n_test_normal = 50;
  int n_test_anomalous = 50;
  Texture texture = Texture::gaussian_field;
  std::vector<DefectKind> defects{DefectKind::blob};
  double contrast = 0.8;     // delta
  int defect_size_min = 8;   // extent in pixels: blob diameter, scratch length, patch side
  int defect_size_max = 16;
  std::uint64_t seed = 1;
};

// Throws ParameterError for a non-positive size or contrast, empty defect
// list, inverted size bounds, or a defect that cannot fit the image.
void validate(const SynthConfig& config);

struct Dataset {
  std::vector<Image> train;
  std::vector<Image> test;  // n_test_normal normal images, then the anomalous ones
  std::vector<Mask> test_masks;
  std::vector<bool> test_labels;
};

// Deterministic given the config; images are independent draws seeded from
// (seed, split, index).
Dataset gen_dataset(const SynthConfig& config, int jobs = 1);

// Seed of image `index` in split 0 (train) or 1 (test).
std::uint64_t image_seed(std::uint64_t seed, int split, int index);

// Anomaly-free grayscale texture in [0, 1].
Image render_texture(Texture texture, int size, Rng& rng);

struct DefectResult {
  Image image;
  Mask mask;  // |composite - original| > contrast / 4
};

// Composites one defect additively onto `base`. The shift is +-contrast
// times the defect's opacity; where that leaves [0, 1] the opposite sign is
// used, and failing both the value is clamped.
DefectResult composite_defect(const Image& base, DefectKind kind, const SynthConfig& config,
                              Rng& rng);

// Inclusive bounds on the mask area of one defect of the given kind.
std::pair<std::size_t, std::size_t> defect_area_bounds(DefectKind kind, const SynthConfig& config);

Texture parse_texture(const std::string& name);
DefectKind parse_defect(const std::string& name);
std::string to_string(Texture texture);
std::string to_string(DefectKind kind);

}  // namespace uflow
