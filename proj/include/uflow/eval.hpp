#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uflow/flow.hpp"
#include "uflow/scoring.hpp"

namespace uflow {

// Test image: score raster (higher = more anomalous), ground truth, label.
struct LabeledImage {
  Raster score;
  Mask gt;
  bool anomalous = false;
};
using LabeledMaps = std::vector<LabeledImage>;

// Mann-Whitney AUROC with midranks for ties. Labels are 0/1.
// Throws UndefinedMetricError unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Pixel AUROC over all pixels pooled; image AUROC with the per-image maximum
// as image score.
double pixel_auroc(const LabeledMaps& maps);
double image_auroc(const LabeledMaps& maps);

// |a & b| / |a | b|, 1 when both are empty. Throws ShapeError on mismatch.
double iou(const Mask& a, const Mask& b);

// Pixels with score strictly above the threshold.
Mask threshold_mask(const Raster& score, double threshold);

// IoU over all images' pixels concatenated, predicting score > threshold.
double pooled_iou(const LabeledMaps& maps, double threshold);

struct ThresholdChoice {
  double threshold = 0.0;
  double iou = 0.0;
};

// Threshold maximizing pooled IoU. Candidates are 256 order statistics of
// the pooled scores, every per-image maximum and a value just below the
// minimum (all pixels predicted); with `exhaustive`, every distinct score
// instead. Ties go to the higher threshold.
// Throws UndefinedMetricError when there is no positive pixel.
ThresholdChoice oracle_threshold(const LabeledMaps& maps, bool exhaustive = false);

// Maximum over training maps of the second-largest pixel value (the value
// itself for one-pixel maps), so at most one pixel per training map lies
// strictly above it. Throws ParameterError on empty input.
double fair_threshold(const std::vector<Raster>& train_maps);

// mean(z_k^2) and population std(z_k^2) for every channel k, scales finest
// first.
std::vector<double> embedding_stats(const LatentPyramid& latents);

}  // namespace uflow
