#include "uflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "uflow/errors.hpp"

namespace uflow {

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their midrank.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        positives += 1.0;
        rank_sum += midrank;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw UndefinedMetricError("roc_auc needs both positive and negative samples");
  }
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double pixel_auroc(const LabeledMaps& maps) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& m : maps) {
    if (m.score.height != m.gt.height || m.score.width != m.gt.width) {
      throw ShapeError("score and ground-truth rasters differ in size");
    }
    scores.insert(scores.end(), m.score.values.begin(), m.score.values.end());
    for (auto v : m.gt.values) labels.push_back(v ? 1 : 0);
  }
  return roc_auc(scores, labels);
}

double image_auroc(const LabeledMaps& maps) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& m : maps) {
    scores.push_back(image_score(m.score));
    labels.push_back(m.anomalous ? 1 : 0);
  }
  return roc_auc(scores, labels);
}

double iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("iou: masks are " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " and " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    const bool x = a.values[p] != 0;
    const bool y = b.values[p] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask threshold_mask(const Raster& score, double threshold) {
  Mask out(score.height, score.width);
  for (std::size_t p = 0; p < score.size(); ++p) out.values[p] = score.values[p] > threshold ? 1 : 0;
  return out;
}

double pooled_iou(const LabeledMaps& maps, double threshold) {
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (const auto& m : maps) {
    if (m.score.height != m.gt.height || m.score.width != m.gt.width) {
      throw ShapeError("score and ground-truth rasters differ in size");
    }
    for (std::size_t p = 0; p < m.score.size(); ++p) {
      const bool x = m.score.values[p] > threshold;
      const bool y = m.gt.values[p] != 0;
      inter += x && y;
      uni += x || y;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ThresholdChoice oracle_threshold(const LabeledMaps& maps, bool exhaustive) {
  // Pooled (score, label) pairs sorted by descending score; prefix sums give
  // true and false positives of "score > t" by binary search.
  std::vector<std::pair<double, bool>> pix;
  std::vector<double> maxima;
  for (const auto& m : maps) {
    if (m.score.height != m.gt.height || m.score.width != m.gt.width) {
      throw ShapeError("score and ground-truth rasters differ in size");
    }
    if (m.score.empty()) continue;
    for (std::size_t p = 0; p < m.score.size(); ++p) pix.emplace_back(m.score.values[p], m.gt.values[p] != 0);
    maxima.push_back(image_score(m.score));
  }
  std::sort(pix.begin(), pix.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> true_pos(pix.size() + 1, 0);
  for (std::size_t i = 0; i < pix.size(); ++i) true_pos[i + 1] = true_pos[i] + (pix[i].second ? 1 : 0);
  const std::size_t positives = true_pos.back();
  if (positives == 0) throw UndefinedMetricError("oracle threshold needs at least one anomalous pixel");

  auto pooled = [&](double t) {
    const auto it = std::partition_point(pix.begin(), pix.end(), [t](const auto& e) { return e.first > t; });
    const std::size_t predicted = static_cast<std::size_t>(it - pix.begin());
    const std::size_t tp = true_pos[predicted];
    return static_cast<double>(tp) / static_cast<double>(positives + predicted - tp);
  };

  std::vector<double> candidates;
  const std::size_t n = pix.size();
  if (exhaustive) {
    for (const auto& e : pix) candidates.push_back(e.first);
  } else {
    // pix is descending, so ascending order statistic r sits at n - 1 - r.
    for (std::size_t i = 0; i < 256; ++i) candidates.push_back(pix[n - 1 - i * (n - 1) / 255].first);
    candidates.insert(candidates.end(), maxima.begin(), maxima.end());
  }
  candidates.push_back(std::nextafter(pix.back().first, -std::numeric_limits<double>::infinity()));

  ThresholdChoice best{candidates.front(), -1.0};
  for (double t : candidates) {
    const double v = pooled(t);
    if (v > best.iou || (v == best.iou && t > best.threshold)) best = {t, v};
  }
  return best;
}

double fair_threshold(const std::vector<Raster>& train_maps) {
  if (train_maps.empty()) throw ParameterError("fair_threshold: no training maps");
  double out = -std::numeric_limits<double>::infinity();
  for (const auto& m : train_maps) {
    if (m.empty()) throw ParameterError("fair_threshold: empty training map");
    std::vector<double> v = m.values;
    double second;
    if (v.size() == 1) {
      second = v[0];
    } else {
      std::nth_element(v.begin(), v.begin() + 1, v.end(), std::greater<double>());
      second = v[1];
    }
    out = std::max(out, second);
  }
  return out;
}

std::vector<double> embedding_stats(const LatentPyramid& latents) {
  std::vector<double> out;
  for (const auto& z : latents.z) {
    const double n = static_cast<double>(z.plane_size());
    for (int c = 0; c < z.channels(); ++c) {
      double mean = 0.0;
      for (double v : z.channel(c)) mean += v * v;
      mean /= n;
      double var = 0.0;
      for (double v : z.channel(c)) var += (v * v - mean) * (v * v - mean);
      out.push_back(mean);
      out.push_back(std::sqrt(var / n));
    }
  }
  return out;
}

}  // namespace uflow
