#pragma once

#include <cstdint>
#include <vector>

#include "uflow/flow.hpp"
#include "uflow/scoring.hpp"

namespace uflow {

struct NfaConfig {
  double p = 0.9;                // chi-squared level and binomial 1 - q
  std::vector<int> windows{5, 3};  // odd block side per scale, finest first
  bool high_precision = false;   // extended-precision incomplete beta

  // Candidate threshold: the chi-squared(1) quantile at p.
  double tau() const;
};

// Throws ParameterError unless 0 < p < 1, there is one odd window per
// level and every window fits its scale.
void validate(const NfaConfig& config, const LatentPyramid& latents);

// Per scale, 1 where z^2 > tau.
std::vector<Volume> candidate_mask(const LatentPyramid& latents, double tau);

struct LogNfaMap {
  Raster map;             // finest latent grid
  std::int64_t n_tests = 0;  // sum over scales of H_l * W_l
};

// log NFA_ij = ln N_T + sum_l up(ln P[Bin(n_l(i,j), 1 - p) >= k_l(i,j)]) with
// k_l the candidate count in the border-truncated block divided by C_l and
// n_l the truncated block area. Per-scale tails are bilinearly upsampled to
// the finest grid before summing.
LogNfaMap log_nfa_map(const LatentPyramid& latents, const NfaConfig& config);

// 1 where log NFA < threshold.
Mask auto_segment(const LogNfaMap& map, double threshold = 0.0);

}  // namespace uflow
