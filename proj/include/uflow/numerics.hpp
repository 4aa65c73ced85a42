#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uflow/volume.hpp"

namespace uflow {

// Weights for a same-padded 2-D cross-correlation, layout [out, in, k, k].
struct ConvKernel {
  int in_channels = 0;
  int out_channels = 0;
  int size = 1;  // 1 or 3
  std::vector<double> weight;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(int in, int out, int k);

  double& at(int o, int i, int di, int dj) {
    return weight[((static_cast<std::size_t>(o) * in_channels + i) * size + di) * size + dj];
  }
  double at(int o, int i, int di, int dj) const {
    return weight[((static_cast<std::size_t>(o) * in_channels + i) * size + di) * size + dj];
  }
};

// Zero same-padding, no kernel flip. Throws ShapeError on channel mismatch
// or a kernel size other than 1 or 3.
Volume conv2d(const Volume& input, const ConvKernel& kernel);

// Reverse-mode pieces of conv2d. `grad_input` receives d(loss)/d(input);
// weight and bias gradients are accumulated into `grad_kernel`.
Volume conv2d_backward_input(const Volume& grad_output, const ConvKernel& kernel);
void conv2d_accumulate_kernel_grad(const Volume& input, const Volume& grad_output,
                                   ConvKernel& grad_kernel);

enum class Precision { standard, extended };

// ln I_x(a, b), the regularized incomplete beta function, evaluated in log
// space. Requires a > 0, b > 0, 0 <= x <= 1.
double log_incomplete_beta(double x, double a, double b,
                           Precision precision = Precision::standard);

// ln P[X >= k] for X ~ Binomial(n, q), extended to real k and n through
// I_q(k, n - k + 1). k == 0 returns exactly 0.
// Throws DomainError unless 0 <= k <= n and 0 < q < 1.
double log_binomial_tail(double k, double n, double q,
                         Precision precision = Precision::standard);

// CDF of the chi-squared distribution with one degree of freedom.
double chi2_cdf(double x);

// Inverse of chi2_cdf. Throws DomainError for p outside [0, 1).
double chi2_quantile(double p);

struct BlockCounts {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;  // ones inside the truncated w x w x C block
  std::vector<std::int64_t> sizes;   // truncated area times C

  std::int64_t count(int i, int j) const { return counts[static_cast<std::size_t>(i) * width + j]; }
  std::int64_t size(int i, int j) const { return sizes[static_cast<std::size_t>(i) * width + j]; }
};

// Per-pixel count of nonzero voxels inside the w x w window spanning every
// channel, truncated at the borders. Cost is O(C*H*W) for any w.
// Throws ParameterError for even w or w > 2*min(H, W) - 1.
BlockCounts block_counts(const Volume& mask, int window);

}  // namespace uflow
