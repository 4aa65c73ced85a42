#include "uflow/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uflow/errors.hpp"

namespace uflow {

Volume::Volume(int channels, int height, int width, double fill)
    : shape_{channels, height, width} {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ShapeError("volume dimensions must be positive, got " + std::to_string(channels) +
                     "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  data_.assign(shape_.size(), fill);
}

Volume::Volume(int channels, int height, int width, std::vector<double> data)
    : shape_{channels, height, width}, data_(std::move(data)) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ShapeError("volume dimensions must be positive");
  }
  if (data_.size() != shape_.size()) {
    throw ShapeError("volume data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(shape_.size()));
  }
  if (!all_finite()) throw NumericError("volume contains non-finite values");
}

Volume Volume::slice_channels(int first, int count) const {
  if (first < 0 || count <= 0 || first + count > channels()) {
    throw ShapeError("channel slice out of range");
  }
  Volume out(count, height(), width());
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()),
              count * plane_size(), out.data_.begin());
  return out;
}

bool Volume::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Volume concat_channels(const Volume& a, const Volume& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat: spatial sizes differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
  Volume out(a.channels() + b.channels(), a.height(), a.width());
  auto dst = out.storage().begin();
  dst = std::copy(a.storage().begin(), a.storage().end(), dst);
  std::copy(b.storage().begin(), b.storage().end(), dst);
  return out;
}

double max_abs_diff(const Volume& a, const Volume& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

ConvKernel::ConvKernel(int in, int out, int k)
    : in_channels(in), out_channels(out), size(k) {
  if (in <= 0 || out <= 0) throw ShapeError("conv kernel channel counts must be positive");
  if (k != 1 && k != 3) throw ShapeError("conv kernel size must be 1 or 3");
  weight.assign(static_cast<std::size_t>(out) * in * k * k, 0.0);
  bias.assign(out, 0.0);
}

namespace {

void check_kernel(const ConvKernel& kernel) {
  if (kernel.size != 1 && kernel.size != 3) {
    throw ShapeError("conv kernel size must be 1 or 3, got " + std::to_string(kernel.size));
  }
  const std::size_t expect = static_cast<std::size_t>(kernel.out_channels) *
                             kernel.in_channels * kernel.size * kernel.size;
  if (kernel.weight.size() != expect ||
      kernel.bias.size() != static_cast<std::size_t>(kernel.out_channels)) {
    throw ShapeError("conv kernel arrays do not match declared shape");
  }
}

// Calls fn(dst_row_offset, src_row_offset, x_begin, x_end, src_shift) for each
// valid row of the shifted window (oy, ox) over an H x W plane.
template <typename Fn>
void for_shifted_rows(int height, int width, int oy, int ox, Fn&& fn) {
  const int y0 = std::max(0, -oy);
  const int y1 = std::min(height, height - oy);
  const int x0 = std::max(0, -ox);
  const int x1 = std::min(width, width - ox);
  if (x0 >= x1) return;
  for (int y = y0; y < y1; ++y) {
    fn(static_cast<std::size_t>(y) * width, static_cast<std::size_t>(y + oy) * width, x0, x1,
       ox);
  }
}

}  // namespace

Volume conv2d(const Volume& input, const ConvKernel& kernel) {
  check_kernel(kernel);
  if (kernel.in_channels != input.channels()) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.in_channels) +
                     " input channels, volume has " + std::to_string(input.channels()));
  }
  const int h = input.height();
  const int w = input.width();
  const int k = kernel.size;
  const int r = k / 2;
  Volume out(kernel.out_channels, h, w);
  for (int o = 0; o < kernel.out_channels; ++o) {
    double* dst = out.channel(o).data();
    std::fill_n(dst, out.plane_size(), kernel.bias[o]);
    for (int c = 0; c < kernel.in_channels; ++c) {
      const double* src = input.channel(c).data();
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj) {
          const double wt = kernel.at(o, c, di, dj);
          if (wt == 0.0) continue;
          for_shifted_rows(h, w, di - r, dj - r,
                           [&](std::size_t drow, std::size_t srow, int x0, int x1, int ox) {
                             double* d = dst + drow;
                             const double* s = src + srow + ox;
                             for (int x = x0; x < x1; ++x) d[x] += wt * s[x];
                           });
        }
      }
    }
  }
  return out;
}

Volume conv2d_backward_input(const Volume& grad_output, const ConvKernel& kernel) {
  check_kernel(kernel);
  if (kernel.out_channels != grad_output.channels()) {
    throw ShapeError("conv2d_backward_input: gradient channel mismatch");
  }
  const int h = grad_output.height();
  const int w = grad_output.width();
  const int k = kernel.size;
  const int r = k / 2;
  Volume grad_in(kernel.in_channels, h, w);
  for (int c = 0; c < kernel.in_channels; ++c) {
    double* dst = grad_in.channel(c).data();
    for (int o = 0; o < kernel.out_channels; ++o) {
      const double* g = grad_output.channel(o).data();
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj) {
          const double wt = kernel.at(o, c, di, dj);
          if (wt == 0.0) continue;
          // out(y, x) reads in(y + oy, x + ox); scatter back.
          for_shifted_rows(h, w, di - r, dj - r,
                           [&](std::size_t grow, std::size_t irow, int x0, int x1, int ox) {
                             const double* gs = g + grow;
                             double* d = dst + irow + ox;
                             for (int x = x0; x < x1; ++x) d[x] += wt * gs[x];
                           });
        }
      }
    }
  }
  return grad_in;
}

void conv2d_accumulate_kernel_grad(const Volume& input, const Volume& grad_output,
                                   ConvKernel& grad_kernel) {
  check_kernel(grad_kernel);
  if (grad_kernel.in_channels != input.channels() ||
      grad_kernel.out_channels != grad_output.channels()) {
    throw ShapeError("conv2d_accumulate_kernel_grad: channel mismatch");
  }
  const int h = input.height();
  const int w = input.width();
  const int k = grad_kernel.size;
  const int r = k / 2;
  for (int o = 0; o < grad_kernel.out_channels; ++o) {
    const double* g = grad_output.channel(o).data();
    double bsum = 0.0;
    for (std::size_t p = 0; p < grad_output.plane_size(); ++p) bsum += g[p];
    grad_kernel.bias[o] += bsum;
    for (int c = 0; c < grad_kernel.in_channels; ++c) {
      const double* src = input.channel(c).data();
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj) {
          double acc = 0.0;
          for_shifted_rows(h, w, di - r, dj - r,
                           [&](std::size_t grow, std::size_t srow, int x0, int x1, int ox) {
                             const double* gs = g + grow;
                             const double* s = src + srow + ox;
                             for (int x = x0; x < x1; ++x) acc += gs[x] * s[x];
                           });
          grad_kernel.at(o, c, di, dj) += acc;
        }
      }
    }
  }
}

BlockCounts block_counts(const Volume& mask, int window) {
  if (window <= 0 || window % 2 == 0) {
    throw ParameterError("block window must be odd and positive, got " + std::to_string(window));
  }
  const int h = mask.height();
  const int w = mask.width();
  if (window > 2 * std::min(h, w) - 1) {
    throw ParameterError("block window " + std::to_string(window) + " exceeds spatial extent " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  // The block spans every channel, so a single summed-area table over the
  // channel-summed plane suffices.
  const int stride = w + 1;
  std::vector<std::int64_t> table(static_cast<std::size_t>(h + 1) * stride, 0);
  for (int i = 0; i < h; ++i) {
    std::int64_t row = 0;
    for (int j = 0; j < w; ++j) {
      std::int64_t v = 0;
      for (int c = 0; c < mask.channels(); ++c) v += mask(c, i, j) != 0.0 ? 1 : 0;
      row += v;
      table[static_cast<std::size_t>(i + 1) * stride + j + 1] =
          table[static_cast<std::size_t>(i) * stride + j + 1] + row;
    }
  }
  const int r = window / 2;
  BlockCounts out;
  out.height = h;
  out.width = w;
  out.counts.resize(static_cast<std::size_t>(h) * w);
  out.sizes.resize(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    const int i0 = std::max(0, i - r);
    const int i1 = std::min(h, i + r + 1);
    for (int j = 0; j < w; ++j) {
      const int j0 = std::max(0, j - r);
      const int j1 = std::min(w, j + r + 1);
      const std::size_t at = static_cast<std::size_t>(i) * w + j;
      out.counts[at] = table[static_cast<std::size_t>(i1) * stride + j1] -
                       table[static_cast<std::size_t>(i0) * stride + j1] -
                       table[static_cast<std::size_t>(i1) * stride + j0] +
                       table[static_cast<std::size_t>(i0) * stride + j0];
      out.sizes[at] = static_cast<std::int64_t>(i1 - i0) * (j1 - j0) * mask.channels();
    }
  }
  return out;
}

}  // namespace uflow
