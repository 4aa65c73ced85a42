#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace uflow {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// C x H x W tensor, channel-major then row-major. Values are finite when
// constructed from caller data; arithmetic on them is the caller's business.
class Volume {
 public:
  Volume() = default;
  Volume(int channels, int height, int width, double fill = 0.0);
  explicit Volume(Shape shape, double fill = 0.0)
      : Volume(shape.channels, shape.height, shape.width, fill) {}
  // Throws ShapeError on length mismatch, NumericError on non-finite entries.
  Volume(int channels, int height, int width, std::vector<double> data);

  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(shape_.height) * shape_.width;
  }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int i, int j) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + i) * shape_.width + j];
  }
  double operator()(int c, int i, int j) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + i) * shape_.width + j];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<double> channel(int c) {
    return std::span<double>(data_).subspan(c * plane_size(), plane_size());
  }
  std::span<const double> channel(int c) const {
    return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
  }

  // Channels [first, first + count) as a new volume.
  Volume slice_channels(int first, int count) const;

  bool all_finite() const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Channel-wise concatenation; spatial sizes must agree.
Volume concat_channels(const Volume& a, const Volume& b);

double max_abs_diff(const Volume& a, const Volume& b);

}  // namespace uflow
