#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tonefit {

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Planar real-valued pixel grid. Channel c occupies the contiguous range
// [c*width*height, (c+1)*width*height), rows stored top to bottom.
class Image {
 public:
  Image() = default;

  Image(int width, int height, int channels = 3, double fill = 0.0)
      : width_{width}, height_{height}, channels_{channels} {
    if (width < 1 || height < 1 || channels < 1) {
      throw std::invalid_argument("image dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Bit depth of the file this image was decoded from (8 or 16).
  int bit_depth() const noexcept { return bit_depth_; }
  void set_bit_depth(int depth) noexcept { bit_depth_ = depth; }

  std::span<double> plane(int c) noexcept {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  std::span<const double> plane(int c) const noexcept {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  double& at(int c, int y, int x) noexcept {
    return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }
  double at(int c, int y, int x) const noexcept {
    return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }
  bool same_extent(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int width_{0};
  int height_{0};
  int channels_{0};
  int bit_depth_{8};
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(what) + ": image shapes differ (" +
                            std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + "x" +
                            std::to_string(a.channels()) + " vs " +
                            std::to_string(b.width()) + "x" +
                            std::to_string(b.height()) + "x" +
                            std::to_string(b.channels()) + ")");
  }
}

inline Image clamped(Image img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace tonefit
