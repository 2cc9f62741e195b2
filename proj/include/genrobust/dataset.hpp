#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "genrobust/tensor.hpp"

namespace genrobust {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;

  std::size_t size() const noexcept { return channels * height * width; }
  Shape batch(std::size_t n) const { return Shape{n, channels, height, width}; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Images in [0,1] of shape [N,C,H,W] with integer labels in [0, num_classes).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  ImageShape image_shape() const {
    if (images.rank() != 4) throw ShapeError("dataset images must be [N,C,H,W]");
    return ImageShape{images.dim(1), images.dim(2), images.dim(3)};
  }

  /// Checks shape/label agreement, the [0,1] pixel range and the label range.
  void validate() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  LabeledDataset slice(std::size_t begin, std::size_t end) const;

  /// Examples per class.
  std::vector<std::size_t> class_counts() const;
};

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

}  // namespace genrobust
