#include "genrobust/dataset.hpp"

#include <string>

namespace genrobust {

void LabeledDataset::validate() const {
  if (images.rank() != 4) throw ShapeError("dataset images must be [N,C,H,W], got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) throw ShapeError("dataset image count does not match label count");
  if (num_classes < 2) throw ValueError("dataset needs at least two classes");
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("pixel value " + std::to_string(v) + " outside [0,1]");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValueError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.images = images.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  return out;
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  LabeledDataset out;
  out.images = images.slice_rows(begin, end);
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.num_classes = num_classes;
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.num_classes != b.num_classes) throw ValueError("concat: class counts differ");
  LabeledDataset out;
  out.images = concat_rows(a.images, b.images);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.num_classes = a.num_classes;
  return out;
}

}  // namespace genrobust
