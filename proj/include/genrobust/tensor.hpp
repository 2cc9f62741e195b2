#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "genrobust/error.hpp"

namespace genrobust {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Eigen peels unaligned heads off its vectorised
/// reductions, so without a fixed alignment the summation order (and the last
/// bits of every sum) would depend on where the allocator put the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = RowMatrix<double>;
using VectorXd = Vector<double>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major array. Floating instantiations are the numeric value type of
/// the library; `BasicTensor<std::uint32_t>` carries labels and metadata bytes.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  BasicTensor(Shape shape, const std::vector<Scalar>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
    }
  }

  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, std::vector<Scalar>{value}); }

  /// Builds a tensor of `shape` from an Eigen expression of matching size (read row-major).
  template <typename Derived>
  static BasicTensor from_eigen(Shape shape, const Eigen::DenseBase<Derived>& expr) {
    BasicTensor out(std::move(shape));
    if (static_cast<std::size_t>(expr.size()) != out.size()) {
      throw ShapeError("eigen expression size does not match shape " + shape_string(out.shape_));
    }
    Map(out.data_.data(), expr.rows(), expr.cols()) = expr;
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_string(shape_));
    return shape_[axis];
  }

  std::span<const Scalar> data() const noexcept { return data_; }
  std::span<Scalar> data() noexcept { return data_; }
  std::vector<Scalar> values() const { return {data_.begin(), data_.end()}; }

  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& operator[](std::size_t i) { return data_[i]; }

  Scalar item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  /// Leading extent (batch size); a rank-0 tensor counts as one row.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  /// Product of the trailing extents.
  std::size_t row_size() const noexcept {
    if (shape_.empty()) return 1;
    return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
  }

  /// View as a rows() x row_size() matrix.
  ConstMap matrix() const {
    return ConstMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(row_size()));
  }
  Map matrix() {
    return Map(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(row_size()));
  }
  Eigen::Map<const Vector<Scalar>> vector() const {
    return Eigen::Map<const Vector<Scalar>>(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  Eigen::Map<Vector<Scalar>> vector() {
    return Eigen::Map<Vector<Scalar>>(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    BasicTensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  /// Rows [begin, end) along the leading axis.
  BasicTensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw ShapeError("row slice out of range");
    Shape shape = shape_;
    shape[0] = end - begin;
    const auto stride = row_size();
    return BasicTensor(std::move(shape),
                       std::vector<Scalar>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                           data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  BasicTensor gather_rows(std::span<const std::size_t> indices) const {
    Shape shape = shape_;
    shape[0] = indices.size();
    const auto stride = row_size();
    std::vector<Scalar> out;
    out.reserve(indices.size() * stride);
    for (auto index : indices) {
      if (index >= rows()) throw ShapeError("row index out of range");
      auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * stride);
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
    }
    return BasicTensor(std::move(shape), std::move(out));
  }

  std::span<const Scalar> row(std::size_t r) const {
    return std::span<const Scalar>(data_).subspan(r * row_size(), row_size());
  }
  std::span<Scalar> row(std::size_t r) { return std::span<Scalar>(data_).subspan(r * row_size(), row_size()); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<Other>(v); });
    return BasicTensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<Scalar>) {
      return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
    } else {
      return true;
    }
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  AlignedVector<Scalar> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;
using IndexTensor = BasicTensor<std::uint32_t>;

/// Concatenates along the leading axis; trailing extents must agree.
template <typename Scalar>
BasicTensor<Scalar> concat_rows(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  Shape sa(a.shape().begin() + 1, a.shape().end());
  Shape sb(b.shape().begin() + 1, b.shape().end());
  if (sa != sb) throw ShapeError("concat_rows: trailing shapes differ");
  Shape shape = a.shape();
  shape[0] += b.rows();
  std::vector<Scalar> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicTensor<Scalar>(std::move(shape), std::move(data));
}

template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Range>
std::size_t argmax(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < std::size(values); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace genrobust
