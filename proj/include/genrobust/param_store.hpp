#pragma once

#include <map>
#include <string>
#include <vector>

#include "genrobust/tensor.hpp"

namespace genrobust {

/// Named tensors with unique names and fixed shapes (weights, averaged weights, optimizer state).
template <typename Scalar>
class BasicParamStore {
 public:
  using TensorT = BasicTensor<Scalar>;
  using const_iterator = typename std::map<std::string, TensorT>::const_iterator;

  void add(const std::string& name, TensorT value) {
    if (!tensors_.emplace(name, std::move(value)).second) throw ValueError("duplicate parameter name '" + name + "'");
  }

  /// Replaces the values of an existing entry; the shape must not change.
  void assign(const std::string& name, TensorT value) {
    auto& slot = mutable_at(name);
    if (slot.shape() != value.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(slot.shape()) + ", refusing " +
                       shape_string(value.shape()));
    }
    slot = std::move(value);
  }

  const TensorT& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ValueError("unknown parameter '" + name + "'");
    return it->second;
  }

  /// Mutable element access; the shape stays fixed because only values are exposed.
  std::span<Scalar> values(const std::string& name) { return mutable_at(name).data(); }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const noexcept { return tensors_.size(); }
  const_iterator begin() const { return tensors_.begin(); }
  const_iterator end() const { return tensors_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  /// True when both stores hold the same names with the same shapes.
  bool same_layout(const BasicParamStore& other) const {
    if (size() != other.size()) return false;
    for (auto a = begin(), b = other.begin(); a != end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    }
    return true;
  }

  friend bool operator==(const BasicParamStore&, const BasicParamStore&) = default;

 private:
  TensorT& mutable_at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ValueError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, TensorT> tensors_;
};

using ParamStore = BasicParamStore<double>;

}  // namespace genrobust
