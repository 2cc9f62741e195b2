#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "genrobust/tensor.hpp"

namespace genrobust {

/// On-disk element types.
enum class DType : std::uint32_t { F32 = 1, F64 = 2, U32 = 3 };

using StoredTensor = std::variant<TensorF, Tensor, IndexTensor>;

DType dtype_of(const StoredTensor& t);
const Shape& shape_of(const StoredTensor& t);

/// Ordered named tensors in the "GRTC" container layout:
///
///   "GRTC" | u32 version | u32 entry count
///   per entry: u32 name bytes | name (UTF-8) | u32 dtype | u32 rank | u64 extents[rank] | payload
///   u32 CRC-32 of every preceding byte
///
/// All integers and payloads are little-endian. Metadata strings are stored as
/// U32 byte tensors under "meta/<key>".
class TensorContainer {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(const std::string& name, StoredTensor tensor);
  bool contains(const std::string& name) const;
  const StoredTensor& at(const std::string& name) const;

  /// Typed access; throws FormatError when the entry is missing or has another dtype.
  const Tensor& f64(const std::string& name) const;
  const TensorF& f32(const std::string& name) const;
  const IndexTensor& u32(const std::string& name) const;

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;
  std::string require_meta(const std::string& key) const;

  const std::vector<std::pair<std::string, StoredTensor>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::string serialize() const;
  static TensorContainer deserialize(const std::string& bytes);

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::vector<std::pair<std::string, StoredTensor>> entries_;
};

void save_container(const std::string& path, const TensorContainer& container);
TensorContainer load_container(const std::string& path);

/// CRC-32 (IEEE polynomial) as used by the container trailer.
std::uint32_t crc32_of(const void* data, std::size_t size);

}  // namespace genrobust
