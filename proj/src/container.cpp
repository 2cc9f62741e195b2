#include "genrobust/container.hpp"

#include <bit>
#include <cstring>
#include <set>

#include <zlib.h>

#include "genrobust/csv.hpp"
#include "genrobust/error.hpp"

namespace genrobust {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

const char kMagic[4] = {'G', 'R', 'T', 'C'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* take(std::size_t n) {
    if (n > limit_ - pos_) throw FormatError("container truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t remaining() const { return limit_ - pos_; }

 private:
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

template <typename S>
void put_payload(std::string& out, const BasicTensor<S>& t) {
  const auto data = t.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(S));
}

template <typename S>
StoredTensor read_payload(Reader& in, Shape shape) {
  const std::size_t n = shape_size(shape);
  if (n != 0 && n > in.remaining() / sizeof(S)) throw FormatError("container payload truncated");
  std::vector<S> data(n);
  if (n) std::memcpy(data.data(), in.take(n * sizeof(S)), n * sizeof(S));
  return BasicTensor<S>(std::move(shape), std::move(data));
}

std::string meta_name(const std::string& key) { return "meta/" + key; }

}  // namespace

DType dtype_of(const StoredTensor& t) {
  switch (t.index()) {
    case 0: return DType::F32;
    case 1: return DType::F64;
    default: return DType::U32;
  }
}

const Shape& shape_of(const StoredTensor& t) {
  return std::visit([](const auto& x) -> const Shape& { return x.shape(); }, t);
}

std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void TensorContainer::add(const std::string& name, StoredTensor tensor) {
  if (contains(name)) throw ValueError("duplicate container entry '" + name + "'");
  entries_.emplace_back(name, std::move(tensor));
}

bool TensorContainer::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

const StoredTensor& TensorContainer::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw FormatError("container has no entry '" + name + "'");
}

namespace {
template <typename T>
const T& typed(const TensorContainer& c, const std::string& name, const char* want) {
  const auto& entry = c.at(name);
  if (const auto* t = std::get_if<T>(&entry)) return *t;
  throw FormatError("container entry '" + name + "' is not " + want);
}
}  // namespace

const Tensor& TensorContainer::f64(const std::string& name) const { return typed<Tensor>(*this, name, "f64"); }
const TensorF& TensorContainer::f32(const std::string& name) const { return typed<TensorF>(*this, name, "f32"); }
const IndexTensor& TensorContainer::u32(const std::string& name) const {
  return typed<IndexTensor>(*this, name, "u32");
}

void TensorContainer::set_meta(const std::string& key, const std::string& value) {
  std::vector<std::uint32_t> bytes(value.begin(), value.end());
  for (auto& b : bytes) b &= 0xffu;
  const std::size_t n = bytes.size();
  IndexTensor t(Shape{n}, std::move(bytes));
  const auto name = meta_name(key);
  for (auto& e : entries_) {
    if (e.first == name) {
      e.second = std::move(t);
      return;
    }
  }
  entries_.emplace_back(name, std::move(t));
}

std::optional<std::string> TensorContainer::meta(const std::string& key) const {
  const auto name = meta_name(key);
  if (!contains(name)) return std::nullopt;
  const auto& t = u32(name);
  std::string out;
  out.reserve(t.size());
  for (auto b : t.data()) {
    if (b > 0xffu) throw FormatError("metadata entry '" + key + "' is not a byte string");
    out.push_back(static_cast<char>(b));
  }
  return out;
}

std::string TensorContainer::require_meta(const std::string& key) const {
  auto v = meta(key);
  if (!v) throw FormatError("container is missing metadata '" + key + "'");
  return *v;
}

std::string TensorContainer::serialize() const {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, tensor] : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of(tensor)));
    const auto& shape = shape_of(tensor);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) put<std::uint64_t>(out, e);
    std::visit([&](const auto& t) { put_payload(out, t); }, tensor);
  }
  put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

TensorContainer TensorContainer::deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad container magic");
  if (bytes.size() < 16) throw FormatError("container truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored_crc) throw FormatError("container CRC mismatch");

  Reader in(bytes, body);
  in.take(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  TensorContainer c;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len), name_len);
    if (!seen.insert(name).second) throw FormatError("duplicate container entry '" + name + "'");
    const auto dtype = in.get<std::uint32_t>();
    const auto rank = in.get<std::uint32_t>();
    if (rank > in.remaining() / 8) throw FormatError("container truncated");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(in.get<std::uint64_t>());
    switch (dtype) {
      case 1: c.entries_.emplace_back(std::move(name), read_payload<float>(in, std::move(shape))); break;
      case 2: c.entries_.emplace_back(std::move(name), read_payload<double>(in, std::move(shape))); break;
      case 3: c.entries_.emplace_back(std::move(name), read_payload<std::uint32_t>(in, std::move(shape))); break;
      default: throw FormatError("unknown dtype code " + std::to_string(dtype) + " for entry '" + name + "'");
    }
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after container entries");
  return c;
}

void save_container(const std::string& path, const TensorContainer& container) {
  atomic_write(path, container.serialize());
}

TensorContainer load_container(const std::string& path) { return TensorContainer::deserialize(read_file(path)); }

}  // namespace genrobust
