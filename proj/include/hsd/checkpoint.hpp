#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace hsd {

enum class DType { kFloat32, kFloat64, kInt64 };

std::string dtype_name(DType d);
DType dtype_from_name(const std::string& name);
std::size_t dtype_size(DType d);

struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> data;  // little-endian

  std::int64_t numel() const;
};

/// Named tensors plus a JSON metadata header.
///
/// On disk: 8-byte magic "HSDCKPT1", u64 little-endian header length, the
/// JSON header ({"format_version", "meta", "tensors": [{name, dtype, shape,
/// offset, nbytes}]}), then the concatenated tensor payloads. Offsets are
/// relative to the first payload byte.
class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(TensorRecord record);
  const TensorRecord& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<TensorRecord>& tensors() const { return tensors_; }

  /// Records whose name starts with `prefix`, with the prefix stripped.
  Checkpoint subset(const std::string& prefix) const;
  /// Adds every record of `other` under `prefix`.
  void merge(const Checkpoint& other, const std::string& prefix);

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<TensorRecord> tensors_;
};

}  // namespace hsd
