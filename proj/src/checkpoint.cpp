#include "hsd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hsd/errors.hpp"

namespace hsd {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string dtype_name(DType d) {
  switch (d) {
    case DType::kFloat32:
      return "f32";
    case DType::kFloat64:
      return "f64";
    case DType::kInt64:
      return "i64";
  }
  return "f32";
}

DType dtype_from_name(const std::string& name) {
  if (name == "f32") return DType::kFloat32;
  if (name == "f64") return DType::kFloat64;
  if (name == "i64") return DType::kInt64;
  throw IoError("checkpoint: unknown dtype '" + name + "'");
}

std::size_t dtype_size(DType d) { return d == DType::kFloat32 ? 4 : 8; }

std::int64_t TensorRecord::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void Checkpoint::add(TensorRecord record) {
  if (contains(record.name)) throw IoError("checkpoint: duplicate tensor '" + record.name + "'");
  if (record.data.size() != static_cast<std::size_t>(record.numel()) * dtype_size(record.dtype)) {
    throw ShapeError("checkpoint: payload size of '" + record.name + "' does not match its shape");
  }
  tensors_.push_back(std::move(record));
}

const TensorRecord& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw IoError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const TensorRecord& t) { return t.name == name; });
}

Checkpoint Checkpoint::subset(const std::string& prefix) const {
  Checkpoint out;
  for (const auto& t : tensors_) {
    if (t.name.rfind(prefix, 0) == 0) {
      TensorRecord r = t;
      r.name = t.name.substr(prefix.size());
      out.add(std::move(r));
    }
  }
  return out;
}

void Checkpoint::merge(const Checkpoint& other, const std::string& prefix) {
  for (const auto& t : other.tensors_) {
    TensorRecord r = t;
    r.name = prefix + t.name;
    add(std::move(r));
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  nlohmann::json header = {{"format_version", kFormatVersion}, {"meta", meta}, {"tensors", nlohmann::json::array()}};
  std::uint64_t offset = 0;
  for (const auto& t : tensors_) {
    header["tensors"].push_back({{"name", t.name},
                                 {"dtype", dtype_name(t.dtype)},
                                 {"shape", t.shape},
                                 {"offset", offset},
                                 {"nbytes", t.data.size()}});
    offset += t.data.size();
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw IoError("checkpoint: bad magic");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw IoError("checkpoint: truncated header");
  const auto* hp = reinterpret_cast<const char*>(bytes.data() + 16);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion) throw IoError("checkpoint: unsupported format version");
  const std::size_t data_start = 16 + header_len;
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    TensorRecord r;
    r.name = t.at("name").get<std::string>();
    r.dtype = dtype_from_name(t.at("dtype").get<std::string>());
    r.shape = t.at("shape").get<std::vector<std::int64_t>>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (data_start + off + nbytes > bytes.size()) throw IoError("checkpoint: truncated payload for '" + r.name + "'");
    r.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off),
                  bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off + nbytes));
    ck.add(std::move(r));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace hsd
