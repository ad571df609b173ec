#pragma once

// Checkpoint container:
//
//   offset 0   8 bytes   magic "IASSDCK1"
//   offset 8   8 bytes   manifest length L, unsigned little-endian
//   offset 16  L bytes   manifest, compact JSON with sorted keys:
//                          {"schema": "iassd.checkpoint/v1",
//                           "config": {...}, "scalars": {...},
//                           "tensors": [{"name", "shape", "offset", "count"}]}
//   offset 16+L          tensor payloads, IEEE-754 binary64 little-endian,
//                        concatenated in manifest order; "offset" counts
//                        values from the start of the payload section.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "iassd/errors.hpp"
#include "iassd/nn/tensor.hpp"
#include "json.hpp"

namespace iassd::nn {

inline constexpr char kCheckpointMagic[8] = {'I', 'A', 'S', 'S', 'D', 'C', 'K', '1'};
inline constexpr const char* kCheckpointSchema = "iassd.checkpoint/v1";

struct NamedBuffer {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json scalars = nlohmann::json::object();
  std::vector<NamedBuffer> buffers;

  const NamedBuffer* find(const std::string& name) const {
    for (const auto& b : buffers)
      if (b.name == name) return &b;
    return nullptr;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["schema"] = kCheckpointSchema;
  manifest["config"] = ck.config;
  manifest["scalars"] = ck.scalars;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : ck.buffers) {
    if (shape_size(b.shape) != b.values.size())
      throw std::invalid_argument("checkpoint: buffer '" + b.name + "' has inconsistent shape");
    manifest["tensors"].push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}, {"count", b.values.size()}});
    offset += b.values.size();
  }
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& b : ck.buffers)
    for (double d : b.values) detail::put_f64(out, d);
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint: bad magic at byte 0");
  const std::uint64_t len = detail::get_u64(bytes.data() + 8);
  if (len > bytes.size() - 16) throw DataError("checkpoint: manifest length exceeds file size at byte 8");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("schema", "") != kCheckpointSchema)
    throw DataError("checkpoint: unsupported schema '" + manifest.value("schema", "") + "'");
  Checkpoint ck;
  ck.config = manifest.at("config");
  ck.scalars = manifest.at("scalars");
  const std::size_t base = 16 + len;
  const std::size_t payload = (bytes.size() - base) / 8;
  if ((bytes.size() - base) % 8 != 0) throw DataError("checkpoint: payload is not a whole number of doubles");
  for (const auto& t : manifest.at("tensors")) {
    NamedBuffer b;
    b.name = t.at("name").get<std::string>();
    b.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (count != shape_size(b.shape) || off + count > payload)
      throw DataError("checkpoint: tensor '" + b.name + "' out of bounds or inconsistent");
    b.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
      b.values[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + base + (off + i) * 8));
    ck.buffers.push_back(std::move(b));
  }
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace iassd::nn
