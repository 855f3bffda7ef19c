#pragma once

// ACNK1 tensor container:
//   "ACNK1"
//   repeated until EOF:
//     u32 name length | name bytes | 4 x u64 shape (N, C, H, W) | N*C*H*W x f32
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "acnet/error.hpp"
#include "acnet/nn.hpp"

namespace acnet {

inline constexpr char kCheckpointMagic[] = "ACNK1";

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
bool get_le(std::istream& is, U& v) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return true;
}

}  // namespace detail

inline void write_records(std::ostream& os, const std::vector<TensorRecord>& records) {
  os.write(kCheckpointMagic, 5);
  for (const auto& r : records) {
    if (r.values.size() != r.shape.numel()) throw FormatError("checkpoint: record '" + r.name + "' size mismatch");
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    for (std::uint64_t d : {r.shape.n, r.shape.c, r.shape.h, r.shape.w}) detail::put_le<std::uint64_t>(os, d);
    for (float f : r.values) detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

inline std::vector<TensorRecord> read_records(std::istream& is) {
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw FormatError("checkpoint: missing ACNK1 magic");
  }
  std::vector<TensorRecord> records;
  std::uint32_t name_len = 0;
  while (detail::get_le(is, name_len)) {
    TensorRecord r;
    r.name.resize(name_len);
    if (!is.read(r.name.data(), name_len)) throw FormatError("checkpoint: truncated name");
    std::uint64_t dims[4];
    for (auto& d : dims) {
      if (!detail::get_le(is, d)) throw FormatError("checkpoint: truncated shape for '" + r.name + "'");
    }
    r.shape = {dims[0], dims[1], dims[2], dims[3]};
    r.values.resize(r.shape.numel());
    for (auto& f : r.values) {
      std::uint32_t bits = 0;
      if (!detail::get_le(is, bits)) throw FormatError("checkpoint: truncated data for '" + r.name + "'");
      f = std::bit_cast<float>(bits);
    }
    records.push_back(std::move(r));
  }
  return records;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TensorList<T>& tensors) {
  std::vector<TensorRecord> records;
  records.reserve(tensors.size());
  for (const auto& e : tensors) {
    TensorRecord r{e.name, e.tensor.shape(), {}};
    r.values.assign(e.tensor.data().begin(), e.tensor.data().end());
    records.push_back(std::move(r));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + tmp.string());
    write_records(os, records);
  }
  std::filesystem::rename(tmp, path);
}

/// Loads values into the given tensors. Every tensor must be present in the
/// file with an identical shape, and the file may not carry extra tensors.
template <class T>
void load_checkpoint(const std::filesystem::path& path, const TensorList<T>& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  std::map<std::string, TensorRecord> by_name;
  for (auto& r : read_records(is)) by_name.emplace(r.name, std::move(r));
  if (by_name.size() != tensors.size()) {
    throw FormatError("checkpoint: architecture mismatch: file has " + std::to_string(by_name.size()) +
                      " tensors, model expects " + std::to_string(tensors.size()));
  }
  for (const auto& e : tensors) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw FormatError("checkpoint: architecture mismatch: missing tensor '" + e.name + "'");
    if (it->second.shape != e.tensor.shape()) {
      throw FormatError("checkpoint: architecture mismatch: '" + e.name + "' has shape " + it->second.shape.str() +
                        ", model expects " + e.tensor.shape().str());
    }
    Tensor<T> t = e.tensor;
    std::copy(it->second.values.begin(), it->second.values.end(), t.values().begin());
  }
}

}  // namespace acnet
