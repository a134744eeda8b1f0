#pragma once

#include "adaf/types.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

// Checkpoint container: little-endian, named f64 tensors.
//
//   "ADAFCKPT" | u32 version | u64 config_hash | u64 seed | u32 count
//   per tensor: u32 name_len | name | u64 rows | u64 cols | f64 data (row-major)

inline constexpr char kCkptMagic[8] = {'A', 'D', 'A', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

struct CkptMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// Saves every tensor the model's visit() enumerates, in visit order. The
// header records the producing config hash and seed.
template <class Model>
void save_checkpoint(const std::string& path, Model& model, std::uint64_t config_hash,
                     std::uint64_t seed = 0) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  std::uint32_t count = 0;
  model.visit([&](const std::string&, auto& m) { ++count; });
  os.write(kCkptMagic, 8);
  detail::put_u32(os, kCkptVersion);
  detail::put_u64(os, config_hash);
  detail::put_u64(os, seed);
  detail::put_u32(os, count);
  model.visit([&](const std::string& name, auto& m) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        detail::put_f64(os, static_cast<double>(m(r, c)));
  });
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Loads into a model whose visit() enumerates the same tensors in the same
// order with the same shapes; anything else is a hard error, not a best-effort
// merge. Returns the stored config hash and seed.
template <class Model>
CkptMeta load_checkpoint(const std::string& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = detail::get_u32(is);
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  CkptMeta meta;
  meta.config_hash = detail::get_u64(is);
  meta.seed = detail::get_u64(is);
  std::uint32_t count = detail::get_u32(is);

  std::uint32_t expected = 0;
  model.visit([&](const std::string&, auto& m) { ++expected; });
  if (count != expected)
    throw std::runtime_error("checkpoint: tensor count mismatch in " + path);

  model.visit([&](const std::string& name, auto& m) {
    std::uint32_t len = detail::get_u32(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    if (stored != name)
      throw std::runtime_error("checkpoint: expected tensor " + name + ", found " + stored);
    auto rows = static_cast<Eigen::Index>(detail::get_u64(is));
    auto cols = static_cast<Eigen::Index>(detail::get_u64(is));
    if (rows != m.rows() || cols != m.cols())
      throw std::runtime_error("checkpoint: shape mismatch for tensor " + name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = detail::get_f64(is);
  });
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
  return meta;
}

}  // namespace adaf
