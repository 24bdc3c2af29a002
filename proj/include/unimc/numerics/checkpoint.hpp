#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unimc/numerics/parameter.hpp"

namespace unimc::numerics {

/// Flat hyperparameter record written next to a checkpoint as `key=value` lines.
using Manifest = std::map<std::string, std::string>;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::uint32_t width = 4;  // bytes per value: 4 (f32) or 8 (f64)
  std::vector<double> values;
};

namespace detail_ckpt {

inline constexpr char kMagic[8] = {'U', 'N', 'I', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <class U>
void put(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::string& path) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError("checkpoint " + path + ": truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

}  // namespace detail_ckpt

inline std::string manifest_path(const std::string& checkpoint) { return checkpoint + ".manifest"; }

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write manifest " + path);
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read manifest " + path);
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(detail::concat("manifest ", path, ":", lineno, ": expected key=value"));
    }
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

/// Serialize all parameter values of `store` (name, shape, raw little-endian
/// values) to `path` and the manifest to `path.manifest`.
template <class T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, const Manifest& manifest) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path);
  os.write(detail_ckpt::kMagic, sizeof(detail_ckpt::kMagic));
  detail_ckpt::put<std::uint32_t>(os, detail_ckpt::kVersion);
  detail_ckpt::put<std::uint32_t>(os, sizeof(T));
  detail_ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    detail_ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail_ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) detail_ckpt::put<std::uint64_t>(os, e);
    for (T v : p.value.values()) detail_ckpt::put<T>(os, v);
  }
  if (!os) throw Error("write failed for checkpoint " + path);
  write_manifest(manifest_path(path), manifest);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail_ckpt::kMagic, 8) != 0) {
    throw FormatError("checkpoint " + path + ": bad magic");
  }
  const auto version = detail_ckpt::get<std::uint32_t>(is, path);
  if (version != detail_ckpt::kVersion) {
    throw FormatError(detail::concat("checkpoint ", path, ": unsupported version ", version));
  }
  const auto width = detail_ckpt::get<std::uint32_t>(is, path);
  if (width != 4 && width != 8) throw FormatError(detail::concat("checkpoint ", path, ": bad value width ", width));
  const auto count = detail_ckpt::get<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    nt.width = width;
    const auto len = detail_ckpt::get<std::uint32_t>(is, path);
    if (len > (1u << 16)) throw FormatError("checkpoint " + path + ": implausible name length");
    nt.name.resize(len);
    if (!is.read(nt.name.data(), len)) throw FormatError("checkpoint " + path + ": truncated");
    const auto rank = detail_ckpt::get<std::uint32_t>(is, path);
    if (rank == 0 || rank > 8) throw FormatError("checkpoint " + path + ": bad rank for " + nt.name);
    for (std::uint32_t r = 0; r < rank; ++r) nt.shape.push_back(detail_ckpt::get<std::uint64_t>(is, path));
    const std::size_t n = shape_size(nt.shape);
    nt.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      nt.values[i] = width == 4 ? double(detail_ckpt::get<float>(is, path)) : detail_ckpt::get<double>(is, path);
    }
    out.push_back(std::move(nt));
  }
  return out;
}

/// Load values into an existing store. Every stored tensor must match a
/// parameter by name and shape, and every parameter must be present.
template <class T>
void load_checkpoint(const std::string& path, ParameterStore<T>& store) {
  const auto tensors = read_checkpoint(path);
  if (tensors.size() != store.size()) {
    throw FormatError(detail::concat("checkpoint ", path, ": ", tensors.size(), " tensors, model has ",
                                     store.size()));
  }
  for (const auto& nt : tensors) {
    if (!store.contains(nt.name)) throw FormatError("checkpoint " + path + ": unknown tensor " + nt.name);
    auto& p = store.get(nt.name);
    if (p.value.shape() != nt.shape) {
      throw FormatError(detail::concat("checkpoint ", path, ": shape ", shape_string(nt.shape), " for ", nt.name,
                                       ", model expects ", shape_string(p.value.shape())));
    }
    for (std::size_t i = 0; i < nt.values.size(); ++i) p.value[i] = static_cast<T>(nt.values[i]);
  }
}

/// FNV-1a over the file bytes; used to fingerprint checkpoints in run manifests.
inline std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot hash " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace unimc::numerics
