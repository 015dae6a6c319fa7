#pragma once

// Versioned binary checkpoint.
//
// Layout (all integers little-endian, values 64-bit IEEE doubles stored
// column-major):
//   u32 magic length, magic bytes ("planwrite-checkpoint")
//   u32 format version (1)
//   u32 config-echo length, echo bytes (the serialized run config)
//   u64 text/attr/value vocabulary sizes
//   u64 parameter count, then per parameter:
//     u32 name length, name bytes, u32 rank (2), u64 dims..., f64 values

#include "planwrite/compute/params.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace planwrite::checkpoint {

inline constexpr const char* kMagic = "planwrite-checkpoint";
inline constexpr std::uint32_t kVersion = 1;

struct Metadata {
  std::string config_echo;
  std::uint64_t text_vocab = 0;
  std::uint64_t attr_vocab = 0;
  std::uint64_t value_vocab = 0;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd values;
};

struct Contents {
  Metadata meta;
  std::vector<NamedTensor> tensors;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  auto len = read_pod<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace detail

template <typename Scalar>
void save(const compute::ParameterStore<Scalar>& store, const Metadata& meta,
          const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  detail::write_string(os, kMagic);
  detail::write_pod<std::uint32_t>(os, kVersion);
  detail::write_string(os, meta.config_echo);
  detail::write_pod<std::uint64_t>(os, meta.text_vocab);
  detail::write_pod<std::uint64_t>(os, meta.attr_vocab);
  detail::write_pod<std::uint64_t>(os, meta.value_vocab);
  detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    const auto& p = store.at(i);
    detail::write_string(os, p.name);
    detail::write_pod<std::uint32_t>(os, 2);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.rows()));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.cols()));
    Eigen::MatrixXd d = p.value.template cast<double>();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(sizeof(double) * d.size()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Contents load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic = detail::read_string(is);
  if (magic != kMagic) throw std::runtime_error("checkpoint: bad magic in " + path);
  auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Contents c;
  c.meta.config_echo = detail::read_string(is);
  c.meta.text_vocab = detail::read_pod<std::uint64_t>(is);
  c.meta.attr_vocab = detail::read_pod<std::uint64_t>(is);
  c.meta.value_vocab = detail::read_pod<std::uint64_t>(is);
  auto count = detail::read_pod<std::uint64_t>(is);
  c.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = detail::read_string(is);
    auto rank = detail::read_pod<std::uint32_t>(is);
    if (rank != 2) throw std::runtime_error("checkpoint: unsupported rank");
    auto rows = detail::read_pod<std::uint64_t>(is);
    auto cols = detail::read_pod<std::uint64_t>(is);
    t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(sizeof(double) * t.values.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + t.name);
    c.tensors.push_back(std::move(t));
  }
  return c;
}

// Copies tensors into the store; the name sets and shapes must match exactly.
template <typename Scalar>
void restore(compute::ParameterStore<Scalar>& store, const Contents& contents) {
  if (static_cast<Eigen::Index>(contents.tensors.size()) != store.count()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (const auto& t : contents.tensors) {
    int id = store.find(t.name);
    if (id < 0) throw std::runtime_error("checkpoint: unexpected parameter " + t.name);
    auto& value = store.value(id);
    if (value.rows() != t.values.rows() || value.cols() != t.values.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
    }
    value = t.values.template cast<Scalar>();
  }
}

}  // namespace planwrite::checkpoint
