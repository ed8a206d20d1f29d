#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "samcnn/errors.hpp"
#include "samcnn/tensor.hpp"

// Little-endian binary codec shared by checkpoints and bundle tensors.

namespace samcnn {

static_assert(std::endian::native == std::endian::little,
              "serialized tensors are little-endian; big-endian hosts are unsupported");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw FormatError("truncated data while reading " + what);
  return v;
}
inline std::uint64_t read_u64(std::istream& in, const std::string& what) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw FormatError("truncated data while reading " + what);
  return v;
}
inline double read_f64(std::istream& in, const std::string& what) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw FormatError("truncated data while reading " + what);
  return v;
}
inline std::string read_string(std::istream& in, const std::string& what) {
  const std::uint32_t len = read_u32(in, what);
  if (len > (1u << 24)) throw FormatError("implausible string length in " + what);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len))
    throw FormatError("truncated data while reading " + what);
  return s;
}

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  write_string(out, name);
  write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
  for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline std::pair<std::string, Tensor> read_tensor(std::istream& in,
                                                  const std::string& what) {
  std::string name = read_string(in, what);
  const std::uint32_t ndim = read_u32(in, what + " (" + name + ")");
  if (ndim > 8) throw FormatError(what + ": implausible tensor rank");
  Shape shape;
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = read_u32(in, what + " (" + name + ")");
    shape.push_back(static_cast<int>(d));
    total *= d;
  }
  std::vector<double> data(total);
  if (total && !in.read(reinterpret_cast<char*>(data.data()),
                        static_cast<std::streamsize>(total * sizeof(double))))
    throw FormatError(what + ": truncated tensor data for " + name);
  return {std::move(name), Tensor::from(std::move(shape), std::move(data))};
}

// FNV-1a, used for config hashes and bundle identity.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace samcnn
