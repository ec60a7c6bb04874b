#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace netvlad {

// Descriptor/representation matrices are row-major so a row maps directly
// onto the on-disk N x D layout.
template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using ImageId = std::uint32_t;

// Bad inputs, configs or file schemas. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures while executing an otherwise valid run. CLI exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t h = kFnvOffsetBasis) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = kFnvOffsetBasis) {
  return fnv1a64(s.data(), s.size(), h);
}

// All binary containers are written little-endian without conversion.
static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace netvlad
