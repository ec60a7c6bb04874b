#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "netvlad/common.hpp"

namespace netvlad {

// Every random draw in a run flows from one master seed through named
// sub-streams, so adding draws to one module never shifts another's stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t z = master ^ fnv1a64(stream);
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937_64 output is pinned by the standard; the distributions below are
// hand-rolled because the std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::size_t uniform_index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v > bound);
    return static_cast<std::size_t>(v % n);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // k distinct indices from [0, n), in selection order
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    k = std::min(k, n);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + uniform_index(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace netvlad
