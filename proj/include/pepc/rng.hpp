// include/pepc/rng.hpp

// Copyright 2026  The pepc authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef PEPC_RNG_HPP
#define PEPC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "pepc/errors.hpp"

namespace pepc {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named sub-stream seeds: every component draws from its own stream derived
// from one root seed, so varying one component never perturbs another.
inline uint64_t derive_seed(uint64_t root, std::string_view name) {
  return splitmix64(root ^ fnv1a64(name));
}

inline uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index) {
  return splitmix64(derive_seed(root, name) ^ splitmix64(index));
}

// mt19937_64 with hand-rolled distributions so that draws are reproducible
// across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(gen_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both inclusive, rejection-sampled (unbiased).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ConfigError(detail::cat("uniform_int: empty range [", lo, ", ", hi, "]"));
    uint64_t span = uint64_t(hi - lo) + 1;
    if (span == 0) return int64_t(gen_());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return lo + int64_t(r % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (second variate discarded; draws stay
  // aligned with the stream position regardless of call pattern).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices drawn from [0, n), in draw order.
  std::vector<int64_t> sample_indices(int64_t n, int64_t k) {
    if (k > n) throw ConfigError(detail::cat("cannot sample ", k, " of ", n, " without replacement"));
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[size_t(i)] = i;
    std::vector<int64_t> out;
    out.reserve(size_t(k));
    for (int64_t i = 0; i < k; ++i) {
      int64_t j = uniform_int(i, n - 1);
      std::swap(pool[size_t(i)], pool[size_t(j)]);
      out.push_back(pool[size_t(i)]);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace pepc

#endif  // PEPC_RNG_HPP
