// Copyright 2026 The EigenShield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EIGENSHIELD_COMMON_HPP
#define EIGENSHIELD_COMMON_HPP

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eigenshield {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base error type for the library. Anything thrown by eigenshield derives
/// from this, so callers can catch one type.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when inputs, configs, or dimensions are inconsistent before any
/// real work starts. The CLI maps this to exit code 1.
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Seeded randomness. All entropy in the pipeline flows from explicit seeds;
// generators are derived per (master seed, stream tag, index) so that
// resuming a run at step t replays exactly the draws of an uninterrupted run.
// The samplers below use raw 64-bit output only, keeping draws identical
// across standard library implementations.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stateless seed derivation: one master seed fans out into independent
/// streams addressed by a tag and an index (step, sample, ...).
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0) {
  uint64_t s = master ^ fnv1a64(tag);
  s ^= 0x9e3779b97f4a7c15ULL * (index + 1);
  uint64_t state = s;
  splitmix64(state);
  return splitmix64(state);
}

/// Small deterministic generator (xorshift-free, splitmix-based).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // burn a couple of outputs so nearby seeds decorrelate
    splitmix64(state_);
    splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (always consumes two uniforms).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t state_;
};

// ---------------------------------------------------------------------------
// Vector helpers shared by several modules.
// ---------------------------------------------------------------------------

/// Cosine similarity. Throws on a zero-norm argument since the quantity is
/// undefined there and every use site treats that as a hard fault.
inline double cosine(const Vec& u, const Vec& v) {
  double nu = u.norm();
  double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw Error("undefined cosine: zero-norm vector");
  return u.dot(v) / (nu * nv);
}

/// Gradient of cosine(u, v) with respect to u.
inline Vec cosine_grad_u(const Vec& u, const Vec& v) {
  double nu = u.norm();
  double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw Error("undefined cosine: zero-norm vector");
  double c = u.dot(v) / (nu * nv);
  return v / (nu * nv) - u * (c / (nu * nu));
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace eigenshield

#endif  // EIGENSHIELD_COMMON_HPP
