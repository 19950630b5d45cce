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

#ifndef EIGENSHIELD_ANTIBODY_HPP
#define EIGENSHIELD_ANTIBODY_HPP

// Antibodies: per-sample subsets of the eigenbasis, stored as bitmasks.
// Applying one projects an image onto the selected eigenvector span (plus the
// mean), removing everything outside it. Affinity scores how well a subset
// denoises a sample; J and V measure how sample-specific antibodies are.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "eigenshield/common.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/image.hpp"

namespace eigenshield {

class Antibody {
 public:
  Antibody() = default;
  explicit Antibody(int n) : n_(n), words_((n + 63) / 64, 0) {
    require(n >= 1, "antibody: dimension must be positive");
  }

  static Antibody empty(int n) { return Antibody(n); }

  static Antibody full(int n) {
    Antibody a(n);
    for (int i = 0; i < n; ++i) a.set(i, true);
    return a;
  }

  static Antibody from_indices(int n, const std::vector<int>& idx) {
    Antibody a(n);
    for (int i : idx) a.set(i, true);
    return a;
  }

  /// MAP thresholding of selection probabilities at 0.5.
  static Antibody from_probabilities(const Vec& f_e) {
    Antibody a(static_cast<int>(f_e.size()));
    for (int i = 0; i < a.size(); ++i)
      if (f_e[i] >= 0.5) a.set(i, true);
    return a;
  }

  /// Independent per-index Bernoulli(f_e[i]) draw; deterministic under seed.
  static Antibody sample(const Vec& f_e, uint64_t seed) {
    Antibody a(static_cast<int>(f_e.size()));
    Rng rng(seed);
    for (int i = 0; i < a.size(); ++i)
      if (rng.bernoulli(f_e[i])) a.set(i, true);
    return a;
  }

  int size() const { return n_; }

  bool test(int i) const {
    check_index(i);
    return (words_[static_cast<size_t>(i) / 64] >> (i % 64)) & 1ULL;
  }

  void set(int i, bool value) {
    check_index(i);
    uint64_t bit = 1ULL << (i % 64);
    if (value)
      words_[static_cast<size_t>(i) / 64] |= bit;
    else
      words_[static_cast<size_t>(i) / 64] &= ~bit;
  }

  /// |a|: number of selected eigenvectors.
  int cardinality() const {
    int count = 0;
    for (uint64_t w : words_) count += std::popcount(w);
    return count;
  }

  /// Degenerate all-zero mask; permitted but flagged by callers.
  bool is_empty() const { return cardinality() == 0; }

  std::vector<int> indices() const {
    std::vector<int> idx;
    for (int i = 0; i < n_; ++i)
      if (test(i)) idx.push_back(i);
    return idx;
  }

  /// 0/1 mask as a vector (the soft-mode weights of a hard antibody).
  Vec as_weights() const {
    Vec w = Vec::Zero(n_);
    for (int i = 0; i < n_; ++i)
      if (test(i)) w[i] = 1.0;
    return w;
  }

  bool operator==(const Antibody& other) const {
    return n_ == other.n_ && words_ == other.words_;
  }

  /// Hex serialization, least-significant word first.
  std::string to_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    const int n_bytes = (n_ + 7) / 8;
    out.reserve(static_cast<size_t>(n_bytes) * 2);
    for (int b = 0; b < n_bytes; ++b) {
      uint8_t byte = static_cast<uint8_t>(words_[static_cast<size_t>(b) / 8] >> ((b % 8) * 8));
      out.push_back(digits[byte >> 4]);
      out.push_back(digits[byte & 0xf]);
    }
    return out;
  }

  static Antibody from_hex(const std::string& hex, int n) {
    Antibody a(n);
    const int n_bytes = (n + 7) / 8;
    require(static_cast<int>(hex.size()) == n_bytes * 2, "antibody: hex length mismatch");
    auto nibble = [](char c) -> uint64_t {
      if (c >= '0' && c <= '9') return static_cast<uint64_t>(c - '0');
      if (c >= 'a' && c <= 'f') return static_cast<uint64_t>(c - 'a' + 10);
      if (c >= 'A' && c <= 'F') return static_cast<uint64_t>(c - 'A' + 10);
      throw ValidationError("antibody: bad hex digit");
    };
    for (int b = 0; b < n_bytes; ++b) {
      uint64_t byte = (nibble(hex[static_cast<size_t>(b) * 2]) << 4) |
                      nibble(hex[static_cast<size_t>(b) * 2 + 1]);
      a.words_[static_cast<size_t>(b) / 8] |= byte << ((b % 8) * 8);
    }
    return a;
  }

  const std::vector<uint64_t>& words() const { return words_; }

 private:
  void check_index(int i) const {
    if (i < 0 || i >= n_)
      throw ValidationError("antibody: index " + std::to_string(i) + " out of range [0," +
                            std::to_string(n_) + ")");
  }

  int n_ = 0;
  std::vector<uint64_t> words_;
};

/// |a| as a free function, mirroring the analytics naming.
inline int sparsity(const Antibody& a) { return a.cardinality(); }

/// J(a,b): number of eigenvectors present in exactly one of the antibodies
/// (symmetric-difference cardinality).
inline int specificity_j(const Antibody& a, const Antibody& b) {
  require(a.size() == b.size(), "specificity_j: antibody dimensions differ");
  int count = 0;
  for (size_t w = 0; w < a.words().size(); ++w)
    count += std::popcount(a.words()[w] ^ b.words()[w]);
  return count;
}

/// V: mean of J over all ordered distinct pairs.
inline double specificity_v(const std::vector<Antibody>& antibodies) {
  const size_t n = antibodies.size();
  require(n >= 2, "specificity_v: needs at least 2 antibodies");
  double total = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j)
      total += 2.0 * specificity_j(antibodies[i], antibodies[j]);
  return total / (static_cast<double>(n) * (static_cast<double>(n) - 1.0));
}

/// Mean per-index probability that a fresh Bernoulli draw flips the
/// inclusion decision: (1/k) sum_i (0.5 - |f_e(i) - 0.5|), k = dim(f_e).
inline double mutation_probability(const Vec& f_e) {
  require(f_e.size() >= 1, "mutation_probability: empty probability vector");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < f_e.size(); ++i) {
    double p = f_e[i];
    if (p < 0.0 || p > 1.0)
      throw ValidationError("mutation_probability: component " + std::to_string(i) +
                            " outside [0,1]");
    acc += 0.5 - std::abs(p - 0.5);
  }
  return acc / static_cast<double>(f_e.size());
}

/// Project-and-reconstruct through the antibody's eigenvector subset. The
/// result is NOT clamped; clamping happens only at image export.
inline Image apply_antibody(const Image& image, const Antibody& antibody,
                            const EigenBasis& basis) {
  require(antibody.size() == basis.d_e(), "apply_antibody: antibody/basis dimension mismatch");
  require(image.rows == basis.rows && image.cols == basis.cols,
          "apply_antibody: image/basis shape mismatch");
  Vec alpha = basis.project_full(image.flatten());
  alpha = alpha.cwiseProduct(antibody.as_weights());
  Image out = Image::from_flat(basis.synthesize(alpha), basis.rows, basis.cols, image.id);
  out.identity = image.identity;
  return out;
}

/// Coefficients of the image along the antibody's eigenvectors, in ascending
/// index order.
inline Vec project(const Image& image, const EigenBasis& basis, const Antibody& subset) {
  require(subset.size() == basis.d_e(), "project: subset/basis dimension mismatch");
  Vec centered = image.flatten() - basis.mean;
  auto idx = subset.indices();
  Vec alpha(static_cast<Eigen::Index>(idx.size()));
  for (size_t j = 0; j < idx.size(); ++j)
    alpha[static_cast<Eigen::Index>(j)] = basis.vectors.col(idx[j]).dot(centered);
  return alpha;
}

/// Inverse of project: sum of the selected eigenvectors weighted by alpha,
/// shifted by the mean. Unclamped.
inline Image reconstruct(const Vec& alpha, const EigenBasis& basis, const Antibody& subset) {
  require(subset.size() == basis.d_e(), "reconstruct: subset/basis dimension mismatch");
  auto idx = subset.indices();
  require(alpha.size() == static_cast<Eigen::Index>(idx.size()),
          "reconstruct: coefficient/subset length mismatch");
  Vec flat = basis.mean;
  for (size_t j = 0; j < idx.size(); ++j)
    flat += alpha[static_cast<Eigen::Index>(j)] * basis.vectors.col(idx[j]);
  return Image::from_flat(flat, basis.rows, basis.cols);
}

struct AffinityConfig {
  double lambda1 = 8.0;
  double lambda2 = 1.0;
  double lambda3 = 0.003;
};

/// Antibody affinity: embedding-cosine fidelity minus pixel-space distortion
/// minus a sparsity penalty,
///   s(a) = l1 * cosine(F(x_recon), F(x_clean)) - l2 * |x_recon - x_clean|_2
///          - l3 * |a|.
inline double affinity(const Image& x_recon, const Image& x_clean, const Antibody& antibody,
                       const EmbeddingModel& embedder, const AffinityConfig& cfg) {
  require(x_recon.rows == x_clean.rows && x_recon.cols == x_clean.cols,
          "affinity: image shapes differ");
  double cos_term = cosine(embedder.embed(x_recon), embedder.embed(x_clean));
  double pixel_l2 = (x_recon.flatten() - x_clean.flatten()).norm();
  return cfg.lambda1 * cos_term - cfg.lambda2 * pixel_l2 -
         cfg.lambda3 * antibody.cardinality();
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_ANTIBODY_HPP
