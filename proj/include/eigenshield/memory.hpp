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

#ifndef EIGENSHIELD_MEMORY_HPP
#define EIGENSHIELD_MEMORY_HPP

// Immune-memory bank over noise features: cosine-addressed read with
// soft aggregation, and a nearest-item moving-average write that touches
// exactly one row per update.

#include <cmath>

#include "eigenshield/common.hpp"

namespace eigenshield {

struct MemoryBank {
  Mat items;              // d_m x d_n, rows are memory items
  double epsilon = 0.999;  // moving-average decay for writes

  int d_m() const { return static_cast<int>(items.rows()); }
  int d_n() const { return static_cast<int>(items.cols()); }

  /// Rows drawn from a spherical distribution and scaled to unit norm, so
  /// cosine addressing is well conditioned from the first step.
  static MemoryBank init(int d_m, int d_n, double epsilon, uint64_t seed) {
    require(d_m >= 1 && d_n >= 1, "memory: dimensions must be positive");
    require(epsilon > 0.0 && epsilon < 1.0, "memory: epsilon must lie in (0,1)");
    MemoryBank bank;
    bank.epsilon = epsilon;
    bank.items.resize(d_m, d_n);
    Rng rng(derive_seed(seed, "memory-init"));
    for (int i = 0; i < d_m; ++i) {
      for (int j = 0; j < d_n; ++j) bank.items(i, j) = rng.normal();
      double norm = bank.items.row(i).norm();
      if (norm == 0.0) bank.items(i, 0) = 1.0;  // astronomically unlikely
      else bank.items.row(i) /= norm;
    }
    return bank;
  }
};

struct MemoryReadTrace {
  Vec r;            // per-item aggregation weight actually used
  Vec cosines;      // raw cosine similarities
  double query_norm = 0.0;
  bool softmax = false;
};

namespace detail {

inline void check_bank(const MemoryBank& bank) {
  for (int i = 0; i < bank.d_m(); ++i)
    if (bank.items.row(i).norm() == 0.0)
      throw Error("memory: zero-norm memory item at row " + std::to_string(i));
}

}  // namespace detail

/// Cosine similarities between the query and every item, followed by a
/// weighted aggregation of the items. Default weights are the raw cosines;
/// the softmax flag switches to softmax-normalized weights (ablation switch).
inline Vec memory_read(const MemoryBank& bank, const Vec& query, bool softmax = false,
                       MemoryReadTrace* trace = nullptr) {
  require(query.size() == bank.d_n(), "memory_read: query dimension mismatch");
  const double qn = query.norm();
  if (qn == 0.0) throw Error("memory_read: zero-norm query");
  detail::check_bank(bank);

  Vec cosines(bank.d_m());
  for (int i = 0; i < bank.d_m(); ++i)
    cosines[i] = bank.items.row(i).dot(query) / (bank.items.row(i).norm() * qn);

  Vec weights;
  if (softmax) {
    Vec e = (cosines.array() - cosines.maxCoeff()).exp();
    weights = e / e.sum();
  } else {
    weights = cosines;
  }

  if (trace) {
    trace->r = weights;
    trace->cosines = cosines;
    trace->query_norm = qn;
    trace->softmax = softmax;
  }
  return bank.items.transpose() * weights;
}

/// Gradient of a scalar through memory_read with respect to the query.
/// grad_out is d(scalar)/d(read output).
inline Vec memory_read_backward(const MemoryBank& bank, const Vec& query,
                                const MemoryReadTrace& trace, const Vec& grad_out) {
  const double qn = trace.query_norm;
  const Vec q_hat = query / qn;

  // d(scalar)/d(weight_i) = m_i . grad_out
  Vec dw = bank.items * grad_out;

  Vec dcos;
  if (trace.softmax) {
    // softmax Jacobian: dcos = w .* (dw - sum(w .* dw))
    double mix = trace.r.dot(dw);
    dcos = trace.r.array() * (dw.array() - mix);
  } else {
    dcos = dw;
  }

  // d cos_i / d q = (m_i/|m_i| - cos_i * q_hat) / |q|
  Vec grad_q = Vec::Zero(query.size());
  for (int i = 0; i < bank.d_m(); ++i) {
    const Vec m_hat = bank.items.row(i).transpose() / bank.items.row(i).norm();
    grad_q += dcos[i] / qn * (m_hat - trace.cosines[i] * q_hat);
  }
  return grad_q;
}

/// Moving-average write: the most cosine-similar item (ties resolved to the
/// lowest index) is blended toward f_n; every other row is untouched.
/// Returns the updated row index.
inline int memory_update(MemoryBank& bank, const Vec& f_n) {
  require(f_n.size() == bank.d_n(), "memory_update: feature dimension mismatch");
  if (f_n.norm() == 0.0) throw Error("memory_update: zero-norm input feature");
  detail::check_bank(bank);

  int best = 0;
  double best_cos = -2.0;
  for (int i = 0; i < bank.d_m(); ++i) {
    double c = bank.items.row(i).dot(f_n) / (bank.items.row(i).norm() * f_n.norm());
    if (c > best_cos) {
      best_cos = c;
      best = i;
    }
  }
  bank.items.row(best) =
      bank.epsilon * bank.items.row(best) + (1.0 - bank.epsilon) * f_n.transpose();
  return best;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_MEMORY_HPP
