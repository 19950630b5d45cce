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

#ifndef EIGENSHIELD_EIGENBASIS_HPP
#define EIGENSHIELD_EIGENBASIS_HPP

// Pixel-space eigenvector basis of a face corpus. Convention: population
// covariance (divide by N) of the centered flattened images, eigenvalues
// sorted descending with ties broken by solver index. When the corpus is
// smaller than the pixel dimension, the decomposition runs on the N x N Gram
// matrix (snapshot method) and is mapped back to pixel space.

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "eigenshield/common.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

struct EigenBasis {
  int rows = 0;
  int cols = 0;
  Vec mean;          // length d = rows*cols
  Mat vectors;       // d x d_e, orthonormal columns, descending eigenvalues
  Vec eigenvalues;   // length d_e, non-negative, descending
  double total_variance = 0.0;  // trace of the population covariance

  int d() const { return rows * cols; }
  int d_e() const { return static_cast<int>(vectors.cols()); }

  /// Fraction of corpus variance captured by the retained components.
  double energy_ratio() const {
    return total_variance > 0 ? eigenvalues.sum() / total_variance : 1.0;
  }

  /// Projection of a flattened image onto all retained components.
  Vec project_full(const Vec& flat) const { return vectors.transpose() * (flat - mean); }

  /// Linear combination of retained components plus the mean.
  Vec synthesize(const Vec& coeffs) const { return vectors * coeffs + mean; }

  /// Content identifier over the f4-persisted arrays; stable across
  /// save/load round trips.
  uint32_t content_id() const {
    auto crc_update = [](uint32_t crc, const double* p, Eigen::Index n) {
      std::vector<float> f(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) f[static_cast<size_t>(i)] = static_cast<float>(p[i]);
      return static_cast<uint32_t>(
          ::crc32(crc, reinterpret_cast<const Bytef*>(f.data()),
                  static_cast<uInt>(f.size() * sizeof(float))));
    };
    uint32_t crc = static_cast<uint32_t>(::crc32(0L, Z_NULL, 0));
    crc = crc_update(crc, mean.data(), mean.size());
    crc = crc_update(crc, vectors.data(), vectors.size());
    crc = crc_update(crc, eigenvalues.data(), eigenvalues.size());
    return crc;
  }
};

/// Fits the eigenbasis of a corpus. Requires at least two images and
/// d_e <= min(pixel dim, corpus size). When the numerically achievable rank
/// falls short of d_e on the Gram route, the error reports it.
inline EigenBasis fit_eigenbasis(const std::vector<Image>& corpus, int d_e) {
  require(corpus.size() >= 2, "fit_eigenbasis: corpus must contain at least 2 images");
  const int rows = corpus[0].rows;
  const int cols = corpus[0].cols;
  const Eigen::Index d = static_cast<Eigen::Index>(rows) * cols;
  const Eigen::Index n = static_cast<Eigen::Index>(corpus.size());
  require(d_e >= 1, "fit_eigenbasis: d_e must be positive");
  require(d_e <= std::min<Eigen::Index>(d, n),
          "fit_eigenbasis: d_e exceeds min(pixel dim, corpus size)");

  Mat data(n, d);  // samples as rows
  for (Eigen::Index i = 0; i < n; ++i) {
    const Image& im = corpus[static_cast<size_t>(i)];
    require(im.rows == rows && im.cols == cols, "fit_eigenbasis: mixed image sizes in corpus");
    data.row(i) = im.flatten().transpose();
  }

  EigenBasis basis;
  basis.rows = rows;
  basis.cols = cols;
  basis.mean = data.colwise().mean().transpose();
  data.rowwise() -= basis.mean.transpose();
  basis.total_variance = data.squaredNorm() / static_cast<double>(n);

  // Eigen returns ascending eigenvalues; re-rank descending, ties broken by
  // the solver's index order so repeated fits are identical.
  auto rank_descending = [](const Vec& evals) {
    std::vector<Eigen::Index> order(static_cast<size_t>(evals.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return evals[a] > evals[b];
    });
    return order;
  };

  if (n < d) {
    // Snapshot route: eigenvectors of the Gram matrix, mapped to pixel space.
    Mat gram = data * data.transpose() / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Mat> solver(gram);
    if (solver.info() != Eigen::Success) throw Error("fit_eigenbasis: eigensolver failed");
    Vec evals = solver.eigenvalues();
    auto order = rank_descending(evals);

    const double tol = std::max(evals.maxCoeff(), 0.0) * 1e-12;
    int achievable = 0;
    for (Eigen::Index i = 0; i < evals.size(); ++i)
      if (evals[i] > tol) ++achievable;
    if (d_e > achievable)
      throw ValidationError("fit_eigenbasis: requested d_e=" + std::to_string(d_e) +
                            " exceeds achievable rank " + std::to_string(achievable) +
                            " of this corpus");

    basis.vectors.resize(d, d_e);
    basis.eigenvalues.resize(d_e);
    for (int j = 0; j < d_e; ++j) {
      Eigen::Index src = order[static_cast<size_t>(j)];
      double lambda = evals[src];
      basis.eigenvalues[j] = lambda;
      basis.vectors.col(j) =
          data.transpose() * solver.eigenvectors().col(src) / std::sqrt(lambda * n);
    }
  } else {
    // Direct covariance route.
    Mat cov = data.transpose() * data / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("fit_eigenbasis: eigensolver failed");
    Vec evals = solver.eigenvalues().cwiseMax(0.0);
    auto order = rank_descending(evals);
    basis.vectors.resize(d, d_e);
    basis.eigenvalues.resize(d_e);
    for (int j = 0; j < d_e; ++j) {
      Eigen::Index src = order[static_cast<size_t>(j)];
      basis.eigenvalues[j] = evals[src];
      basis.vectors.col(j) = solver.eigenvectors().col(src);
    }
  }
  return basis;
}

inline uint32_t save_basis(const std::filesystem::path& dir, const EigenBasis& basis) {
  TensorContainer c;
  c.add("mean", basis.mean, "f4");
  c.add("vectors", basis.vectors, "f4");
  c.add("eigenvalues", basis.eigenvalues, "f4");
  c.meta()["kind"] = "eigenbasis";
  c.meta()["rows"] = basis.rows;
  c.meta()["cols"] = basis.cols;
  c.meta()["d_e"] = basis.d_e();
  c.meta()["covariance"] = "population";
  c.meta()["total_variance"] = basis.total_variance;
  c.meta()["energy_ratio"] = basis.energy_ratio();
  return c.save(dir);
}

inline EigenBasis load_basis(const std::filesystem::path& dir) {
  TensorContainer c = TensorContainer::load(dir);
  if (c.meta().value("kind", "") != "eigenbasis")
    throw ValidationError("not an eigenbasis checkpoint: " + dir.string());
  EigenBasis basis;
  basis.rows = c.meta()["rows"].get<int>();
  basis.cols = c.meta()["cols"].get<int>();
  basis.mean = c.vector("mean");
  basis.vectors = c.matrix("vectors");
  basis.eigenvalues = c.vector("eigenvalues");
  basis.total_variance = c.meta()["total_variance"].get<double>();
  require(basis.mean.size() == basis.vectors.rows() &&
              basis.vectors.rows() == static_cast<Eigen::Index>(basis.rows) * basis.cols,
          "eigenbasis checkpoint: inconsistent dimensions");
  return basis;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_EIGENBASIS_HPP
