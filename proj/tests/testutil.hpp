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

#ifndef EIGENSHIELD_TESTUTIL_HPP
#define EIGENSHIELD_TESTUTIL_HPP

#include <cstdlib>
#include <filesystem>
#include <string>

#include "eigenshield/common.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/nn.hpp"

namespace testutil {

/// Fixed affine embedder for hand-computed oracles and fast attack rigs.
class LinearEmbedder final : public eigenshield::EmbeddingModel {
 public:
  LinearEmbedder(eigenshield::Mat w, int rows, int cols)
      : w_(std::move(w)), rows_(rows), cols_(cols) {}

  static LinearEmbedder random(int dim, int rows, int cols, uint64_t seed) {
    eigenshield::Rng rng(seed);
    eigenshield::Mat w(dim, rows * cols);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
    return LinearEmbedder(std::move(w), rows, cols);
  }

  std::string name() const override { return "linear-test"; }
  int dim() const override { return static_cast<int>(w_.rows()); }
  int input_rows() const override { return rows_; }
  int input_cols() const override { return cols_; }

  eigenshield::Vec embed(const eigenshield::Image& image) const override {
    return w_ * image.flatten();
  }

  eigenshield::Image embed_input_gradient(const eigenshield::Image&,
                                          const eigenshield::Vec& g) const override {
    return eigenshield::Image::from_flat(w_.transpose() * g, rows_, cols_);
  }

  uint64_t param_hash() const override { return 1; }

 private:
  eigenshield::Mat w_;
  int rows_, cols_;
};

/// Unique scratch directory under the system temp dir, removed on
/// destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / ("eigenshield-" + tag + "-" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directories(candidate, ec) && !ec) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("TempDir: cannot create scratch directory");
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline eigenshield::Image random_image(int rows, int cols, uint64_t seed) {
  eigenshield::Rng rng(seed);
  eigenshield::Image im(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) im.pix(r, c) = rng.uniform();
  return im;
}

/// Central finite difference of a scalar function along one coordinate of a
/// parameter vector.
template <typename F>
double central_difference(F&& f, eigenshield::Vec& params, Eigen::Index i, double h) {
  const double saved = params[i];
  params[i] = saved + h;
  double up = f();
  params[i] = saved - h;
  double down = f();
  params[i] = saved;
  return (up - down) / (2.0 * h);
}

inline std::filesystem::path source_dir() {
#ifdef EIGENSHIELD_SOURCE_DIR
  return EIGENSHIELD_SOURCE_DIR;
#else
  return std::filesystem::current_path();
#endif
}

}  // namespace testutil

#endif  // EIGENSHIELD_TESTUTIL_HPP
