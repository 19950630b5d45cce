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

#ifndef EIGENSHIELD_FACEGEN_HPP
#define EIGENSHIELD_FACEGEN_HPP

// Synthetic toy-face corpus generator. Identities are latent vectors over a
// bank of smooth 2-d cosine patterns, so identity information concentrates in
// the leading principal components of the pixel distribution. Used by the
// demo CLI and the test/acceptance suites; not part of the defense itself.

#include <filesystem>
#include <string>
#include <vector>

#include "eigenshield/common.hpp"
#include "eigenshield/image.hpp"

namespace eigenshield {

struct FaceGenConfig {
  int rows = 64;
  int cols = 64;
  int n_identities = 40;
  int per_identity = 10;
  int n_patterns = 160;      // latent dimension
  double amplitude = 0.040;  // scale of the leading pattern
  double decay = 0.35;       // pattern amplitude ~ (l+4)^-decay
  double intra = 0.35;       // within-identity latent jitter (relative)
  double pixel_noise = 0.004;
  uint64_t seed = 1;
};

namespace detail {

/// Smooth cosine patterns g_{p,q}(r,c), unit peak amplitude, ordered by
/// ascending spatial frequency (p+q), excluding the constant pattern.
inline std::vector<Mat> cosine_patterns(int rows, int cols, int count) {
  std::vector<std::pair<int, int>> freqs;
  for (int s = 1; s < rows + cols && static_cast<int>(freqs.size()) < 4 * count; ++s)
    for (int p = 0; p <= s; ++p) {
      int q = s - p;
      if (p < rows && q < cols) freqs.emplace_back(p, q);
    }
  require(static_cast<int>(freqs.size()) >= count, "facegen: not enough patterns for raster size");
  std::vector<Mat> out;
  out.reserve(count);
  for (int l = 0; l < count; ++l) {
    auto [p, q] = freqs[l];
    Mat g(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        g(r, c) = std::cos(M_PI * p * (r + 0.5) / rows) * std::cos(M_PI * q * (c + 0.5) / cols);
    out.push_back(std::move(g));
  }
  return out;
}

inline Mat base_face(int rows, int cols) {
  Mat base(rows, cols);
  const double cr = 0.48 * rows;
  const double cc = 0.5 * cols;
  const double sr = 0.38 * rows;
  const double sc = 0.30 * cols;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double dr = (r - cr) / sr;
      double dc = (c - cc) / sc;
      base(r, c) = 0.35 + 0.30 * std::exp(-0.5 * (dr * dr + dc * dc));
    }
  return base;
}

}  // namespace detail

/// Generates an identity-labeled corpus. Deterministic under cfg.seed.
inline std::vector<Image> generate_face_corpus(const FaceGenConfig& cfg) {
  require(cfg.n_identities >= 1 && cfg.per_identity >= 1, "facegen: empty corpus requested");
  const int n_patterns = std::min(cfg.n_patterns, cfg.rows * cfg.cols - 1);
  const auto patterns = detail::cosine_patterns(cfg.rows, cfg.cols, n_patterns);
  const Mat base = detail::base_face(cfg.rows, cfg.cols);

  std::vector<double> scale(patterns.size());
  for (size_t l = 0; l < patterns.size(); ++l)
    scale[l] = cfg.amplitude / std::pow(static_cast<double>(l) + 4.0, cfg.decay);

  std::vector<Image> corpus;
  corpus.reserve(static_cast<size_t>(cfg.n_identities) * cfg.per_identity);
  for (int id = 0; id < cfg.n_identities; ++id) {
    Rng id_rng(derive_seed(cfg.seed, "facegen-identity", id));
    Vec latent(static_cast<Eigen::Index>(patterns.size()));
    for (Eigen::Index l = 0; l < latent.size(); ++l) latent[l] = id_rng.normal();

    for (int k = 0; k < cfg.per_identity; ++k) {
      Rng im_rng(derive_seed(cfg.seed, "facegen-image",
                             static_cast<uint64_t>(id) * 100000 + k));
      Image im(cfg.rows, cfg.cols);
      im.pix = base;
      for (size_t l = 0; l < patterns.size(); ++l) {
        double z = latent[static_cast<Eigen::Index>(l)] + cfg.intra * im_rng.normal();
        im.pix += scale[l] * z * patterns[l];
      }
      if (cfg.pixel_noise > 0)
        for (int r = 0; r < cfg.rows; ++r)
          for (int c = 0; c < cfg.cols; ++c) im.pix(r, c) += cfg.pixel_noise * im_rng.normal();
      im.pix = im.pix.cwiseMax(0.0).cwiseMin(1.0);

      char idbuf[32], imbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "id%04d", id);
      std::snprintf(imbuf, sizeof(imbuf), "img%03d.pgm", k);
      im.identity = idbuf;
      im.id = std::string(idbuf) + "/" + imbuf;
      corpus.push_back(std::move(im));
    }
  }
  return corpus;
}

/// Writes a corpus to disk in the root/<identity>/<image>.pgm layout.
inline void write_corpus(const std::filesystem::path& root, const std::vector<Image>& corpus) {
  for (const auto& im : corpus) {
    require(!im.id.empty(), "write_corpus: image without id");
    auto path = root / im.id;
    std::filesystem::create_directories(path.parent_path());
    pnm::write_pgm(path, im);
  }
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_FACEGEN_HPP
