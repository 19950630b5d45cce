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

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "eigenshield/antibody.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "testutil.hpp"

using namespace eigenshield;

namespace {

using testutil::LinearEmbedder;

EigenBasis small_basis(int rows, int cols, int d_e, uint64_t seed) {
  std::vector<Image> corpus;
  for (int i = 0; i < 4 * rows * cols; ++i)
    corpus.push_back(testutil::random_image(rows, cols, seed + static_cast<uint64_t>(i)));
  return fit_eigenbasis(corpus, d_e);
}

}  // namespace

TEST_CASE("apply_antibody: full, empty, and single-component cases") {
  auto basis = small_basis(4, 4, 10, 3);

  // antibody = all indices, image in basis span -> recovered
  Rng rng(9);
  Vec coeffs(10);
  for (int i = 0; i < 10; ++i) coeffs[i] = rng.normal();
  Image x = Image::from_flat(basis.synthesize(coeffs), 4, 4);
  Image full = apply_antibody(x, Antibody::full(10), basis);
  REQUIRE((full.flatten() - x.flatten()).cwiseAbs().maxCoeff() < 1e-5);

  // empty antibody -> mean image, degeneracy visible on the antibody
  Antibody none = Antibody::empty(10);
  REQUIRE(none.is_empty());
  Image mean_rec = apply_antibody(x, none, basis);
  REQUIRE((mean_rec.flatten() - basis.mean).cwiseAbs().maxCoeff() < 1e-10);

  // image = mean + 3 e_2 + 4 e_7, antibody {2} -> mean + 3 e_2
  Image mix = Image::from_flat(
      basis.mean + 3.0 * basis.vectors.col(2) + 4.0 * basis.vectors.col(7), 4, 4);
  Image kept = apply_antibody(mix, Antibody::from_indices(10, {2}), basis);
  REQUIRE((kept.flatten() - (basis.mean + 3.0 * basis.vectors.col(2))).cwiseAbs().maxCoeff() <
          1e-10);

  // dimension mismatch
  REQUIRE_THROWS_AS(apply_antibody(x, Antibody::full(9), basis), ValidationError);
}

TEST_CASE("apply_antibody is idempotent") {
  auto basis = small_basis(5, 5, 12, 17);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Image x = testutil::random_image(5, 5, 100 + static_cast<uint64_t>(trial));
    Antibody a(12);
    for (int i = 0; i < 12; ++i) a.set(i, rng.bernoulli(0.5));
    Image once = apply_antibody(x, a, basis);
    Image twice = apply_antibody(once, a, basis);
    REQUIRE((twice.flatten() - once.flatten()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("affinity: identity and degenerate cases with the reference weights") {
  // identity embedder on 2x2 images
  LinearEmbedder embedder(Mat::Identity(4, 4), 2, 2);
  AffinityConfig cfg;  // 8, 1, 0.003
  Image x = testutil::random_image(2, 2, 5);

  // |a| = 1500 stand-in: a 1500-wide antibody fully set
  Antibody a1500 = Antibody::full(1500);
  REQUIRE(affinity(x, x, a1500, embedder, cfg) == Catch::Approx(3.5).margin(1e-12));

  Antibody a0 = Antibody::empty(1500);
  REQUIRE(affinity(x, x, a0, embedder, cfg) == Catch::Approx(8.0).margin(1e-12));
}

TEST_CASE("affinity matches an independent step-by-step evaluation") {
  // fixed toy embedder, two fixed 4x4 images, |a| = 2
  Mat w(3, 16);
  Rng rng(21);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i / 16, i % 16) = rng.normal();
  LinearEmbedder embedder(w, 4, 4);

  Image recon = testutil::random_image(4, 4, 31);
  Image clean = testutil::random_image(4, 4, 32);
  Antibody a = Antibody::from_indices(8, {1, 6});
  AffinityConfig cfg;
  cfg.lambda1 = 8.0;
  cfg.lambda2 = 1.0;
  cfg.lambda3 = 0.003;

  // oracle: independent loops for the embeddings, cosine, and pixel distance
  Vec fr = Vec::Zero(3), fc = Vec::Zero(3);
  for (int o = 0; o < 3; ++o)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        fr[o] += w(o, r * 4 + c) * recon.pix(r, c);
        fc[o] += w(o, r * 4 + c) * clean.pix(r, c);
      }
  double dot = 0, nr = 0, nc = 0;
  for (int o = 0; o < 3; ++o) {
    dot += fr[o] * fc[o];
    nr += fr[o] * fr[o];
    nc += fc[o] * fc[o];
  }
  double cos_oracle = dot / (std::sqrt(nr) * std::sqrt(nc));
  double l2 = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double d = recon.pix(r, c) - clean.pix(r, c);
      l2 += d * d;
    }
  double oracle = 8.0 * cos_oracle - std::sqrt(l2) - 0.003 * 2;

  REQUIRE(affinity(recon, clean, a, embedder, cfg) == Catch::Approx(oracle).margin(1e-12));
}

TEST_CASE("affinity rejects zero-norm embeddings") {
  LinearEmbedder embedder(Mat::Zero(3, 4), 2, 2);
  Image x = testutil::random_image(2, 2, 1);
  try {
    affinity(x, x, Antibody::full(4), embedder, AffinityConfig{});
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("undefined cosine") != std::string::npos);
  }
}

TEST_CASE("affinity strictly decreases in |a| with everything else fixed") {
  LinearEmbedder embedder(Mat::Identity(4, 4), 2, 2);
  Image x = testutil::random_image(2, 2, 2);
  AffinityConfig cfg;
  double prev = affinity(x, x, Antibody::empty(64), embedder, cfg);
  for (int n = 1; n <= 64; n += 7) {
    Antibody a(64);
    for (int i = 0; i < n; ++i) a.set(i, true);
    double s = affinity(x, x, a, embedder, cfg);
    REQUIRE(s < prev);
    prev = s;
  }
}

TEST_CASE("specificity J: identity, forced case, and set-based oracle") {
  Antibody a = Antibody::from_indices(8, {1, 2, 3});
  Antibody b = Antibody::from_indices(8, {3, 4});
  REQUIRE(specificity_j(a, a) == 0);
  REQUIRE(specificity_j(a, b) == 3);
  REQUIRE_THROWS_AS(specificity_j(a, Antibody::full(9)), ValidationError);

  // random pair at d_e = 1500 vs explicit set symmetric difference
  Rng rng(77);
  Antibody x(1500), y(1500);
  std::set<int> sx, sy;
  for (int i = 0; i < 1500; ++i) {
    if (rng.bernoulli(0.3)) {
      x.set(i, true);
      sx.insert(i);
    }
    if (rng.bernoulli(0.6)) {
      y.set(i, true);
      sy.insert(i);
    }
  }
  int oracle = 0;
  for (int i = 0; i < 1500; ++i) {
    bool in_x = sx.count(i) > 0, in_y = sy.count(i) > 0;
    if (in_x != in_y) ++oracle;
  }
  REQUIRE(specificity_j(x, y) == oracle);
}

TEST_CASE("J is a metric on bitmasks") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    Antibody a(40), b(40), c(40);
    for (int i = 0; i < 40; ++i) {
      a.set(i, rng.bernoulli(0.5));
      b.set(i, rng.bernoulli(0.5));
      c.set(i, rng.bernoulli(0.5));
    }
    REQUIRE(specificity_j(a, b) == specificity_j(b, a));
    REQUIRE((specificity_j(a, b) == 0) == (a == b));
    REQUIRE(specificity_j(a, c) <= specificity_j(a, b) + specificity_j(b, c));
  }
}

TEST_CASE("specificity V: degenerate and brute-force cases") {
  Antibody a = Antibody::from_indices(8, {1, 2, 3});
  std::vector<Antibody> same(4, a);
  REQUIRE(specificity_v(same) == 0.0);

  Antibody b = Antibody::from_indices(8, {3, 4});
  REQUIRE(specificity_v({a, b}) == Catch::Approx(3.0));

  REQUIRE_THROWS_AS(specificity_v({a}), ValidationError);

  // 5 random antibodies vs O(n^2) double loop
  Rng rng(55);
  std::vector<Antibody> set;
  for (int k = 0; k < 5; ++k) {
    Antibody x(64);
    for (int i = 0; i < 64; ++i) x.set(i, rng.bernoulli(0.4));
    set.push_back(x);
  }
  double oracle = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) oracle += specificity_j(set[static_cast<size_t>(i)],
                                          set[static_cast<size_t>(j)]);
  oracle /= 5.0 * 4.0;
  REQUIRE(specificity_v(set) == Catch::Approx(oracle).margin(1e-12));
}

TEST_CASE("mutation probability") {
  REQUIRE(mutation_probability(Vec::Constant(10, 0.5)) == Catch::Approx(0.5));

  Vec hard(6);
  hard << 0, 1, 0, 0, 1, 1;
  REQUIRE(mutation_probability(hard) == Catch::Approx(0.0));

  Vec two(2);
  two << 0.3, 0.9;
  REQUIRE(mutation_probability(two) == Catch::Approx(0.2).margin(1e-12));

  Vec bad(2);
  bad << 0.5, 1.5;
  REQUIRE_THROWS_AS(mutation_probability(bad), ValidationError);
}

TEST_CASE("sparsity") {
  REQUIRE(sparsity(Antibody::empty(1500)) == 0);
  REQUIRE(sparsity(Antibody::full(1500)) == 1500);

  Rng rng(2);
  Antibody a(333);
  int oracle = 0;
  for (int i = 0; i < 333; ++i) {
    bool bit = rng.bernoulli(0.5);
    a.set(i, bit);
    if (bit) ++oracle;
  }
  REQUIRE(sparsity(a) == oracle);
}

TEST_CASE("hex serialization round-trips") {
  Rng rng(31);
  for (int n : {1, 7, 8, 63, 64, 65, 130, 256}) {
    Antibody a(n);
    for (int i = 0; i < n; ++i) a.set(i, rng.bernoulli(0.5));
    Antibody back = Antibody::from_hex(a.to_hex(), n);
    REQUIRE(back == a);
  }
}
