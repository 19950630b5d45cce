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

#include "eigenshield/memory.hpp"
#include "testutil.hpp"

using namespace eigenshield;

namespace {

MemoryBank bank_from_rows(const Mat& rows, double epsilon = 0.9) {
  MemoryBank bank;
  bank.items = rows;
  bank.epsilon = epsilon;
  return bank;
}

}  // namespace

TEST_CASE("read with orthonormal rows and an aligned query") {
  Mat rows(2, 2);
  rows << 1, 0, 0, 1;
  MemoryBank bank = bank_from_rows(rows);

  Vec q(2);
  q << 1, 0;
  MemoryReadTrace trace;
  Vec out = memory_read(bank, q, false, &trace);
  REQUIRE(trace.r[0] == Catch::Approx(1.0));
  REQUIRE(trace.r[1] == Catch::Approx(0.0));
  REQUIRE(out[0] == Catch::Approx(1.0));
  REQUIRE(out[1] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("query orthogonal to every row reads zero") {
  Mat rows(2, 3);
  rows << 1, 0, 0, 0, 1, 0;
  MemoryBank bank = bank_from_rows(rows);
  Vec q(3);
  q << 0, 0, 2;
  Vec out = memory_read(bank, q);
  REQUIRE(out.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("read matches a hand-rolled cosine/weighted-sum loop") {
  MemoryBank bank = MemoryBank::init(3, 4, 0.999, 17);
  Vec q(4);
  Rng rng(5);
  for (int i = 0; i < 4; ++i) q[i] = rng.normal();

  Vec out = memory_read(bank, q);

  // oracle: direct loops
  Vec expect = Vec::Zero(4);
  for (int i = 0; i < 3; ++i) {
    double dot = 0, mn = 0, qn = 0;
    for (int j = 0; j < 4; ++j) {
      dot += bank.items(i, j) * q[j];
      mn += bank.items(i, j) * bank.items(i, j);
      qn += q[j] * q[j];
    }
    double r = dot / (std::sqrt(mn) * std::sqrt(qn));
    for (int j = 0; j < 4; ++j) expect[j] += r * bank.items(i, j);
  }
  REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("zero-norm query and zero rows are identified") {
  MemoryBank bank = MemoryBank::init(2, 3, 0.9, 1);
  try {
    memory_read(bank, Vec::Zero(3));
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("zero-norm query") != std::string::npos);
  }

  bank.items.row(1).setZero();
  Vec q = Vec::Ones(3);
  try {
    memory_read(bank, q);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("row 1") != std::string::npos);
  }
  REQUIRE_THROWS_AS(memory_update(bank, q), Error);
}

TEST_CASE("update: fixed point, blend arithmetic, and single-row mutation") {
  // f_n equal to its best-matching row leaves the bank unchanged
  Mat rows(2, 2);
  rows << 0.6, 0.8, -1, 0;
  MemoryBank bank = bank_from_rows(rows, 0.9);
  Vec f(2);
  f << 0.6, 0.8;
  Mat before = bank.items;
  int idx = memory_update(bank, f);
  REQUIRE(idx == 0);
  REQUIRE((bank.items - before).cwiseAbs().maxCoeff() < 1e-15);

  // m* = (1,0), f_n = (0,1), eps = 0.9 -> (0.9, 0.1)
  Mat rows2(2, 2);
  rows2 << 1, 0, -1, -1;
  MemoryBank bank2 = bank_from_rows(rows2, 0.9);
  Vec f2(2);
  f2 << 0, 1;
  int i2 = memory_update(bank2, f2);
  REQUIRE(i2 == 0);
  REQUIRE(bank2.items(0, 0) == Catch::Approx(0.9));
  REQUIRE(bank2.items(0, 1) == Catch::Approx(0.1));
  REQUIRE(bank2.items(1, 0) == Catch::Approx(-1.0));

  // any update mutates exactly one row
  MemoryBank bank3 = MemoryBank::init(8, 5, 0.99, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Vec fn(5);
    Rng rng(100 + static_cast<uint64_t>(trial));
    for (int j = 0; j < 5; ++j) fn[j] = rng.normal();
    Mat prev = bank3.items;
    memory_update(bank3, fn);
    int changed = 0;
    for (int i = 0; i < 8; ++i)
      if ((bank3.items.row(i) - prev.row(i)).cwiseAbs().maxCoeff() > 0.0) ++changed;
    REQUIRE(changed == 1);
  }
}

TEST_CASE("argmax ties resolve to the lowest index") {
  Mat rows(3, 2);
  rows << 2, 0, 1, 0, 0, 1;  // rows 0 and 1 have identical cosine to (1,0)
  MemoryBank bank = bank_from_rows(rows, 0.5);
  Vec f(2);
  f << 1, 0;
  REQUIRE(memory_update(bank, f) == 0);
}

TEST_CASE("constant-input updates contract geometrically at rate epsilon") {
  MemoryBank bank = MemoryBank::init(4, 3, 0.9, 9);
  Vec f(3);
  f << 0.3, -0.7, 0.2;
  memory_update(bank, f);
  // after the first write the closest row stays closest; track its distance
  int star = -1;
  {
    double best = -2;
    for (int i = 0; i < 4; ++i) {
      double c = bank.items.row(i).dot(f) / (bank.items.row(i).norm() * f.norm());
      if (c > best) {
        best = c;
        star = i;
      }
    }
  }
  double dist = (bank.items.row(star).transpose() - f).norm();
  for (int t = 0; t < 20; ++t) {
    memory_update(bank, f);
    double next = (bank.items.row(star).transpose() - f).norm();
    REQUIRE(next == Catch::Approx(bank.epsilon * dist).margin(1e-12));
    dist = next;
  }
}

TEST_CASE("read is linear in row magnitudes for fixed directions") {
  MemoryBank bank = MemoryBank::init(3, 4, 0.9, 21);
  Vec q(4);
  q << 0.5, -0.25, 1.0, 0.0;
  MemoryReadTrace trace;
  Vec base = memory_read(bank, q, false, &trace);

  // scaling row j leaves its cosine unchanged and scales its contribution
  MemoryBank scaled = bank;
  scaled.items.row(1) *= 3.0;
  Vec out = memory_read(scaled, q);
  Vec expect = base + 2.0 * trace.r[1] * bank.items.row(1).transpose();
  REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("read backward matches finite differences (raw and softmax modes)") {
  for (bool softmax : {false, true}) {
    MemoryBank bank = MemoryBank::init(5, 6, 0.9, 31);
    Vec q(6);
    Rng rng(11);
    for (int i = 0; i < 6; ++i) q[i] = rng.normal();
    Vec c(6);
    for (int i = 0; i < 6; ++i) c[i] = rng.normal();

    MemoryReadTrace trace;
    memory_read(bank, q, softmax, &trace);
    Vec exact = memory_read_backward(bank, q, trace, c);

    for (int i = 0; i < 6; ++i) {
      double fd = testutil::central_difference(
          [&]() { return c.dot(memory_read(bank, q, softmax)); }, q, i, 1e-6);
      REQUIRE(std::abs(fd - exact[i]) <
              1e-4 * std::max({std::abs(fd), std::abs(exact[i]), 1.0}));
    }
  }
}

TEST_CASE("softmax read normalizes weights to one") {
  MemoryBank bank = MemoryBank::init(4, 3, 0.9, 2);
  Vec q(3);
  q << 1, 2, 3;
  MemoryReadTrace trace;
  memory_read(bank, q, true, &trace);
  REQUIRE(trace.r.sum() == Catch::Approx(1.0));
  REQUIRE(trace.r.minCoeff() > 0.0);
}
