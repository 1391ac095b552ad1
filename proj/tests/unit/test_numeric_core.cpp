// Copyright 2026 The TokenFormer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "tokenformer/errors.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/matrix.hpp"
#include "tokenformer/rng.hpp"

using namespace tokenformer;

TEST(Matrix, ShapeAndStorage) {
  Matrix m(3, 4, 1.5);
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.cols(), 4u);
  EXPECT_EQ(m.size(), 12u);
  EXPECT_TRUE(m.all_finite());
  m(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(m.all_finite());
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, HandProduct) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{0}, {1}});
  EXPECT_EQ(matmul(a, b), Matrix::from_rows({{2}, {4}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  const Matrix a = oracle::random_matrix(7, 5, rng);
  const Matrix b = oracle::random_matrix(5, 3, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_nt(a, oracle::naive_transpose(b)), oracle::naive_matmul(a, b)),
            1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(oracle::naive_transpose(a), b), oracle::naive_matmul(a, b)),
            1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(matmul_nt(Matrix(2, 3), Matrix(2, 4)), ShapeError);
  EXPECT_THROW(matmul_tn(Matrix(2, 3), Matrix(3, 3)), ShapeError);
  EXPECT_THROW(add(Matrix(2, 3), Matrix(3, 2)), ShapeError);
  EXPECT_THROW(hadamard(Matrix(1, 3), Matrix(3, 1)), ShapeError);
}

TEST(Matmul, CountsMultiplyAdds) {
  op_counter::reset();
  matmul(Matrix(4, 5), Matrix(5, 6));
  EXPECT_EQ(op_counter::multiply_adds(), 120u);
  matmul_nt(Matrix(2, 3), Matrix(7, 3));
  EXPECT_EQ(op_counter::multiply_adds(), 162u);
}

TEST(Softmax, SymmetricRow) {
  const Matrix p = softmax_rows(Matrix::from_rows({{0, 0}}));
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
}

TEST(Softmax, MaskedEntryGetsZero) {
  const double inf = std::numeric_limits<double>::infinity();
  const Matrix p = softmax_rows(Matrix::from_rows({{0, -inf}, {kMasked, 3}}));
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_EQ(p(1, 0), 0.0);
  EXPECT_EQ(p(1, 1), 1.0);
}

TEST(Softmax, MatchesDirectEvaluation) {
  const Matrix p = softmax_rows(Matrix::from_rows({{1, 2, 3}}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(p(0, j), std::exp(j + 1.0) / z, 1e-12);
}

TEST(Softmax, EmptyRowThrows) {
  EXPECT_THROW(softmax_rows(Matrix::from_rows({{1, 2}, {kMasked, kMasked}})), NumericalError);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix m = oracle::random_matrix(6, 9, rng, 5.0);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 9; ++j)
        if (j != i && rng.uniform() < 0.4) m(i, j) = kMasked;
    const Matrix p = softmax_rows(m);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (double v : p.row(i)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(RmsNorm, UnitMeanSquare) {
  Rng rng(3);
  const Matrix x = oracle::random_matrix(4, 8, rng, 3.0);
  const Matrix y = rms_normalize_rows(x, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double ms = 0;
    for (double v : y.row(i)) ms += v * v;
    EXPECT_NEAR(ms / 8.0, 1.0, 1e-12);
  }
  // Zero row stays zero thanks to eps.
  const Matrix z = rms_normalize_rows(Matrix(2, 3), 1e-6);
  EXPECT_EQ(z, Matrix(2, 3));
}

TEST(Svd, DiagonalCase) {
  const auto s = svd_singular_values(Matrix::from_rows({{3, 0, 0}, {0, 1, 0}, {0, 0, 2}}));
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s[0], 3, 1e-14);
  EXPECT_NEAR(s[1], 2, 1e-14);
  EXPECT_NEAR(s[2], 1, 1e-14);
}

TEST(Svd, RankOneOuterProduct) {
  const std::vector<double> u = {1, -2, 0.5, 3, 1}, v = {2, 1, -1};
  Matrix m(5, 3);
  double nu = 0, nv = 0;
  for (std::size_t i = 0; i < 5; ++i) nu += u[i] * u[i];
  for (std::size_t j = 0; j < 3; ++j) nv += v[j] * v[j];
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) m(i, j) = u[i] * v[j];
  const auto s = svd_singular_values(m);
  EXPECT_NEAR(s[0], std::sqrt(nu * nv), 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  EXPECT_NEAR(s[2], 0.0, 1e-12);
}

TEST(Svd, TallRankDeficientConverges) {
  // The QR step leaves rounding residue in the null rows; it used to spin forever.
  const double dir[8] = {1, -2, 0.5, 3, 0, 1, -1, 2};
  Matrix m(40, 8);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 8; ++j) m(i, j) = (i % 2 ? 1.0 : -1.0) * dir[j];
  const auto s = svd_singular_values(m);
  EXPECT_NEAR(s[0], std::sqrt(40.0 * 20.25), 1e-10);
  for (std::size_t k = 1; k < 8; ++k) EXPECT_LT(s[k], 1e-12 * s[0]);
}

TEST(Svd, MatchesGramEigenvalues) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix m = oracle::random_matrix(20, 8, rng);
    const auto s = svd_singular_values(m);
    auto ev = oracle::jacobi_eigenvalues(oracle::naive_matmul(oracle::naive_transpose(m), m));
    ASSERT_EQ(s.size(), 8u);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(s[k] * s[k], ev[k], 1e-8);
  }
}

TEST(Svd, TransposeInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix m = oracle::random_matrix(9, 4, rng);
    const auto a = svd_singular_values(m);
    const auto b = svd_singular_values(transpose(m));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
  }
}

TEST(Svd, RejectsNonFinite) {
  Matrix m(2, 2, 1.0);
  m(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd_singular_values(m), NumericalError);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(1234), b(1234), c(1235);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SplitmixReferenceValues) {
  // Published splitmix64 outputs for state 0.
  std::uint64_t st = 0;
  EXPECT_EQ(splitmix64(st), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(splitmix64(st), 0x6E789E6AA1B965F4ULL);
  EXPECT_NE(Rng(0).derive(1).next_u64(), Rng(0).derive(2).next_u64());
}

TEST(Rng, DistributionMoments) {
  Rng rng(99);
  const int n = 200000;
  double s = 0, s2 = 0, u = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    u += rng.uniform();
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(u / n, 0.5, 0.005);
  std::vector<int> counts(3);
  const std::vector<double> w = {1, 2, 7};
  for (int i = 0; i < 100000; ++i) ++counts[rng.categorical(w)];
  EXPECT_NEAR(counts[2] / 1e5, 0.7, 0.01);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}
