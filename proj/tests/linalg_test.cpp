// Copyright 2026 The mgaa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mgaa/linalg.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mgaa/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace mgaa {
namespace {

using testing::jacobi_eigenvalues;
using testing::expect_errc;
using testing::random_matrix;

TEST(SymEvd, DiagonalSortsDescending) {
  Matrix s(2, 2);
  s << 1, 0, 0, 4;
  const EvdResult r = sym_evd(s);
  EXPECT_DOUBLE_EQ(r.eigvals(0), 4.0);
  EXPECT_DOUBLE_EQ(r.eigvals(1), 1.0);
  EXPECT_NEAR(std::abs(r.eigvecs(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(r.eigvecs(0, 1)), 1.0, 1e-15);
}

TEST(SymEvd, RankOneProjector) {
  Vector v(2);
  v << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const EvdResult r = sym_evd(v * v.transpose());
  EXPECT_NEAR(r.eigvals(0), 1.0, 1e-14);
  EXPECT_EQ(r.eigvals(1), 0.0);
}

TEST(SymEvd, MatchesJacobiOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix b = random_matrix(8, 8, seed);
    const Matrix a = b * b.transpose();
    const EvdResult r = sym_evd(a);
    const auto ref = jacobi_eigenvalues(a);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(r.eigvals(i), ref[static_cast<std::size_t>(i)], 1e-8);
  }
}

TEST(SymEvd, OrthonormalReconstructsAndTraceMatches) {
  const Matrix b = random_matrix(12, 20, 7);
  const Matrix a = b * b.transpose();
  const EvdResult r = sym_evd(a);
  const Eigen::Index d = a.rows();
  EXPECT_LE((r.eigvecs.transpose() * r.eigvecs - Matrix::Identity(d, d)).norm(), 1e-8 * d);
  EXPECT_LE((r.eigvecs * r.eigvals.asDiagonal() * r.eigvecs.transpose() - a).norm(), 1e-6 * a.norm());
  EXPECT_NEAR(r.eigvals.sum(), a.trace(), 1e-8 * a.trace());
  for (Eigen::Index i = 1; i < d; ++i) EXPECT_GE(r.eigvals(i - 1), r.eigvals(i));
}

TEST(SymEvd, SignConventionLargestEntryPositive) {
  const Matrix b = random_matrix(6, 6, 3);
  const EvdResult r = sym_evd(b * b.transpose());
  for (Eigen::Index j = 0; j < 6; ++j) {
    Eigen::Index idx = 0;
    r.eigvecs.col(j).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(r.eigvecs(idx, j), 0.0);
  }
}

TEST(SymEvd, ClampsRoundoffNegatives) {
  Matrix s(2, 2);
  s << 1.0, 0.0, 0.0, -1e-12;
  const EvdResult r = sym_evd(s);
  EXPECT_EQ(r.eigvals(1), 0.0);
}

TEST(SymEvd, Errors) {
  expect_errc(Errc::kNonSquare, [] { sym_evd(Matrix::Zero(2, 3)); });
  Matrix ns(2, 2);
  ns << 1, 1, 0, 1;
  expect_errc(Errc::kNotSymmetric, [&] { sym_evd(ns); });
  Matrix ind(2, 2);
  ind << 1, 0, 0, -0.5;
  expect_errc(Errc::kIndefiniteBeyondTolerance, [&] { sym_evd(ind); });
  Matrix nan = Matrix::Identity(2, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  expect_errc(Errc::kNonFinite, [&] { sym_evd(nan); });
}

TEST(SymEvd, Deterministic) {
  const Matrix b = random_matrix(16, 16, 11);
  const Matrix a = b * b.transpose();
  const EvdResult r1 = sym_evd(a);
  const EvdResult r2 = sym_evd(a);
  EXPECT_EQ(r1.eigvals, r2.eigvals);
  EXPECT_EQ(r1.eigvecs, r2.eigvecs);
}

TEST(Svd, IdentityAndDiagonal) {
  const SvdResult id = svd(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(id.singvals(i), 1.0, 1e-15);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3.0;
  const SvdResult r = svd(d);
  EXPECT_DOUBLE_EQ(r.singvals(0), 3.0);
  EXPECT_DOUBLE_EQ(r.singvals(1), 0.0);
}

TEST(Svd, SquaredSingularValuesMatchGramEigenvalues) {
  const Matrix m = random_matrix(5, 3, 5);
  const SvdResult r = svd(m);
  const EvdResult e = sym_evd(m.transpose() * m);
  ASSERT_EQ(r.singvals.size(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.singvals(i) * r.singvals(i), e.eigvals(i), 1e-8);
  const auto ref = jacobi_eigenvalues(m.transpose() * m);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.singvals(i) * r.singvals(i), ref[static_cast<std::size_t>(i)], 1e-8);
}

TEST(Svd, OrthonormalReconstructionAndSigns) {
  for (auto [rows, cols] : {std::pair{7, 4}, std::pair{4, 7}, std::pair{6, 6}}) {
    const Matrix m = random_matrix(rows, cols, 13);
    const SvdResult r = svd(m);
    const Eigen::Index k = std::min(rows, cols);
    const double tol = 1e-8 * std::max(rows, cols);
    EXPECT_LE((r.u.transpose() * r.u - Matrix::Identity(k, k)).norm(), tol);
    EXPECT_LE((r.vt * r.vt.transpose() - Matrix::Identity(k, k)).norm(), tol);
    EXPECT_LE((r.u * r.singvals.asDiagonal() * r.vt - m).norm(), 1e-6 * m.norm());
    EXPECT_NEAR(r.singvals.squaredNorm(), m.squaredNorm(), 1e-8 * m.squaredNorm());
    for (Eigen::Index j = 0; j < k; ++j) {
      Eigen::Index idx = 0;
      r.u.col(j).cwiseAbs().maxCoeff(&idx);
      EXPECT_GT(r.u(idx, j), 0.0);
    }
  }
}

TEST(CanonicalizeSigns, TiesGoToLowestRow) {
  Matrix v(2, 1);
  v << -0.5, 0.5;
  Matrix partner(1, 3);
  partner << 1, 2, 3;
  canonicalize_signs(v, &partner);
  EXPECT_EQ(v(0, 0), 0.5);
  EXPECT_EQ(v(1, 0), -0.5);
  EXPECT_EQ(partner(0, 2), -3.0);
}

TEST(GramAccumulate, Examples) {
  Matrix x(2, 1);
  x << 1, 0;
  Matrix expect(2, 2);
  expect << 1, 0, 0, 0;
  EXPECT_EQ(gram_accumulate(Matrix::Zero(2, 2), x), expect);
  EXPECT_EQ(gram_accumulate(Matrix::Identity(2, 2), Matrix::Zero(2, 3)), Matrix::Identity(2, 2));
}

TEST(GramAccumulate, BatchedEqualsConcatenatedAndNaive) {
  const Matrix x1 = random_matrix(6, 10, 1);
  const Matrix x2 = random_matrix(6, 7, 2);
  Matrix cat(6, 17);
  cat << x1, x2;
  const Matrix batched = gram_accumulate(gram_accumulate(Matrix::Zero(6, 6), x1), x2);
  const Matrix once = gram_accumulate(Matrix::Zero(6, 6), cat);
  EXPECT_LE((batched - once).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((once - testing::naive_gram(cat)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GramAccumulate, DimensionMismatch) {
  expect_errc(Errc::kDimensionMismatch, [] { gram_accumulate(Matrix::Zero(2, 2), Matrix::Zero(3, 1)); });
  expect_errc(Errc::kDimensionMismatch, [] { gram_accumulate(Matrix::Zero(2, 3), Matrix::Zero(2, 1)); });
}

TEST(RowMajor, RoundTrip) {
  const Matrix m = random_matrix(3, 5, 4);
  const auto v = to_row_major(m);
  EXPECT_EQ(v[1], m(0, 1));
  EXPECT_EQ(matrix_from_row_major(3, 5, v), m);
}

}  // namespace
}  // namespace mgaa
