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

#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mgaa {

// Dense 64-bit matrices carry weights, activations (d x L, one token per
// column), Grams and factors.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Builds a matrix from row-major values. Throws kDimensionMismatch when the
// value count is not rows * cols and kNonFinite on NaN/Inf.
Matrix matrix_from_row_major(Eigen::Index rows, Eigen::Index cols, std::span<const double> values);
std::vector<double> to_row_major(const Matrix& m);

void require_finite(const Matrix& m, const char* what);

struct EvdResult {
  Matrix eigvecs;  // d x d, column i pairs with eigvals[i]
  Vector eigvals;  // non-increasing, clamped to >= 0
};

struct SvdResult {
  Matrix u;        // d_out x k
  Vector singvals; // k, non-increasing
  Matrix vt;       // k x d_in
};

// Relative tolerances shared by the symmetric routines.
inline constexpr double kSymmetryTolerance = 1e-6;
inline constexpr double kPsdClampTolerance = 1e-10;

// Eigen-decomposition of a symmetric PSD matrix with eigenvalues sorted in
// descending order. The input is symmetrized as (s + s^T) / 2. Negative
// eigenvalues no larger than 1e-10 * lambda_max in magnitude are clamped to
// zero; larger negatives raise kIndefiniteBeyondTolerance.
EvdResult sym_evd(const Matrix& s);

// Thin SVD with descending singular values. Each left singular vector is
// signed so that its largest-magnitude entry (lowest row index on ties) is
// positive; the matching row of vt is flipped with it.
SvdResult svd(const Matrix& m);

// Returns acc + x * x^T.
Matrix gram_accumulate(const Matrix& acc, const Matrix& x);

// Flips columns of `vecs` (and rows of `partner` when non-null) so the
// largest-magnitude entry of each column is positive.
void canonicalize_signs(Matrix& vecs, Matrix* partner_rows);

}  // namespace mgaa
