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

#include <cmath>
#include <string>

#include "mgaa/error.hpp"

namespace mgaa {

Matrix matrix_from_row_major(Eigen::Index rows, Eigen::Index cols, std::span<const double> values) {
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != values.size()) {
    throw Error(Errc::kDimensionMismatch,
                std::to_string(values.size()) + " values for a " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " matrix");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  }
  require_finite(m, "matrix");
  return m;
}

std::vector<double> to_row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(Errc::kNonFinite, std::string(what) + " has NaN/Inf entries");
}

void canonicalize_signs(Matrix& vecs, Matrix* partner_rows) {
  for (Eigen::Index j = 0; j < vecs.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < vecs.rows(); ++i) {
      const double a = std::abs(vecs(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (vecs(best, j) < 0.0) {
      vecs.col(j) = -vecs.col(j);
      if (partner_rows != nullptr) partner_rows->row(j) = -partner_rows->row(j);
    }
  }
}

EvdResult sym_evd(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw Error(Errc::kNonSquare,
                "sym_evd on " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  }
  require_finite(s, "sym_evd input");
  const Eigen::Index d = s.rows();
  if (d == 0) return {};

  const double norm = s.norm();
  const double asym = (s - s.transpose()).norm();
  if (asym > kSymmetryTolerance * norm) {
    throw Error(Errc::kNotSymmetric, "asymmetry " + std::to_string(asym) + " vs norm " +
                                         std::to_string(norm));
  }
  const Matrix sym = 0.5 * (s + s.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw Error(Errc::kConvergenceFailure, "symmetric eigensolver did not converge");
  }

  // Eigen returns ascending order.
  EvdResult out;
  out.eigvals = solver.eigenvalues().reverse();
  out.eigvecs = solver.eigenvectors().rowwise().reverse();

  const double lambda_max = out.eigvals(0);
  for (Eigen::Index i = 0; i < d; ++i) {
    double& v = out.eigvals(i);
    if (v >= 0.0) continue;
    if (lambda_max > 0.0 && -v <= kPsdClampTolerance * lambda_max) {
      v = 0.0;
    } else {
      throw Error(Errc::kIndefiniteBeyondTolerance,
                  "eigenvalue " + std::to_string(v) + " with lambda_max " + std::to_string(lambda_max));
    }
  }
  canonicalize_signs(out.eigvecs, nullptr);
  return out;
}

SvdResult svd(const Matrix& m) {
  require_finite(m, "svd input");
  Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) {
    throw Error(Errc::kConvergenceFailure, "Jacobi SVD did not converge");
  }
  SvdResult out;
  out.u = solver.matrixU();
  out.singvals = solver.singularValues();
  out.vt = solver.matrixV().transpose();
  canonicalize_signs(out.u, &out.vt);
  return out;
}

Matrix gram_accumulate(const Matrix& acc, const Matrix& x) {
  if (acc.rows() != acc.cols() || acc.rows() != x.rows()) {
    throw Error(Errc::kDimensionMismatch,
                "accumulator " + std::to_string(acc.rows()) + "x" + std::to_string(acc.cols()) +
                    " vs batch with " + std::to_string(x.rows()) + " rows");
  }
  Matrix out = acc;
  out.noalias() += x * x.transpose();
  return out;
}

}  // namespace mgaa
