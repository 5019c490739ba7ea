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

#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "mgaa/linalg.hpp"

namespace mgaa {

enum class Method { kSvd, kAsvd, kAwsvd, kPca, kAfm, kJointQk };

std::string_view method_name(Method m);

// Low-rank replacement for a d_out x d_in weight: the slot computes
// l * (r * x) + bias_correction.
struct FactorPair {
  Matrix l;      // d_out x rank
  Matrix r;      // rank x d_in
  std::optional<Vector> bias_correction;
  Method method = Method::kSvd;

  Eigen::Index rank() const { return l.cols(); }
  Eigen::Index d_out() const { return l.rows(); }
  Eigen::Index d_in() const { return r.cols(); }
  // Number of stored values, bias included.
  Eigen::Index param_count() const;
  // True when rank * (d_in + d_out) < d_in * d_out.
  bool is_compressive() const;
  Matrix dense() const { return l * r; }
};

enum class EnergyKind { kEigen, kSingularSquared };

struct EnergyProfile {
  std::vector<double> energies;    // descending, >= 0
  std::vector<double> cumulative;  // cumulative[i] = sum(energies[0..i]) / total
  EnergyKind kind = EnergyKind::kEigen;

  // Fraction of energy kept at `rank` (0 -> 0, rank >= size -> 1).
  double retained(Eigen::Index rank) const;
  double total() const;
  // Sum of energies past `rank`.
  double tail(Eigen::Index rank) const;
};

enum class ScaleKind { kMeanAbs, kL2Norm };

inline constexpr double kScaleFloor = 1e-8;

// Per-input-channel weights for the activation-aware SVD backends. Entries are
// clamped to kScaleFloor so diag(s)^-1 stays finite for dead channels.
struct ScaleVector {
  Vector scales;
  ScaleKind kind = ScaleKind::kMeanAbs;

  static ScaleVector clamped(Vector raw, ScaleKind kind);
  // mean |x| per channel from a running sum of |x| over `tokens` columns.
  static ScaleVector mean_abs(const Vector& abs_sum, double tokens);
  // ||x_i||_2 per channel from a running sum of x^2.
  static ScaleVector l2_norm(const Vector& sq_sum);
};

// r = floor(d_in * d_out * (1 - p) / (d_in + d_out)), clamped to
// [1, min(d_in, d_out)].
Eigen::Index rank_for_ratio(Eigen::Index d_in, Eigen::Index d_out, double p);

// Normalized cumulative energy. Negative inputs are rejected unless they are
// roundoff (|e| <= 1e-10 * max), which is clamped to zero.
EnergyProfile energy_profile(std::span<const double> energies_raw, EnergyKind kind);
EnergyProfile energy_profile(const Vector& energies_raw, EnergyKind kind);

struct PcaResult {
  FactorPair factors;
  EnergyProfile profile;
  double predicted_loss = 0.0;  // sum of truncated eigenvalues
};

struct SvdDecomposition {
  FactorPair factors;
  EnergyProfile profile;  // squared singular values
};

// Output-space PCA: L = U_r, R = U_r^T W from the EVD of the output Gram.
PcaResult pca_decompose(const Matrix& w, const Matrix& gram_y, Eigen::Index rank);

// Truncated SVD of W diag(s); L = U_r Sigma_r, R = V_r^T diag(s)^-1.
SvdDecomposition weighted_svd_decompose(const Matrix& w, const ScaleVector& s, Eigen::Index rank);

// Truncated SVD of W; L = U_r Sigma_r, R = V_r^T.
SvdDecomposition plain_svd_decompose(const Matrix& w, Eigen::Index rank);

// PCA on the output covariance gram_y / n - mean mean^T. The bias correction
// keeps the mean of the outputs: b = mean - U_r U_r^T mean. It is left empty
// when mean_y is exactly zero.
struct AfmResult {
  FactorPair factors;
  EnergyProfile profile;
  double predicted_loss = 0.0;  // n * sum of truncated covariance eigenvalues
};
AfmResult afm_decompose(const Matrix& w, const Matrix& gram_y, const Vector& mean_y,
                        long long token_count, Eigen::Index rank);

// Joint factorization of [W_q; W_k]. With a stacked output Gram (2d x 2d) the
// factorization is PCA on the concatenated outputs, otherwise plain SVD. Both
// returned pairs share the same R.
struct JointQkResult {
  FactorPair q;
  FactorPair k;
  EnergyProfile profile;
  double predicted_loss = 0.0;  // truncated tail of the stacked spectrum
};
JointQkResult joint_qk_decompose(const Matrix& wq, const Matrix& wk,
                                 const std::optional<Matrix>& stacked_gram, Eigen::Index rank);

// Spectra without factorization, used for allocation.
EnergyProfile pca_profile(const Matrix& gram_y);
EnergyProfile afm_profile(const Matrix& gram_y, const Vector& mean_y, long long token_count);
EnergyProfile weighted_svd_profile(const Matrix& w, const ScaleVector& s);
EnergyProfile plain_svd_profile(const Matrix& w);

// Output covariance gram / n - mean mean^T, symmetrized.
Matrix output_covariance(const Matrix& gram_y, const Vector& mean_y, long long token_count);

}  // namespace mgaa
