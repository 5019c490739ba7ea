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

#include "mgaa/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mgaa/error.hpp"

namespace mgaa {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kSvd: return "svd";
    case Method::kAsvd: return "asvd";
    case Method::kAwsvd: return "awsvd";
    case Method::kPca: return "pca";
    case Method::kAfm: return "afm";
    case Method::kJointQk: return "joint_qk";
  }
  return "unknown";
}

Eigen::Index FactorPair::param_count() const {
  Eigen::Index n = l.size() + r.size();
  if (bias_correction) n += bias_correction->size();
  return n;
}

bool FactorPair::is_compressive() const { return rank() * (d_in() + d_out()) < d_in() * d_out(); }

double EnergyProfile::retained(Eigen::Index rank) const {
  if (rank <= 0) return 0.0;
  if (static_cast<std::size_t>(rank) >= cumulative.size()) return 1.0;
  return cumulative[static_cast<std::size_t>(rank) - 1];
}

double EnergyProfile::total() const {
  double t = 0.0;
  for (double e : energies) t += e;
  return t;
}

double EnergyProfile::tail(Eigen::Index rank) const {
  double t = 0.0;
  for (std::size_t i = static_cast<std::size_t>(std::max<Eigen::Index>(rank, 0)); i < energies.size(); ++i) {
    t += energies[i];
  }
  return t;
}

ScaleVector ScaleVector::clamped(Vector raw, ScaleKind kind) {
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw(i))) throw Error(Errc::kNonFinite, "scale vector entry " + std::to_string(i));
    raw(i) = std::max(raw(i), kScaleFloor);
  }
  return ScaleVector{std::move(raw), kind};
}

ScaleVector ScaleVector::mean_abs(const Vector& abs_sum, double tokens) {
  if (tokens <= 0) throw Error(Errc::kInsufficientTokens, "mean |x| needs at least one token");
  return clamped(abs_sum / tokens, ScaleKind::kMeanAbs);
}

ScaleVector ScaleVector::l2_norm(const Vector& sq_sum) {
  return clamped(sq_sum.cwiseMax(0.0).cwiseSqrt(), ScaleKind::kL2Norm);
}

Eigen::Index rank_for_ratio(Eigen::Index d_in, Eigen::Index d_out, double p) {
  if (d_in < 1 || d_out < 1) {
    throw Error(Errc::kDimensionMismatch,
                "rank_for_ratio on " + std::to_string(d_out) + "x" + std::to_string(d_in));
  }
  if (!(p >= 0.0 && p < 1.0)) throw Error(Errc::kRatioOutOfRange, "ratio " + std::to_string(p));
  const double raw = static_cast<double>(d_in) * static_cast<double>(d_out) * (1.0 - p) /
                     static_cast<double>(d_in + d_out);
  // The epsilon absorbs representation error in (1 - p) so exact products such
  // as 4096 * 4096 * 0.5 / 8192 do not floor to one below.
  const auto r = static_cast<Eigen::Index>(std::floor(raw + 1e-9));
  return std::clamp<Eigen::Index>(r, 1, std::min(d_in, d_out));
}

EnergyProfile energy_profile(std::span<const double> energies_raw, EnergyKind kind) {
  if (energies_raw.empty()) throw Error(Errc::kAllZeroSpectrum, "empty spectrum");
  double max_e = 0.0;
  for (double e : energies_raw) {
    if (!std::isfinite(e)) throw Error(Errc::kNonFinite, "spectrum entry");
    max_e = std::max(max_e, e);
  }
  EnergyProfile out;
  out.kind = kind;
  out.energies.reserve(energies_raw.size());
  for (double e : energies_raw) {
    if (e < 0.0) {
      if (max_e > 0.0 && -e <= kPsdClampTolerance * max_e) {
        e = 0.0;
      } else {
        throw Error(Errc::kIndefiniteBeyondTolerance, "negative energy " + std::to_string(e));
      }
    }
    if (!out.energies.empty() && e > out.energies.back()) {
      throw Error(Errc::kInvalidConfig, "energies must be non-increasing");
    }
    out.energies.push_back(e);
  }
  const double total = out.total();
  if (!(total > 0.0)) throw Error(Errc::kAllZeroSpectrum, "spectrum sums to zero");
  out.cumulative.reserve(out.energies.size());
  double running = 0.0;
  for (double e : out.energies) {
    running += e;
    out.cumulative.push_back(running / total);
  }
  return out;
}

EnergyProfile energy_profile(const Vector& energies_raw, EnergyKind kind) {
  return energy_profile(std::span<const double>(energies_raw.data(), static_cast<std::size_t>(energies_raw.size())),
                        kind);
}

namespace {

void check_rank(Eigen::Index rank, Eigen::Index d_out, Eigen::Index d_in) {
  const Eigen::Index r_max = std::min(d_out, d_in);
  if (rank < 1 || rank > r_max) {
    throw Error(Errc::kRankTooLarge,
                "rank " + std::to_string(rank) + " outside [1, " + std::to_string(r_max) + "]");
  }
}

void check_gram(const Matrix& gram, Eigen::Index d_out) {
  if (gram.rows() != d_out || gram.cols() != d_out) {
    throw Error(Errc::kDimensionMismatch, "output Gram is " + std::to_string(gram.rows()) + "x" +
                                              std::to_string(gram.cols()) + ", expected " +
                                              std::to_string(d_out) + "x" + std::to_string(d_out));
  }
}

// Projection factors from a descending EVD: L = U_r, R = U_r^T W.
FactorPair project(const Matrix& w, const EvdResult& evd, Eigen::Index rank, Method method) {
  FactorPair f;
  f.l = evd.eigvecs.leftCols(rank);
  f.r = f.l.transpose() * w;
  f.method = method;
  return f;
}

double eig_tail(const Vector& eigvals, Eigen::Index rank) {
  double t = 0.0;
  for (Eigen::Index i = rank; i < eigvals.size(); ++i) t += eigvals(i);
  return t;
}

Vector squared(const Vector& v) { return v.array().square().matrix(); }

SvdDecomposition truncate_svd(const SvdResult& s, Eigen::Index rank, const Vector* inv_scale,
                              Method method) {
  SvdDecomposition out;
  out.factors.l = s.u.leftCols(rank) * s.singvals.head(rank).asDiagonal();
  out.factors.r = s.vt.topRows(rank);
  if (inv_scale != nullptr) out.factors.r = out.factors.r * inv_scale->asDiagonal();
  out.factors.method = method;
  out.profile = energy_profile(squared(s.singvals), EnergyKind::kSingularSquared);
  return out;
}

}  // namespace

PcaResult pca_decompose(const Matrix& w, const Matrix& gram_y, Eigen::Index rank) {
  check_gram(gram_y, w.rows());
  check_rank(rank, w.rows(), w.cols());
  const EvdResult evd = sym_evd(gram_y);
  PcaResult out;
  out.profile = energy_profile(evd.eigvals, EnergyKind::kEigen);
  out.factors = project(w, evd, rank, Method::kPca);
  out.predicted_loss = eig_tail(evd.eigvals, rank);
  return out;
}

SvdDecomposition weighted_svd_decompose(const Matrix& w, const ScaleVector& s, Eigen::Index rank) {
  if (s.scales.size() != w.cols()) {
    throw Error(Errc::kDimensionMismatch, "scale length " + std::to_string(s.scales.size()) +
                                              " vs d_in " + std::to_string(w.cols()));
  }
  check_rank(rank, w.rows(), w.cols());
  const SvdResult res = svd(w * s.scales.asDiagonal());
  const Vector inv = s.scales.cwiseInverse();
  return truncate_svd(res, rank, &inv, s.kind == ScaleKind::kMeanAbs ? Method::kAsvd : Method::kAwsvd);
}

SvdDecomposition plain_svd_decompose(const Matrix& w, Eigen::Index rank) {
  check_rank(rank, w.rows(), w.cols());
  return truncate_svd(svd(w), rank, nullptr, Method::kSvd);
}

Matrix output_covariance(const Matrix& gram_y, const Vector& mean_y, long long token_count) {
  if (token_count < 2) {
    throw Error(Errc::kInsufficientTokens,
                "covariance needs >= 2 tokens, got " + std::to_string(token_count));
  }
  if (mean_y.size() != gram_y.rows()) {
    throw Error(Errc::kDimensionMismatch, "mean length " + std::to_string(mean_y.size()) +
                                              " vs Gram " + std::to_string(gram_y.rows()));
  }
  Matrix c = gram_y / static_cast<double>(token_count) - mean_y * mean_y.transpose();
  return 0.5 * (c + c.transpose());
}

AfmResult afm_decompose(const Matrix& w, const Matrix& gram_y, const Vector& mean_y,
                        long long token_count, Eigen::Index rank) {
  check_gram(gram_y, w.rows());
  check_rank(rank, w.rows(), w.cols());
  const EvdResult evd = sym_evd(output_covariance(gram_y, mean_y, token_count));
  AfmResult out;
  out.profile = energy_profile(evd.eigvals, EnergyKind::kEigen);
  out.factors = project(w, evd, rank, Method::kAfm);
  if (!mean_y.isZero(0.0)) {
    out.factors.bias_correction = mean_y - out.factors.l * (out.factors.l.transpose() * mean_y);
  }
  out.predicted_loss = static_cast<double>(token_count) * eig_tail(evd.eigvals, rank);
  return out;
}

JointQkResult joint_qk_decompose(const Matrix& wq, const Matrix& wk,
                                 const std::optional<Matrix>& stacked_gram, Eigen::Index rank) {
  if (wq.rows() != wk.rows() || wq.cols() != wk.cols()) {
    throw Error(Errc::kShapeMismatch, "W_q is " + std::to_string(wq.rows()) + "x" +
                                          std::to_string(wq.cols()) + ", W_k is " +
                                          std::to_string(wk.rows()) + "x" + std::to_string(wk.cols()));
  }
  const Eigen::Index d = wq.rows();
  Matrix stacked(2 * d, wq.cols());
  stacked << wq, wk;

  JointQkResult out;
  FactorPair joint;
  if (stacked_gram) {
    PcaResult pca = pca_decompose(stacked, *stacked_gram, rank);
    joint = std::move(pca.factors);
    out.profile = std::move(pca.profile);
    out.predicted_loss = pca.predicted_loss;
  } else {
    SvdDecomposition s = plain_svd_decompose(stacked, rank);
    joint = std::move(s.factors);
    out.profile = std::move(s.profile);
    out.predicted_loss = out.profile.tail(rank);
  }
  out.q.l = joint.l.topRows(d);
  out.k.l = joint.l.bottomRows(d);
  out.q.r = joint.r;
  out.k.r = joint.r;
  out.q.method = out.k.method = Method::kJointQk;
  return out;
}

EnergyProfile pca_profile(const Matrix& gram_y) {
  return energy_profile(sym_evd(gram_y).eigvals, EnergyKind::kEigen);
}

EnergyProfile afm_profile(const Matrix& gram_y, const Vector& mean_y, long long token_count) {
  return energy_profile(sym_evd(output_covariance(gram_y, mean_y, token_count)).eigvals,
                        EnergyKind::kEigen);
}

EnergyProfile weighted_svd_profile(const Matrix& w, const ScaleVector& s) {
  if (s.scales.size() != w.cols()) {
    throw Error(Errc::kDimensionMismatch, "scale length " + std::to_string(s.scales.size()) +
                                              " vs d_in " + std::to_string(w.cols()));
  }
  return energy_profile(squared(svd(w * s.scales.asDiagonal()).singvals), EnergyKind::kSingularSquared);
}

EnergyProfile plain_svd_profile(const Matrix& w) {
  return energy_profile(squared(svd(w).singvals), EnergyKind::kSingularSquared);
}

}  // namespace mgaa
