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

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mgaa/decompose.hpp"
#include "mgaa/linalg.hpp"

namespace mgaa {

enum class SublayerKind { kMha, kFfn };

struct SublayerId {
  int layer = 0;
  SublayerKind kind = SublayerKind::kMha;

  auto operator<=>(const SublayerId&) const = default;
};

// "L<layer>.mha" / "L<layer>.ffn".
std::string to_string(const SublayerId& id);
SublayerId parse_sublayer_id(std::string_view text);

// Calibration statistics for one weight matrix, captured at its immediate
// input/output.
struct MatrixStats {
  Eigen::Index d_in = 0;
  Eigen::Index d_out = 0;
  long long token_count = 0;
  Matrix gram_y;    // sum of y y^T
  Vector mean_y;    // mean output
  Vector scale_abs; // mean |x| per input channel
  Vector scale_l2;  // ||x_i||_2 per input channel over all tokens
};

struct SublayerStats {
  SublayerId id;
  double importance = 0.0;
  long long importance_columns = 0;  // columns that entered the mean
  long long skipped_columns = 0;     // near-zero columns left out
  long long param_count = 0;
  std::map<std::string, MatrixStats> matrices;
  // Gram of the stacked [q; k] outputs, for joint Q/K PCA (MHA only).
  std::optional<Matrix> qk_gram;
};

// Streaming mean of column-wise cosine similarity between x and y. Columns
// where either norm is below 1e-12 are skipped and counted.
class CosineAccumulator {
 public:
  void add(const Matrix& x, const Matrix& y);
  double mean() const;
  long long used() const { return used_; }
  long long skipped() const { return skipped_; }

 private:
  double sum_ = 0.0;
  long long used_ = 0;
  long long skipped_ = 0;
};

double sublayer_importance(const Matrix& x, const Matrix& y);

enum class BudgetRounding {
  kPerMatrixFloor,  // sum of rank_for_ratio per matrix
  kGlobalCarry,     // carry rounding remainders across sublayers
};

struct AllocationConfig {
  double target_ratio = 0.5;
  double alpha = 0.35;
  double epsilon = 1e-3;
  double rank_floor_ratio = 0.1;
  std::set<SublayerId> skip_sublayers;
  double clamp_lo = 0.01;
  double clamp_hi = 0.95;
  BudgetRounding rounding = BudgetRounding::kGlobalCarry;

  void validate() const;
};

struct ClampEvent {
  SublayerId id;
  std::string what;  // "ratio_low", "ratio_high", "budget_floor"
  double before = 0.0;
  double after = 0.0;
};

struct RatioAllocation {
  std::map<SublayerId, double> ratios;           // skipped sublayers map to 0
  std::map<SublayerId, double> pre_clamp;        // after translation, before clamp
  std::map<SublayerId, double> z_scores;
  double weighted_mean_before_shift = 0.0;       // p_s
  double effective_target = 0.0;                 // p_t inflated for skipped mass
  double shift = 0.0;                            // effective_target - p_s
  double achieved_mean = 0.0;                    // param-weighted over every sublayer
  bool degenerate_variance = false;
  std::vector<ClampEvent> clamps;
};

RatioAllocation allocate_ratios(const std::map<SublayerId, double>& importances,
                                const std::map<SublayerId, long long>& param_counts,
                                const AllocationConfig& cfg);

struct MatrixDims {
  Eigen::Index d_in = 0;
  Eigen::Index d_out = 0;

  Eigen::Index max_rank() const { return std::min(d_in, d_out); }
  Eigen::Index rank_cost() const { return d_in + d_out; }
  long long params() const { return static_cast<long long>(d_in) * d_out; }
};

// Sum of rank_for_ratio over matrices that share one per-rank cost; throws
// kHeterogeneousRankCost otherwise.
long long sublayer_rank_budget(const std::vector<MatrixDims>& dims, double p);

// Parameters per budget unit: the gcd of the per-rank costs. A matrix with
// cost c consumes c / unit budget units per rank, so homogeneous sublayers
// count plain ranks.
long long budget_unit(const std::vector<MatrixDims>& dims);

Eigen::Index floor_rank(const MatrixDims& dims, double floor_ratio);

struct RankAllocation {
  std::map<std::string, Eigen::Index> ranks;
  std::map<std::string, Eigen::Index> level_ranks;  // before the greedy top-up
  double tau = 0.0;
  double objective = 0.0;  // sum of retained energies
  double min_energy = 0.0;
  double spread = 0.0;     // max - min retained energy
  long long used_budget = 0;
};

// Energy-balanced ranks under a shared budget (in budget units, see
// budget_unit). Bisects a common energy level tau, then spends leftover
// budget on the matrix with the lowest retained energy.
RankAllocation balanced_ranks(const std::map<std::string, EnergyProfile>& profiles,
                              const std::map<std::string, MatrixDims>& dims, long long budget,
                              double epsilon, double floor_ratio);

// Exhaustive reference for balanced_ranks over at most 1e6 tuples.
RankAllocation brute_force_ranks(const std::map<std::string, EnergyProfile>& profiles,
                                 const std::map<std::string, MatrixDims>& dims, long long budget,
                                 double epsilon, double floor_ratio);

// Input for the whole-model plan: importances plus per-matrix spectra.
struct SublayerAllocInput {
  SublayerId id;
  double importance = 0.0;
  std::map<std::string, MatrixDims> dims;
  std::map<std::string, EnergyProfile> profiles;  // may be empty for skipped sublayers

  long long param_count() const;
};

struct MatrixPlan {
  MatrixDims dims;
  Eigen::Index rank = 0;
  double retained_energy = 0.0;
};

struct SublayerPlan {
  SublayerId id;
  bool skipped = false;
  double importance = 0.0;
  double ratio = 0.0;
  double ratio_pre_clamp = 0.0;
  long long budget = 0;       // in budget units
  long long unit = 1;         // parameters per budget unit
  double tau = 0.0;
  double energy_spread = 0.0;
  bool spread_exceeds_epsilon = false;
  std::map<std::string, MatrixPlan> matrices;
};

struct AllocationPlan {
  double target_ratio = 0.0;
  double effective_target = 0.0;
  double weighted_mean_before_shift = 0.0;
  double epsilon = 0.0;
  long long scope_params = 0;    // every allocatable matrix, skipped ones included
  long long planned_params = 0;  // sum of rank * (d_in + d_out) plus skipped dense params
  double achieved_ratio = 0.0;
  bool degenerate_variance = false;
  std::vector<SublayerPlan> sublayers;
  std::vector<ClampEvent> clamps;

  const SublayerPlan* find(const SublayerId& id) const;
};

// Which allocation granularities are active. With both off the plan is the
// fixed-rank baseline: ratio p_t everywhere and rank_for_ratio per matrix.
struct PlanMode {
  bool adaptive_ratios = true;  // sublayer ratios from importance
  bool energy_balanced = true;  // per-matrix ranks from energy balancing
};

// Ratios from importances, per-sublayer budgets, then per-matrix ranks.
AllocationPlan build_plan(const std::vector<SublayerAllocInput>& inputs, const AllocationConfig& cfg,
                          PlanMode mode = {});

}  // namespace mgaa
