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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgaa/allocate.hpp"
#include "mgaa/harness.hpp"

namespace mgaa {

struct MatrixReport {
  std::string name;
  MatrixDims dims;
  Eigen::Index rank = 0;
  double retained_energy = 0.0;
  // Output-space backends (pca, afm, joint_pca) predict the calibration loss
  // ||WX - (LRX + b)||_F^2 from the truncated spectrum. Weight-space backends
  // predict ||(W - LR) S||_F^2 instead, which is not comparable to
  // measured_loss.
  double predicted_loss = 0.0;
  bool predicted_in_output_space = true;
  double measured_loss = 0.0;  // on the calibration set, original-model inputs
  double output_energy = 0.0;  // ||WX||_F^2 on the same inputs
  double loss_ratio() const { return output_energy > 0.0 ? measured_loss / output_energy : 0.0; }
};

struct SublayerReport {
  SublayerId id;
  bool skipped = false;
  double importance = 0.0;
  double ratio = 0.0;
  double ratio_pre_clamp = 0.0;
  long long budget = 0;
  long long budget_unit = 1;
  double tau = 0.0;
  double energy_spread = 0.0;
  bool spread_exceeds_epsilon = false;
  std::vector<MatrixReport> matrices;
};

struct CompressionReport {
  Backend backend = Backend::kPca;
  AllocationConfig config;
  long long calibration_sequences = 0;
  long long calibration_tokens = 0;
  double effective_target = 0.0;
  double weighted_mean_before_shift = 0.0;
  long long scope_params = 0;
  long long emitted_params = 0;
  double planned_ratio = 0.0;
  double achieved_ratio = 0.0;  // recounted from the emitted model
  bool degenerate_variance = false;
  double total_predicted_loss = 0.0;  // output-space backends only
  double total_measured_loss = 0.0;
  std::vector<SublayerReport> sublayers;
  std::vector<ClampEvent> clamps;
  std::optional<double> wall_time_seconds;
};

// Per-matrix spectra for allocation. Weight-space backends need `model`.
// Skipped sublayers get dims only, no spectra.
std::vector<SublayerAllocInput> allocation_inputs(const ToyModel& model,
                                                  const std::map<SublayerId, SublayerStats>& stats,
                                                  Backend backend, const std::set<SublayerId>& skip = {});

AllocationPlan plan_from_stats(const ToyModel& model, const std::map<SublayerId, SublayerStats>& stats,
                               const AllocationConfig& cfg, Backend backend, PlanMode mode = {});

struct CompressResult {
  ToyModel model;
  AllocationPlan plan;
  CompressionReport report;
};

// Calibrate, allocate ratios and ranks, factorize and report. A target ratio
// of 0 returns the model unchanged.
CompressResult mgaa_compress(const ToyModel& model, const Dataset& calib, const AllocationConfig& cfg,
                             Backend backend, PlanMode mode = {});

// Same, from statistics already collected on `model`.
CompressResult compress_with_stats(const ToyModel& model, const std::map<SublayerId, SublayerStats>& stats,
                                   const Dataset& calib, const AllocationConfig& cfg, Backend backend,
                                   PlanMode mode = {});

// Squared output error of every factored slot of `compressed`, fed with the
// inputs `original` sees on `calib`. Joint Q/K slots are summed under "wqk".
struct SlotLoss {
  double measured = 0.0;
  double output_energy = 0.0;
};
std::map<SublayerId, std::map<std::string, SlotLoss>> measure_losses(const ToyModel& original,
                                                                     const ToyModel& compressed,
                                                                     const Dataset& calib);

struct EvalMetrics {
  double hidden_error = 0.0;      // ||H_cand - H_ref||_F over all tokens
  double hidden_rel_error = 0.0;  // divided by ||H_ref||_F
  // Mean per-token KL(p_ref || p_cand): the cross-entropy against the
  // reference distribution minus its entropy, so identical models give 0.
  double token_kl = 0.0;
  long long tokens = 0;
};

EvalMetrics eval_model(const ToyModel& reference, const ToyModel& candidate, const Dataset& dataset);

struct VariantResult {
  std::string name;
  double achieved_ratio = 0.0;
  EvalMetrics metrics;
  std::map<SublayerId, double> min_energy;  // per compressed sublayer
  // Mean over MHA sublayers of the standard deviation of the four per-matrix
  // loss ratios.
  double mha_loss_ratio_sd = 0.0;
};

struct ComparisonRecord {
  double target_ratio = 0.0;
  VariantResult uniform;         // fixed ratio, fixed rank
  VariantResult layer_adaptive;  // adaptive ratios, fixed rank within a sublayer
  VariantResult energy_balanced; // fixed ratio, balanced ranks at the same budgets
  VariantResult mgaa;            // both
  // min retained energy of energy_balanced >= uniform in every sublayer.
  bool dominance_holds = true;
};

ComparisonRecord compare_uniform(const ToyModel& model, const Dataset& calib, const AllocationConfig& cfg,
                                 Backend backend);

}  // namespace mgaa
