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

#include "mgaa/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <utility>

#include "mgaa/error.hpp"

namespace mgaa {

namespace {

const SublayerStats& stats_for(const std::map<SublayerId, SublayerStats>& stats, const SublayerId& id) {
  const auto it = stats.find(id);
  if (it == stats.end()) throw Error(Errc::kMissingStats, "no statistics for " + to_string(id));
  return it->second;
}

const MatrixStats& matrix_stats(const SublayerStats& s, const std::string& name) {
  const auto it = s.matrices.find(name);
  if (it == s.matrices.end()) throw Error(Errc::kMissingStats, "no statistics for " + to_string(s.id) + "." + name);
  return it->second;
}

EnergyProfile profile_for(Backend backend, const LayerWeights& layer, const SublayerStats& s,
                          const std::string& name) {
  if (name == "wqk") {
    if (!s.qk_gram) throw Error(Errc::kMissingStats, "no stacked Q/K Gram for " + to_string(s.id));
    return pca_profile(*s.qk_gram);
  }
  switch (backend) {
    case Backend::kSvd:
      return plain_svd_profile(dense_weight(layer.slot(name)));
    case Backend::kAsvd:
      return weighted_svd_profile(dense_weight(layer.slot(name)),
                                  ScaleVector::clamped(matrix_stats(s, name).scale_abs, ScaleKind::kMeanAbs));
    case Backend::kAwsvd:
      return weighted_svd_profile(dense_weight(layer.slot(name)),
                                  ScaleVector::clamped(matrix_stats(s, name).scale_l2, ScaleKind::kL2Norm));
    case Backend::kPca:
    case Backend::kJointPca:
      return pca_profile(matrix_stats(s, name).gram_y);
    case Backend::kAfm: {
      const MatrixStats& ms = matrix_stats(s, name);
      return afm_profile(ms.gram_y, ms.mean_y, ms.token_count);
    }
  }
  throw Error(Errc::kInvalidConfig, "unhandled backend");
}

double predicted_loss(Backend backend, const EnergyProfile& profile, const SublayerStats* s,
                      const std::string& name, Eigen::Index rank) {
  const double tail = profile.tail(rank);
  if (backend == Backend::kAfm && s != nullptr) {
    return static_cast<double>(matrix_stats(*s, name).token_count) * tail;
  }
  return tail;
}

long long count_tokens(const Dataset& d) {
  long long n = 0;
  for (const auto& s : d) n += static_cast<long long>(s.size());
  return n;
}

Matrix apply_factor(const FactorPair& f, const Matrix& x) {
  Matrix out = f.l * (f.r * x);
  if (f.bias_correction) out.colwise() += *f.bias_correction;
  return out;
}

AllocationPlan identity_plan(const ToyModel& model, const AllocationConfig& cfg) {
  AllocationPlan plan;
  plan.target_ratio = 0.0;
  plan.epsilon = cfg.epsilon;
  for (int l = 0; l < model.cfg.layers; ++l) {
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      SublayerPlan sp;
      sp.id = {l, kind};
      sp.skipped = true;
      plan.sublayers.push_back(sp);
      plan.scope_params += sublayer_param_count(model.cfg, kind);
    }
  }
  plan.planned_params = plan.scope_params;
  return plan;
}

}  // namespace

std::vector<SublayerAllocInput> allocation_inputs(const ToyModel& model,
                                                  const std::map<SublayerId, SublayerStats>& stats,
                                                  Backend backend, const std::set<SublayerId>& skip) {
  std::vector<SublayerAllocInput> out;
  for (int l = 0; l < model.cfg.layers; ++l) {
    const LayerWeights& layer = model.layers[static_cast<std::size_t>(l)];
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      SublayerAllocInput in;
      in.id = {l, kind};
      const SublayerStats& s = stats_for(stats, in.id);
      in.importance = s.importance;
      for (const std::string& name : allocation_matrices(backend, kind)) {
        in.dims[name] = allocation_dims(model.cfg, name);
        if (!skip.contains(in.id)) in.profiles[name] = profile_for(backend, layer, s, name);
      }
      out.push_back(std::move(in));
    }
  }
  return out;
}

AllocationPlan plan_from_stats(const ToyModel& model, const std::map<SublayerId, SublayerStats>& stats,
                               const AllocationConfig& cfg, Backend backend, PlanMode mode) {
  if (cfg.target_ratio == 0.0) return identity_plan(model, cfg);
  const auto inputs = in_stage("decompose", [&] { return allocation_inputs(model, stats, backend, cfg.skip_sublayers); });
  return in_stage("allocate", [&] { return build_plan(inputs, cfg, mode); });
}

std::map<SublayerId, std::map<std::string, SlotLoss>> measure_losses(const ToyModel& original,
                                                                     const ToyModel& compressed,
                                                                     const Dataset& calib) {
  std::map<SublayerId, std::map<std::string, SlotLoss>> out;
  const MatmulObserver observer = [&](const SublayerId& id, std::string_view name, const Matrix& input,
                                      const Matrix& output) {
    const WeightSlot& slot = compressed.layers[static_cast<std::size_t>(id.layer)].slot(name);
    const auto* f = std::get_if<FactorPair>(&slot);
    if (f == nullptr) return;
    const std::string key = f->method == Method::kJointQk ? "wqk" : std::string(name);
    SlotLoss& acc = out[id][key];
    acc.measured += (output - apply_factor(*f, input)).squaredNorm();
    acc.output_energy += output.squaredNorm();
  };
  for (const auto& seq : calib) forward(original, seq, nullptr, observer);
  return out;
}

CompressResult compress_with_stats(const ToyModel& model, const std::map<SublayerId, SublayerStats>& stats,
                                   const Dataset& calib, const AllocationConfig& cfg, Backend backend,
                                   PlanMode mode) {
  const auto t0 = std::chrono::steady_clock::now();
  in_stage("allocate", [&] { cfg.validate(); return 0; });

  CompressResult res;
  std::vector<SublayerAllocInput> inputs;
  if (cfg.target_ratio == 0.0) {
    res.plan = identity_plan(model, cfg);
  } else {
    inputs = in_stage("decompose", [&] { return allocation_inputs(model, stats, backend, cfg.skip_sublayers); });
    res.plan = in_stage("allocate", [&] { return build_plan(inputs, cfg, mode); });
  }
  res.model = in_stage("decompose", [&] { return apply_plan(model, res.plan, stats, backend); });
  const auto losses = in_stage("report", [&] { return measure_losses(model, res.model, calib); });

  CompressionReport& rep = res.report;
  rep.backend = backend;
  rep.config = cfg;
  rep.calibration_sequences = static_cast<long long>(calib.size());
  rep.calibration_tokens = count_tokens(calib);
  rep.effective_target = res.plan.effective_target;
  rep.weighted_mean_before_shift = res.plan.weighted_mean_before_shift;
  rep.scope_params = model.scope_params();
  rep.emitted_params = res.model.emitted_scope_params();
  rep.planned_ratio = res.plan.achieved_ratio;
  rep.achieved_ratio = res.model.achieved_ratio();
  rep.degenerate_variance = res.plan.degenerate_variance;
  rep.clamps = res.plan.clamps;

  std::map<SublayerId, const SublayerAllocInput*> by_id;
  for (const auto& in : inputs) by_id[in.id] = &in;

  for (const SublayerPlan& sp : res.plan.sublayers) {
    SublayerReport sr;
    sr.id = sp.id;
    sr.skipped = sp.skipped;
    sr.importance = sp.importance;
    if (const auto it = stats.find(sp.id); it != stats.end()) sr.importance = it->second.importance;
    sr.ratio = sp.ratio;
    sr.ratio_pre_clamp = sp.ratio_pre_clamp;
    sr.budget = sp.budget;
    sr.budget_unit = sp.unit;
    sr.tau = sp.tau;
    sr.energy_spread = sp.energy_spread;
    sr.spread_exceeds_epsilon = sp.spread_exceeds_epsilon;
    const SublayerStats* s = nullptr;
    if (const auto it = stats.find(sp.id); it != stats.end()) s = &it->second;
    for (const auto& [name, mp] : sp.matrices) {
      MatrixReport mr;
      mr.name = name;
      mr.dims = mp.dims;
      mr.rank = mp.rank;
      mr.retained_energy = mp.retained_energy;
      mr.predicted_in_output_space = backend_energy_kind(backend) == EnergyKind::kEigen;
      if (const auto it = by_id.find(sp.id); it != by_id.end()) {
        mr.predicted_loss = predicted_loss(backend, it->second->profiles.at(name), s, name, mp.rank);
      }
      if (const auto it = losses.find(sp.id); it != losses.end()) {
        if (const auto jt = it->second.find(name); jt != it->second.end()) {
          mr.measured_loss = jt->second.measured;
          mr.output_energy = jt->second.output_energy;
        }
      }
      if (mr.predicted_in_output_space) rep.total_predicted_loss += mr.predicted_loss;
      rep.total_measured_loss += mr.measured_loss;
      sr.matrices.push_back(std::move(mr));
    }
    rep.sublayers.push_back(std::move(sr));
  }
  rep.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

CompressResult mgaa_compress(const ToyModel& model, const Dataset& calib, const AllocationConfig& cfg,
                             Backend backend, PlanMode mode) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto stats = in_stage("calibrate", [&] { return collect_calibration(model, calib); });
  CompressResult res = compress_with_stats(model, stats, calib, cfg, backend, mode);
  res.report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvalMetrics eval_model(const ToyModel& reference, const ToyModel& candidate, const Dataset& dataset) {
  const auto& a = reference.cfg;
  const auto& b = candidate.cfg;
  if (a.vocab != b.vocab || a.hidden != b.hidden || a.heads != b.heads || a.ffn != b.ffn || a.layers != b.layers) {
    throw Error(Errc::kShapeMismatch, "reference and candidate configs differ");
  }
  double diff2 = 0.0;
  double ref2 = 0.0;
  double kl = 0.0;
  EvalMetrics m;
  for (const auto& seq : dataset) {
    const ForwardResult r = forward(reference, seq);
    const ForwardResult c = forward(candidate, seq);
    diff2 += (c.hidden - r.hidden).squaredNorm();
    ref2 += r.hidden.squaredNorm();
    for (Eigen::Index t = 0; t < r.logits.cols(); ++t) {
      const Vector lr = r.logits.col(t);
      const Vector lc = c.logits.col(t);
      const double mr = lr.maxCoeff();
      const double mc = lc.maxCoeff();
      const double zr = std::log((lr.array() - mr).exp().sum()) + mr;
      const double zc = std::log((lc.array() - mc).exp().sum()) + mc;
      double k = 0.0;
      for (Eigen::Index v = 0; v < lr.size(); ++v) {
        const double log_p = lr(v) - zr;
        const double log_q = lc(v) - zc;
        k += std::exp(log_p) * (log_p - log_q);
      }
      kl += std::max(k, 0.0);
    }
    m.tokens += static_cast<long long>(seq.size());
  }
  m.hidden_error = std::sqrt(diff2);
  m.hidden_rel_error = ref2 > 0.0 ? m.hidden_error / std::sqrt(ref2) : 0.0;
  m.token_kl = m.tokens > 0 ? kl / static_cast<double>(m.tokens) : 0.0;
  return m;
}

namespace {

VariantResult run_variant(const std::string& name, const ToyModel& model, const Dataset& calib,
                          const std::map<SublayerId, SublayerStats>& stats, const AllocationPlan& plan,
                          Backend backend) {
  VariantResult v;
  v.name = name;
  const ToyModel compressed = apply_plan(model, plan, stats, backend);
  v.achieved_ratio = compressed.achieved_ratio();
  v.metrics = eval_model(model, compressed, calib);
  for (const SublayerPlan& sp : plan.sublayers) {
    if (sp.skipped || sp.matrices.empty()) continue;
    double lo = 1.0;
    for (const auto& [n, mp] : sp.matrices) lo = std::min(lo, mp.retained_energy);
    v.min_energy[sp.id] = lo;
  }
  const auto losses = measure_losses(model, compressed, calib);
  double sd_sum = 0.0;
  int sd_count = 0;
  for (const auto& [id, mats] : losses) {
    if (id.kind != SublayerKind::kMha || mats.size() < 2) continue;
    std::vector<double> ratios;
    for (const auto& [n, l] : mats) ratios.push_back(l.output_energy > 0 ? l.measured / l.output_energy : 0.0);
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= static_cast<double>(ratios.size());
    double var = 0.0;
    for (double r : ratios) var += (r - mean) * (r - mean);
    sd_sum += std::sqrt(var / static_cast<double>(ratios.size()));
    ++sd_count;
  }
  v.mha_loss_ratio_sd = sd_count > 0 ? sd_sum / sd_count : 0.0;
  return v;
}

}  // namespace

ComparisonRecord compare_uniform(const ToyModel& model, const Dataset& calib, const AllocationConfig& cfg,
                                 Backend backend) {
  ComparisonRecord rec;
  rec.target_ratio = cfg.target_ratio;
  const auto stats = in_stage("calibrate", [&] { return collect_calibration(model, calib); });

  AllocationConfig same_budget = cfg;
  same_budget.rounding = BudgetRounding::kPerMatrixFloor;

  auto plan = [&](const AllocationConfig& c, PlanMode mode) { return plan_from_stats(model, stats, c, backend, mode); };
  rec.uniform = run_variant("uniform", model, calib, stats, plan(cfg, {false, false}), backend);
  rec.layer_adaptive = run_variant("layer_adaptive", model, calib, stats, plan(cfg, {true, false}), backend);
  rec.energy_balanced = run_variant("energy_balanced", model, calib, stats, plan(same_budget, {false, true}), backend);
  rec.mgaa = run_variant("mgaa", model, calib, stats, plan(cfg, {true, true}), backend);

  for (const auto& [id, e] : rec.uniform.min_energy) {
    const auto it = rec.energy_balanced.min_energy.find(id);
    if (it == rec.energy_balanced.min_energy.end() || it->second < e) rec.dominance_holds = false;
  }
  return rec;
}

}  // namespace mgaa
