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

#include "mgaa/allocate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mgaa/error.hpp"

namespace mgaa {

std::string to_string(const SublayerId& id) {
  return "L" + std::to_string(id.layer) + (id.kind == SublayerKind::kMha ? ".mha" : ".ffn");
}

SublayerId parse_sublayer_id(std::string_view text) {
  const auto dot = text.find('.');
  if (text.size() < 4 || text[0] != 'L' || dot == std::string_view::npos || dot < 2) {
    throw Error(Errc::kInvalidConfig, "bad sublayer id '" + std::string(text) + "'");
  }
  SublayerId id;
  const std::string layer(text.substr(1, dot - 1));
  if (!std::all_of(layer.begin(), layer.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw Error(Errc::kInvalidConfig, "bad layer index in '" + std::string(text) + "'");
  }
  id.layer = std::stoi(layer);
  const std::string_view kind = text.substr(dot + 1);
  if (kind == "mha") {
    id.kind = SublayerKind::kMha;
  } else if (kind == "ffn") {
    id.kind = SublayerKind::kFfn;
  } else {
    throw Error(Errc::kInvalidConfig, "bad sublayer kind in '" + std::string(text) + "'");
  }
  return id;
}

void CosineAccumulator::add(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw Error(Errc::kDimensionMismatch, "cosine inputs differ in shape");
  }
  constexpr double kMinNorm = 1e-12;
  for (Eigen::Index m = 0; m < x.cols(); ++m) {
    // One loop for all three sums so y == x gives exactly 1.
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double a = x(i, m);
      const double b = y(i, m);
      xx += a * a;
      yy += b * b;
      xy += a * b;
    }
    if (std::sqrt(xx) < kMinNorm || std::sqrt(yy) < kMinNorm) {
      ++skipped_;
      continue;
    }
    sum_ += std::clamp(xy / std::sqrt(xx * yy), -1.0, 1.0);
    ++used_;
  }
}

double CosineAccumulator::mean() const {
  if (used_ + skipped_ == 0) throw Error(Errc::kEmptyBatch, "no columns");
  if (used_ == 0) {
    throw Error(Errc::kAllDegenerateColumns, std::to_string(skipped_) + " columns, all near zero");
  }
  return sum_ / static_cast<double>(used_);
}

double sublayer_importance(const Matrix& x, const Matrix& y) {
  CosineAccumulator acc;
  acc.add(x, y);
  return acc.mean();
}

void AllocationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::kInvalidConfig, msg); };
  // 0 is accepted here and means "leave the model dense" to the pipeline.
  if (!(target_ratio >= 0.0 && target_ratio < 1.0)) fail("target_ratio must be in [0, 1)");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(rank_floor_ratio >= 0.0 && rank_floor_ratio < 1.0)) fail("rank_floor_ratio must be in [0, 1)");
  if (!(clamp_lo >= 0.0 && clamp_hi < 1.0 && clamp_lo <= clamp_hi)) fail("clamp must satisfy 0 <= lo <= hi < 1");
  if (target_ratio > 0.0 && !(clamp_lo <= target_ratio && target_ratio <= clamp_hi)) fail("target_ratio outside clamp range");
}

RatioAllocation allocate_ratios(const std::map<SublayerId, double>& importances,
                                const std::map<SublayerId, long long>& param_counts,
                                const AllocationConfig& cfg) {
  cfg.validate();
  if (cfg.target_ratio == 0.0) throw Error(Errc::kRatioOutOfRange, "target_ratio 0 has nothing to allocate");
  std::vector<SublayerId> active;
  long long total_params = 0;
  long long active_params = 0;
  for (const auto& [id, imp] : importances) {
    const auto it = param_counts.find(id);
    if (it == param_counts.end() || it->second <= 0) {
      throw Error(Errc::kInvalidConfig, "no parameter count for " + to_string(id));
    }
    if (!std::isfinite(imp)) throw Error(Errc::kNonFinite, "importance of " + to_string(id));
    total_params += it->second;
    if (!cfg.skip_sublayers.contains(id)) {
      active.push_back(id);
      active_params += it->second;
    }
  }
  if (active.size() < 2) {
    throw Error(Errc::kTooFewSublayers,
                std::to_string(active.size()) + " sublayer(s) left after skipping");
  }

  RatioAllocation out;
  out.effective_target = cfg.target_ratio * static_cast<double>(total_params) / static_cast<double>(active_params);
  if (out.effective_target >= 1.0) {
    throw Error(Errc::kInvalidConfig, "skipped sublayers leave no room for target ratio " +
                                          std::to_string(cfg.target_ratio));
  }

  const double n = static_cast<double>(active.size());
  double mean = 0.0;
  for (const auto& id : active) mean += importances.at(id);
  mean /= n;
  double var = 0.0;
  for (const auto& id : active) {
    const double d = importances.at(id) - mean;
    var += d * d;
  }
  var /= n;
  const double var_floor = std::pow(1e-12 * std::max(1.0, std::abs(mean)), 2);
  out.degenerate_variance = var <= var_floor;

  if (cfg.alpha == 0.0 || out.degenerate_variance) {
    for (const auto& id : active) {
      out.z_scores[id] = 0.0;
      out.pre_clamp[id] = out.effective_target;
    }
    out.weighted_mean_before_shift = cfg.target_ratio;
    out.shift = out.effective_target - cfg.target_ratio;
  } else {
    const double sd = std::sqrt(var);
    std::map<SublayerId, double> p;
    double weighted = 0.0;
    for (const auto& id : active) {
      const double z = (importances.at(id) - mean) / sd;
      out.z_scores[id] = z;
      p[id] = cfg.alpha * z + cfg.target_ratio;
      weighted += p[id] * static_cast<double>(param_counts.at(id));
    }
    out.weighted_mean_before_shift = weighted / static_cast<double>(active_params);
    out.shift = out.effective_target - out.weighted_mean_before_shift;
    for (const auto& id : active) out.pre_clamp[id] = p[id] + out.shift;
  }

  double achieved = 0.0;
  for (const auto& [id, imp] : importances) {
    double r = 0.0;
    if (const auto it = out.pre_clamp.find(id); it != out.pre_clamp.end()) {
      r = it->second;
      if (r < cfg.clamp_lo) {
        out.clamps.push_back({id, "ratio_low", r, cfg.clamp_lo});
        r = cfg.clamp_lo;
      } else if (r > cfg.clamp_hi) {
        out.clamps.push_back({id, "ratio_high", r, cfg.clamp_hi});
        r = cfg.clamp_hi;
      }
    }
    out.ratios[id] = r;
    achieved += r * static_cast<double>(param_counts.at(id));
  }
  out.achieved_mean = achieved / static_cast<double>(total_params);
  return out;
}

long long sublayer_rank_budget(const std::vector<MatrixDims>& dims, double p) {
  if (dims.empty()) throw Error(Errc::kDimensionMismatch, "sublayer without matrices");
  long long budget = 0;
  for (const auto& d : dims) {
    if (d.rank_cost() != dims.front().rank_cost()) {
      throw Error(Errc::kHeterogeneousRankCost,
                  "per-rank costs " + std::to_string(d.rank_cost()) + " and " +
                      std::to_string(dims.front().rank_cost()));
    }
    budget += rank_for_ratio(d.d_in, d.d_out, p);
  }
  return budget;
}

long long budget_unit(const std::vector<MatrixDims>& dims) {
  long long g = 0;
  for (const auto& d : dims) g = std::gcd(g, static_cast<long long>(d.rank_cost()));
  return std::max<long long>(g, 1);
}

Eigen::Index floor_rank(const MatrixDims& dims, double floor_ratio) {
  const double raw = floor_ratio * static_cast<double>(dims.params()) / static_cast<double>(dims.rank_cost());
  const auto r = static_cast<Eigen::Index>(std::ceil(raw - 1e-9));
  return std::clamp<Eigen::Index>(r, 1, dims.max_rank());
}

namespace {

struct Entry {
  const std::string* name;
  const EnergyProfile* profile;
  Eigen::Index floor;
  Eigen::Index max;
  long long weight;  // budget units per rank
};

std::vector<Entry> make_entries(const std::map<std::string, EnergyProfile>& profiles,
                                const std::map<std::string, MatrixDims>& dims, double floor_ratio,
                                long long budget) {
  if (profiles.size() != dims.size() || profiles.empty()) {
    throw Error(Errc::kDimensionMismatch, "profiles and dims must name the same non-empty set");
  }
  std::vector<MatrixDims> all;
  for (const auto& [name, d] : dims) {
    if (!profiles.contains(name)) throw Error(Errc::kDimensionMismatch, "no profile for " + name);
    if (d.d_in < 1 || d.d_out < 1) throw Error(Errc::kDimensionMismatch, "empty matrix " + name);
    all.push_back(d);
  }
  const long long unit = budget_unit(all);
  std::vector<Entry> out;
  long long floor_units = 0;
  for (const auto& [name, d] : dims) {
    Entry e{&name, &profiles.at(name), floor_rank(d, floor_ratio), d.max_rank(), d.rank_cost() / unit};
    floor_units += e.weight * e.floor;
    out.push_back(e);
  }
  if (budget < floor_units) {
    throw Error(Errc::kInfeasibleBudget,
                "budget " + std::to_string(budget) + " below floor sum " + std::to_string(floor_units));
  }
  return out;
}

// Smallest rank whose retained energy reaches tau, clamped to [floor, max].
Eigen::Index rank_at_level(const Entry& e, double tau) {
  Eigen::Index r = e.max;
  for (Eigen::Index k = 1; k <= e.max; ++k) {
    if (e.profile->retained(k) >= tau) {
      r = k;
      break;
    }
  }
  return std::clamp(r, e.floor, e.max);
}

long long units_at_level(const std::vector<Entry>& entries, double tau) {
  long long used = 0;
  for (const auto& e : entries) used += e.weight * rank_at_level(e, tau);
  return used;
}

void summarize(const std::vector<Entry>& entries, RankAllocation& out) {
  out.objective = 0.0;
  out.used_budget = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& e : entries) {
    const Eigen::Index r = out.ranks.at(*e.name);
    const double c = e.profile->retained(r);
    out.objective += c;
    out.used_budget += e.weight * r;
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  out.min_energy = lo;
  out.spread = hi - lo;
}

}  // namespace

RankAllocation balanced_ranks(const std::map<std::string, EnergyProfile>& profiles,
                              const std::map<std::string, MatrixDims>& dims, long long budget,
                              double epsilon, double floor_ratio) {
  (void)epsilon;  // reporting threshold only; see SublayerPlan::spread_exceeds_epsilon
  const std::vector<Entry> entries = make_entries(profiles, dims, floor_ratio, budget);

  double tau = 1.0;
  if (units_at_level(entries, 1.0) > budget) {
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 64 && hi - lo > 1e-9; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (units_at_level(entries, mid) <= budget) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    // The feasible set is [0, tau_max] with tau_max one of the retained-energy
    // values; snap to it so ties at the boundary are resolved exactly.
    std::vector<double> levels;
    for (const auto& e : entries) {
      for (Eigen::Index k = 1; k <= e.max; ++k) {
        const double c = e.profile->retained(k);
        if (c > lo && c <= hi) levels.push_back(c);
      }
    }
    std::sort(levels.begin(), levels.end());
    for (double c : levels) {
      if (units_at_level(entries, c) <= budget) lo = c;
    }
    tau = lo;
  }

  RankAllocation out;
  out.tau = tau;
  long long used = 0;
  for (const auto& e : entries) {
    const Eigen::Index r = rank_at_level(e, tau);
    out.ranks[*e.name] = r;
    out.level_ranks[*e.name] = r;
    used += e.weight * r;
  }

  // Greedy top-up: lowest retained energy first, ties to the smallest name.
  for (;;) {
    const long long left = budget - used;
    const Entry* pick = nullptr;
    double pick_c = 0.0;
    for (const auto& e : entries) {
      const Eigen::Index r = out.ranks[*e.name];
      if (r >= e.max || e.weight > left) continue;
      const double c = e.profile->retained(r);
      if (pick == nullptr || c < pick_c) {
        pick = &e;
        pick_c = c;
      }
    }
    if (pick == nullptr) break;
    ++out.ranks[*pick->name];
    used += pick->weight;
  }

  summarize(entries, out);
  return out;
}

RankAllocation brute_force_ranks(const std::map<std::string, EnergyProfile>& profiles,
                                 const std::map<std::string, MatrixDims>& dims, long long budget,
                                 double epsilon, double floor_ratio) {
  const std::vector<Entry> entries = make_entries(profiles, dims, floor_ratio, budget);
  double space = 1.0;
  for (const auto& e : entries) space *= static_cast<double>(e.max);
  if (space > 1e6) {
    throw Error(Errc::kSearchSpaceTooLarge, std::to_string(space) + " rank tuples");
  }

  const std::size_t n = entries.size();
  std::vector<std::vector<Eigen::Index>> feasible;
  std::vector<Eigen::Index> cur(n);
  for (std::size_t i = 0; i < n; ++i) cur[i] = entries[i].floor;
  // Odometer over [floor, max] per entry.
  auto advance = [&] {
    for (std::size_t i = n; i-- > 0;) {
      if (cur[i] < entries[i].max) {
        ++cur[i];
        return true;
      }
      cur[i] = entries[i].floor;
    }
    return false;
  };
  do {
    long long used = 0;
    for (std::size_t i = 0; i < n; ++i) used += entries[i].weight * cur[i];
    if (used <= budget) feasible.push_back(cur);
  } while (advance());

  auto min_energy = [&](const std::vector<Eigen::Index>& t) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::min(m, entries[i].profile->retained(t[i]));
    return m;
  };
  auto objective = [&](const std::vector<Eigen::Index>& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += entries[i].profile->retained(t[i]);
    return s;
  };

  double best_min = -std::numeric_limits<double>::infinity();
  for (const auto& t : feasible) best_min = std::max(best_min, min_energy(t));

  const std::vector<Eigen::Index>* best = nullptr;
  double best_obj = 0.0;
  for (const auto& t : feasible) {
    if (min_energy(t) < best_min - epsilon) continue;
    const double obj = objective(t);
    bool take = best == nullptr || obj > best_obj + 1e-12;
    if (!take && obj >= best_obj - 1e-12) {
      const auto max_t = *std::max_element(t.begin(), t.end());
      const auto max_b = *std::max_element(best->begin(), best->end());
      take = max_t < max_b || (max_t == max_b && t < *best);
    }
    if (take) {
      best = &t;
      best_obj = obj;
    }
  }

  RankAllocation out;
  for (std::size_t i = 0; i < n; ++i) {
    out.ranks[*entries[i].name] = (*best)[i];
    out.level_ranks[*entries[i].name] = (*best)[i];
  }
  out.tau = best_min;
  summarize(entries, out);
  return out;
}

long long SublayerAllocInput::param_count() const {
  long long p = 0;
  for (const auto& [name, d] : dims) p += d.params();
  return p;
}

const SublayerPlan* AllocationPlan::find(const SublayerId& id) const {
  for (const auto& s : sublayers) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

AllocationPlan build_plan(const std::vector<SublayerAllocInput>& inputs, const AllocationConfig& cfg,
                          PlanMode mode) {
  cfg.validate();
  std::map<SublayerId, double> importances;
  std::map<SublayerId, long long> params;
  for (const auto& in : inputs) {
    if (importances.contains(in.id)) throw Error(Errc::kInvalidConfig, "duplicate " + to_string(in.id));
    importances[in.id] = in.importance;
    params[in.id] = in.param_count();
  }

  AllocationConfig ratio_cfg = cfg;
  if (!mode.adaptive_ratios) ratio_cfg.alpha = 0.0;
  const RatioAllocation ra = allocate_ratios(importances, params, ratio_cfg);

  AllocationPlan plan;
  plan.target_ratio = cfg.target_ratio;
  plan.effective_target = ra.effective_target;
  plan.weighted_mean_before_shift = ra.weighted_mean_before_shift;
  plan.epsilon = cfg.epsilon;
  plan.degenerate_variance = ra.degenerate_variance;
  plan.clamps = ra.clamps;

  std::vector<SublayerAllocInput> ordered = inputs;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  double ideal_cum = 0.0;
  long long allocated_cum = 0;
  for (const auto& in : ordered) {
    SublayerPlan sp;
    sp.id = in.id;
    sp.importance = in.importance;
    sp.ratio = ra.ratios.at(in.id);
    plan.scope_params += in.param_count();
    if (cfg.skip_sublayers.contains(in.id)) {
      sp.skipped = true;
      plan.planned_params += in.param_count();
      plan.sublayers.push_back(std::move(sp));
      continue;
    }
    sp.ratio_pre_clamp = ra.pre_clamp.at(in.id);

    std::vector<MatrixDims> dims;
    for (const auto& [name, d] : in.dims) dims.push_back(d);
    sp.unit = budget_unit(dims);

    long long floor_units = 0;
    long long max_units = 0;
    long long per_matrix = 0;
    for (const auto& [name, d] : in.dims) {
      const long long w = d.rank_cost() / sp.unit;
      floor_units += w * floor_rank(d, cfg.rank_floor_ratio);
      max_units += w * d.max_rank();
      per_matrix += w * rank_for_ratio(d.d_in, d.d_out, sp.ratio);
    }

    if (!mode.energy_balanced) {
      // Fixed-rank baseline: rank_for_ratio per matrix, no floor, no rebalancing.
      sp.budget = per_matrix;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const auto& [name, d] : in.dims) {
        MatrixPlan mp{d, rank_for_ratio(d.d_in, d.d_out, sp.ratio), 0.0};
        if (const auto it = in.profiles.find(name); it != in.profiles.end()) {
          mp.retained_energy = it->second.retained(mp.rank);
        }
        lo = std::min(lo, mp.retained_energy);
        hi = std::max(hi, mp.retained_energy);
        sp.matrices[name] = mp;
      }
      sp.tau = lo;
      sp.energy_spread = hi - lo;
    } else {
      long long budget = per_matrix;
      if (cfg.rounding == BudgetRounding::kGlobalCarry) {
        ideal_cum += static_cast<double>(in.param_count()) * (1.0 - sp.ratio);
        budget = std::llround((ideal_cum - static_cast<double>(allocated_cum)) / static_cast<double>(sp.unit));
      }
      if (budget < floor_units) {
        plan.clamps.push_back({in.id, "budget_floor", static_cast<double>(budget), static_cast<double>(floor_units)});
        budget = floor_units;
      }
      budget = std::min(budget, max_units);
      sp.budget = budget;
      const RankAllocation ranks = balanced_ranks(in.profiles, in.dims, budget, cfg.epsilon, cfg.rank_floor_ratio);
      sp.tau = ranks.tau;
      sp.energy_spread = ranks.spread;
      for (const auto& [name, d] : in.dims) {
        const Eigen::Index r = ranks.ranks.at(name);
        sp.matrices[name] = MatrixPlan{d, r, in.profiles.at(name).retained(r)};
      }
    }
    sp.spread_exceeds_epsilon = sp.energy_spread > cfg.epsilon;
    long long used_params = 0;
    for (const auto& [name, mp] : sp.matrices) used_params += mp.rank * mp.dims.rank_cost();
    allocated_cum += used_params;
    plan.planned_params += used_params;
    plan.sublayers.push_back(std::move(sp));
  }
  plan.achieved_ratio = 1.0 - static_cast<double>(plan.planned_params) / static_cast<double>(plan.scope_params);
  return plan;
}

}  // namespace mgaa
