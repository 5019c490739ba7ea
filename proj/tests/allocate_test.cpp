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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

namespace mgaa {
namespace {

using testing::expect_errc;
using testing::random_spectrum;

SublayerId mha(int l) { return {l, SublayerKind::kMha}; }
SublayerId ffn(int l) { return {l, SublayerKind::kFfn}; }

EnergyProfile profile(const std::vector<double>& e) { return energy_profile(e, EnergyKind::kEigen); }

// A profile whose cumulative vector equals `c` exactly at each rank.
EnergyProfile from_cumulative(const std::vector<double>& c) {
  EnergyProfile p;
  double prev = 0.0;
  for (double v : c) {
    p.energies.push_back(v - prev);
    prev = v;
  }
  p.cumulative = c;
  return p;
}

TEST(SublayerId, RoundTrip) {
  EXPECT_EQ(to_string(mha(3)), "L3.mha");
  EXPECT_EQ(parse_sublayer_id("L12.ffn"), ffn(12));
  expect_errc(Errc::kInvalidConfig, [] { parse_sublayer_id("L.mha"); });
  expect_errc(Errc::kInvalidConfig, [] { parse_sublayer_id("L1.attn"); });
  expect_errc(Errc::kInvalidConfig, [] { parse_sublayer_id("X1.mha"); });
}

TEST(Importance, Examples) {
  const Matrix x = testing::random_matrix(4, 10, 1);
  EXPECT_EQ(sublayer_importance(x, x), 1.0);
  EXPECT_NEAR(sublayer_importance(x, -x), -1.0, 1e-15);
  Matrix e1 = Matrix::Zero(2, 3);
  e1.row(0).setOnes();
  Matrix e2 = Matrix::Zero(2, 3);
  e2.row(1).setOnes();
  EXPECT_EQ(sublayer_importance(e1, e2), 0.0);
}

TEST(Importance, SkipsDegenerateColumns) {
  Matrix x(2, 3);
  x << 1, 0, 1,  //
      0, 0, 1;
  Matrix y = x;
  CosineAccumulator acc;
  acc.add(x, y);
  EXPECT_EQ(acc.used(), 2);
  EXPECT_EQ(acc.skipped(), 1);
  EXPECT_EQ(acc.mean(), 1.0);
}

TEST(Importance, Errors) {
  expect_errc(Errc::kEmptyBatch, [] { CosineAccumulator().mean(); });
  expect_errc(Errc::kAllDegenerateColumns, [] { sublayer_importance(Matrix::Zero(2, 2), Matrix::Ones(2, 2)); });
  expect_errc(Errc::kDimensionMismatch, [] { sublayer_importance(Matrix::Ones(2, 2), Matrix::Ones(3, 2)); });
}

TEST(AllocateRatios, PaperBetaExample) {
  // Two sublayers: z = +1 and -1, so alpha 0.1 gives 0.6 / 0.4 pre-adjustment.
  AllocationConfig cfg;
  cfg.alpha = 0.1;
  cfg.target_ratio = 0.5;
  const std::map<SublayerId, double> imp = {{mha(0), 0.9}, {ffn(0), 0.3}};
  const std::map<SublayerId, long long> params = {{mha(0), 1}, {ffn(0), 2}};
  const RatioAllocation r = allocate_ratios(imp, params, cfg);
  EXPECT_NEAR(r.weighted_mean_before_shift, (0.6 + 0.4 * 2) / 3, 1e-12);
  EXPECT_NEAR(r.weighted_mean_before_shift, 0.4667, 1e-4);
  EXPECT_NEAR(r.shift, 0.5 - 1.4 / 3, 1e-12);
  EXPECT_NEAR(r.ratios.at(mha(0)), 0.6 + r.shift, 1e-12);
  EXPECT_NEAR(r.ratios.at(ffn(0)), 0.4 + r.shift, 1e-12);
  EXPECT_NEAR(r.achieved_mean, 0.5, 1e-9);
  EXPECT_TRUE(r.clamps.empty());
}

TEST(AllocateRatios, AlphaZeroIsUniform) {
  AllocationConfig cfg;
  cfg.alpha = 0.0;
  cfg.target_ratio = 0.37;
  const std::map<SublayerId, double> imp = {{mha(0), 0.1}, {ffn(0), 0.5}, {mha(1), 0.9}};
  const std::map<SublayerId, long long> params = {{mha(0), 10}, {ffn(0), 20}, {mha(1), 10}};
  const RatioAllocation r = allocate_ratios(imp, params, cfg);
  for (const auto& [id, p] : r.ratios) EXPECT_EQ(p, 0.37);
}

TEST(AllocateRatios, ThreeSublayerHandExample) {
  AllocationConfig cfg;
  const std::map<SublayerId, double> imp = {{mha(0), -0.2}, {ffn(0), 0.0}, {mha(1), 0.2}};
  const std::map<SublayerId, long long> params = {{mha(0), 5}, {ffn(0), 5}, {mha(1), 5}};
  const RatioAllocation r = allocate_ratios(imp, params, cfg);
  const double z = std::sqrt(1.5);
  EXPECT_NEAR(r.z_scores.at(mha(0)), -z, 1e-12);
  EXPECT_NEAR(r.z_scores.at(ffn(0)), 0.0, 1e-12);
  EXPECT_NEAR(r.pre_clamp.at(mha(0)), 0.5 - 0.35 * z, 1e-12);
  EXPECT_NEAR(r.pre_clamp.at(mha(0)), 0.0713, 1e-4);
  EXPECT_NEAR(r.pre_clamp.at(ffn(0)), 0.5, 1e-12);
  EXPECT_NEAR(r.pre_clamp.at(mha(1)), 0.9286, 1e-4);
}

TEST(AllocateRatios, ExactnessMonotonicityAndAffineInvariance) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.6, 0.99);
  std::uniform_int_distribution<long long> w(1, 100);
  for (int t = 0; t < 100; ++t) {
    std::map<SublayerId, double> imp;
    std::map<SublayerId, long long> params;
    for (int l = 0; l < 4; ++l) {
      imp[mha(l)] = u(rng);
      imp[ffn(l)] = u(rng);
      params[mha(l)] = w(rng);
      params[ffn(l)] = w(rng);
    }
    AllocationConfig cfg;
    cfg.alpha = 0.05;
    cfg.clamp_lo = 0.0;
    cfg.clamp_hi = 0.999;
    const RatioAllocation r = allocate_ratios(imp, params, cfg);
    ASSERT_TRUE(r.clamps.empty());
    EXPECT_NEAR(r.achieved_mean, 0.5, 1e-9);
    for (const auto& [a, ia] : imp) {
      for (const auto& [b, ib] : imp) {
        if (ia < ib) {
          EXPECT_LT(r.pre_clamp.at(a), r.pre_clamp.at(b));
        }
      }
    }
    std::map<SublayerId, double> scaled;
    for (const auto& [id, i] : imp) scaled[id] = 3.5 * i - 0.7;
    const RatioAllocation s = allocate_ratios(scaled, params, cfg);
    for (const auto& [id, p] : r.pre_clamp) EXPECT_NEAR(s.pre_clamp.at(id), p, 1e-9);
  }
}

TEST(AllocateRatios, SkippedMassInflatesTarget) {
  AllocationConfig cfg;
  cfg.alpha = 0.05;
  cfg.skip_sublayers = {mha(0)};
  const std::map<SublayerId, double> imp = {{mha(0), 0.1}, {ffn(0), 0.5}, {mha(1), 0.9}};
  const std::map<SublayerId, long long> params = {{mha(0), 10}, {ffn(0), 20}, {mha(1), 10}};
  const RatioAllocation r = allocate_ratios(imp, params, cfg);
  EXPECT_EQ(r.ratios.at(mha(0)), 0.0);
  EXPECT_NEAR(r.effective_target, 0.5 * 40 / 30, 1e-12);
  EXPECT_NEAR(r.achieved_mean, 0.5, 1e-9);
}

TEST(AllocateRatios, ClampsAreLogged) {
  AllocationConfig cfg;
  cfg.alpha = 1.0;
  const std::map<SublayerId, double> imp = {{mha(0), 0.0}, {ffn(0), 1.0}};
  const std::map<SublayerId, long long> params = {{mha(0), 1}, {ffn(0), 1}};
  const RatioAllocation r = allocate_ratios(imp, params, cfg);
  ASSERT_EQ(r.clamps.size(), 2u);
  EXPECT_EQ(r.ratios.at(mha(0)), cfg.clamp_lo);
  EXPECT_EQ(r.ratios.at(ffn(0)), cfg.clamp_hi);
  EXPECT_EQ(r.clamps[0].what, "ratio_low");
  EXPECT_EQ(r.clamps[1].what, "ratio_high");
}

TEST(AllocateRatios, DegenerateAndErrors) {
  AllocationConfig cfg;
  const std::map<SublayerId, long long> params = {{mha(0), 1}, {ffn(0), 1}};
  const RatioAllocation r = allocate_ratios({{mha(0), 0.4}, {ffn(0), 0.4}}, params, cfg);
  EXPECT_TRUE(r.degenerate_variance);
  for (const auto& [id, p] : r.ratios) EXPECT_EQ(p, 0.5);
  expect_errc(Errc::kTooFewSublayers, [&] { allocate_ratios({{mha(0), 0.4}}, {{mha(0), 1}}, cfg); });
  AllocationConfig bad = cfg;
  bad.target_ratio = 1.2;
  expect_errc(Errc::kInvalidConfig, [&] { allocate_ratios({{mha(0), 0.4}, {ffn(0), 0.1}}, params, bad); });
  expect_errc(Errc::kNonFinite, [&] { allocate_ratios({{mha(0), NAN}, {ffn(0), 0.1}}, params, cfg); });
}

TEST(RankBudget, Examples) {
  EXPECT_EQ(sublayer_rank_budget(std::vector<MatrixDims>(4, {64, 64}), 0.5), 64);
  EXPECT_EQ(sublayer_rank_budget({{64, 172}, {172, 64}, {64, 172}}, 0.0), 138);
  EXPECT_GE(sublayer_rank_budget({{64, 172}, {172, 64}, {64, 172}}, 0.999), 3);
  expect_errc(Errc::kHeterogeneousRankCost, [] { sublayer_rank_budget({{64, 64}, {64, 128}}, 0.5); });
}

TEST(RankBudget, UnitsAndFloor) {
  EXPECT_EQ(budget_unit({{64, 64}, {64, 128}}), 64);
  EXPECT_EQ(budget_unit({{64, 172}, {172, 64}}), 236);
  EXPECT_EQ(floor_rank({64, 64}, 0.1), 4);  // ceil(0.1 * 4096 / 128) = ceil(3.2)
  EXPECT_EQ(floor_rank({64, 64}, 0.0), 1);
  EXPECT_EQ(floor_rank({4, 4}, 0.99), 2);
}

TEST(BalancedRanks, IdenticalSpectraSplitEvenly) {
  const EnergyProfile p = profile({5, 4, 3, 2, 1, 1, 0.5, 0.1});
  const RankAllocation r = balanced_ranks({{"a", p}, {"b", p}}, {{"a", {8, 8}}, {"b", {8, 8}}}, 6, 1e-3, 0.0);
  EXPECT_EQ(r.ranks.at("a"), 3);
  EXPECT_EQ(r.ranks.at("b"), 3);
}

TEST(BalancedRanks, TwoMatrixExample) {
  const std::map<std::string, EnergyProfile> profiles = {{"A", from_cumulative({0.9, 1.0})},
                                                         {"B", from_cumulative({0.5, 0.8, 0.95, 1.0})}};
  // Same per-rank cost 8, max ranks 2 and 4.
  const std::map<std::string, MatrixDims> dims = {{"A", {2, 6}}, {"B", {4, 4}}};
  const RankAllocation r = balanced_ranks(profiles, dims, 4, 1e-3, 0.0);
  EXPECT_EQ(r.ranks.at("A"), 1);
  EXPECT_EQ(r.ranks.at("B"), 3);
  EXPECT_NEAR(r.objective, 1.85, 1e-12);
  const RankAllocation b = brute_force_ranks(profiles, dims, 4, 1e-3, 0.0);
  EXPECT_NEAR(b.objective, r.objective, 1e-9);
}

TEST(BalancedRanks, FullBudgetGivesFullRanks) {
  const EnergyProfile p = profile({3, 2, 1});
  const RankAllocation r = balanced_ranks({{"a", p}, {"b", p}}, {{"a", {3, 3}}, {"b", {3, 3}}}, 6, 1e-3, 0.0);
  EXPECT_EQ(r.ranks.at("a"), 3);
  EXPECT_EQ(r.ranks.at("b"), 3);
  EXPECT_EQ(r.min_energy, 1.0);
}

TEST(BalancedRanks, InfeasibleBudget) {
  const EnergyProfile p = profile({3, 2, 1, 1});
  expect_errc(Errc::kInfeasibleBudget,
              [&] { balanced_ranks({{"a", p}, {"b", p}}, {{"a", {4, 4}}, {"b", {4, 4}}}, 1, 1e-3, 0.0); });
}

TEST(BalancedRanks, PropertiesOnRandomInstances) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> rmax(2, 12);
  for (int t = 0; t < 200; ++t) {
    std::map<std::string, EnergyProfile> profiles;
    std::map<std::string, MatrixDims> dims;
    const char* names[] = {"wq", "wk", "wv", "wo"};
    for (const char* n : names) {
      const int m = rmax(rng);
      profiles[n] = profile(random_spectrum(static_cast<std::size_t>(m), rng, t % 2 == 0));
      dims[n] = {m, m};
    }
    // Equal cost is needed for rank-unit budgets; use square matrices of
    // differing size, which gives differing costs and weighted units.
    const double floor_ratio = t % 3 == 0 ? 0.0 : 0.1;
    long long floor_units = 0;
    long long max_units = 0;
    std::vector<MatrixDims> all;
    for (const auto& [n, d] : dims) all.push_back(d);
    const long long unit = budget_unit(all);
    for (const auto& [n, d] : dims) {
      floor_units += d.rank_cost() / unit * floor_rank(d, floor_ratio);
      max_units += d.rank_cost() / unit * d.max_rank();
    }
    std::uniform_int_distribution<long long> b(floor_units, max_units);
    const long long budget = b(rng);
    const RankAllocation r = balanced_ranks(profiles, dims, budget, 1e-3, floor_ratio);
    EXPECT_LE(r.used_budget, budget);
    for (const auto& [n, d] : dims) {
      const auto rank = r.ranks.at(n);
      EXPECT_GE(rank, floor_rank(d, floor_ratio));
      EXPECT_LE(rank, d.max_rank());
      // Maximality: no single increment fits.
      if (rank < d.max_rank()) {
        EXPECT_GT(r.used_budget + d.rank_cost() / unit, budget);
      }
      // Tightness at the shared level, before top-up.
      const auto level = r.level_ranks.at(n);
      if (level > floor_rank(d, floor_ratio)) {
        EXPECT_LT(profiles.at(n).retained(level - 1), r.tau);
      }
    }
  }
}

TEST(BalancedRanks, MinEnergyDominatesUniform) {
  std::mt19937_64 rng(29);
  // Up to 0.85 the 0.1 floor stays below every uniform rank.
  std::uniform_real_distribution<double> ratio(0.05, 0.85);
  for (int t = 0; t < 100; ++t) {
    std::map<std::string, EnergyProfile> profiles;
    std::map<std::string, MatrixDims> dims = {{"wg", {64, 172}}, {"wu", {64, 172}}, {"wd", {172, 64}}};
    for (const auto& [n, d] : dims) profiles[n] = profile(random_spectrum(64, rng, t % 2 == 1));
    const double p = ratio(rng);
    std::vector<MatrixDims> all = {dims["wg"], dims["wu"], dims["wd"]};
    const long long budget = sublayer_rank_budget(all, p);
    double uniform_min = 1.0;
    for (const auto& [n, d] : dims) {
      uniform_min = std::min(uniform_min, profiles[n].retained(rank_for_ratio(d.d_in, d.d_out, p)));
    }
    const RankAllocation r = balanced_ranks(profiles, dims, budget, 1e-3, t % 2 == 0 ? 0.1 : 0.0);
    EXPECT_GE(r.min_energy, uniform_min);
  }
}

TEST(BruteForce, SingleMatrixAndLimits) {
  const EnergyProfile p = profile({4, 3, 2, 1, 1});
  for (long long b = 1; b <= 7; ++b) {
    const RankAllocation r = brute_force_ranks({{"a", p}}, {{"a", {5, 5}}}, b, 1e-3, 0.0);
    EXPECT_EQ(r.ranks.at("a"), std::min<long long>(b, 5));
  }
  std::map<std::string, EnergyProfile> big;
  std::map<std::string, MatrixDims> dims;
  for (const char* n : {"a", "b", "c", "d"}) {
    big[n] = profile(std::vector<double>(64, 1.0));
    dims[n] = {64, 64};
  }
  expect_errc(Errc::kSearchSpaceTooLarge, [&] { brute_force_ranks(big, dims, 100, 1e-3, 0.0); });
}

TEST(BuildPlan, AlphaZeroPerMatrixFloorIsUniform) {
  std::mt19937_64 rng(31);
  std::vector<SublayerAllocInput> inputs;
  for (int l = 0; l < 3; ++l) {
    SublayerAllocInput in;
    in.id = ffn(l);
    in.importance = 0.1 * l;
    in.dims["w"] = {48, 48};
    // Single-matrix "sublayers": the balanced solver has nothing to trade.
    in.profiles["w"] = profile(random_spectrum(48, rng, true));
    inputs.push_back(in);
  }
  AllocationConfig cfg;
  cfg.alpha = 0.0;
  cfg.target_ratio = 0.4;
  cfg.rounding = BudgetRounding::kPerMatrixFloor;
  const AllocationPlan plan = build_plan(inputs, cfg);
  for (const auto& sp : plan.sublayers) EXPECT_EQ(sp.matrices.at("w").rank, rank_for_ratio(48, 48, 0.4));
}

TEST(BuildPlan, GlobalCarryHitsTargetAndConservesBudget) {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> imp(0.6, 0.9);
  for (double target : {0.2, 0.5}) {
    std::vector<SublayerAllocInput> inputs;
    for (int l = 0; l < 4; ++l) {
      SublayerAllocInput m;
      m.id = mha(l);
      m.importance = imp(rng);
      for (const char* n : {"wq", "wk", "wv", "wo"}) {
        m.dims[n] = {64, 64};
        m.profiles[n] = profile(random_spectrum(64, rng, true));
      }
      SublayerAllocInput f;
      f.id = ffn(l);
      f.importance = imp(rng);
      f.dims["wg"] = {64, 172};
      f.dims["wu"] = {64, 172};
      f.dims["wd"] = {172, 64};
      for (const auto& [n, d] : f.dims) f.profiles[n] = profile(random_spectrum(172, rng, true));
      inputs.push_back(m);
      inputs.push_back(f);
    }
    AllocationConfig cfg;
    cfg.target_ratio = target;
    cfg.alpha = 0.05;
    const AllocationPlan plan = build_plan(inputs, cfg);
    ASSERT_TRUE(plan.clamps.empty());
    EXPECT_NEAR(plan.achieved_ratio, target, 0.005);
    long long used = 0;
    for (const auto& sp : plan.sublayers) {
      long long sub = 0;
      for (const auto& [n, mp] : sp.matrices) {
        used += mp.rank * mp.dims.rank_cost();
        sub += mp.rank * mp.dims.rank_cost();
        EXPECT_GE(mp.rank, floor_rank(mp.dims, cfg.rank_floor_ratio));
        EXPECT_LE(mp.rank, mp.dims.max_rank());
      }
      EXPECT_LE(sub, sp.budget * sp.unit);
    }
    EXPECT_EQ(used, plan.planned_params);
    EXPECT_EQ(plan.achieved_ratio, 1.0 - static_cast<double>(used) / plan.scope_params);
  }
}

TEST(BuildPlan, JointQkWeightedUnits) {
  std::mt19937_64 rng(41);
  std::vector<SublayerAllocInput> inputs;
  for (int l = 0; l < 2; ++l) {
    SublayerAllocInput m;
    m.id = mha(l);
    m.importance = 0.5 + 0.1 * l;
    m.dims["wqk"] = {64, 128};
    m.dims["wv"] = {64, 64};
    m.dims["wo"] = {64, 64};
    for (const auto& [n, d] : m.dims) m.profiles[n] = profile(random_spectrum(static_cast<std::size_t>(d.d_out), rng, true));
    inputs.push_back(m);
  }
  AllocationConfig cfg;
  cfg.alpha = 0.0;
  const AllocationPlan plan = build_plan(inputs, cfg);
  for (const auto& sp : plan.sublayers) {
    EXPECT_EQ(sp.unit, 64);
    long long used = 0;
    for (const auto& [n, mp] : sp.matrices) used += mp.rank * mp.dims.rank_cost();
    EXPECT_LE(used, sp.budget * 64);
  }
  EXPECT_NEAR(plan.achieved_ratio, 0.5, 0.005);
}

TEST(BuildPlan, SkippedSublayersStayDense) {
  std::mt19937_64 rng(43);
  std::vector<SublayerAllocInput> inputs;
  for (int l = 0; l < 3; ++l) {
    SublayerAllocInput in;
    in.id = mha(l);
    in.importance = 0.3 * l;
    in.dims["w"] = {32, 32};
    if (l > 0) in.profiles["w"] = profile(random_spectrum(32, rng, true));
    inputs.push_back(in);
  }
  AllocationConfig cfg;
  cfg.alpha = 0.0;
  cfg.target_ratio = 0.3;
  cfg.skip_sublayers = {mha(0)};
  const AllocationPlan plan = build_plan(inputs, cfg);
  EXPECT_TRUE(plan.sublayers[0].skipped);
  EXPECT_TRUE(plan.sublayers[0].matrices.empty());
  EXPECT_NEAR(plan.achieved_ratio, 0.3, 0.01);
}

}  // namespace
}  // namespace mgaa
