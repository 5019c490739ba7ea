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

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mgaa/allocate.hpp"
#include "mgaa/decompose.hpp"
#include "mgaa/linalg.hpp"

namespace mgaa {

struct ToyModelConfig {
  int vocab = 256;
  int hidden = 64;
  int heads = 4;
  int ffn = 172;
  int layers = 4;
  std::uint64_t seed = 0;
  double norm_eps = 1e-6;

  int head_dim() const { return hidden / heads; }
  void validate() const;
};

// A weight slot holds either the dense matrix or its low-rank replacement.
using WeightSlot = std::variant<Matrix, FactorPair>;

inline constexpr std::array<std::string_view, 4> kMhaMatrices = {"wq", "wk", "wv", "wo"};
inline constexpr std::array<std::string_view, 3> kFfnMatrices = {"wg", "wu", "wd"};

std::span<const std::string_view> matrix_names(SublayerKind kind);

struct LayerWeights {
  Vector attn_norm;
  Vector ffn_norm;
  WeightSlot wq, wk, wv, wo;  // d x d
  WeightSlot wg, wu;          // d_ff x d
  WeightSlot wd;              // d x d_ff

  WeightSlot& slot(std::string_view name);
  const WeightSlot& slot(std::string_view name) const;
};

struct ToyModel {
  ToyModelConfig cfg;
  Matrix embedding;  // vocab x d, one row per token
  std::vector<LayerWeights> layers;
  Vector final_norm;
  Matrix head;       // vocab x d, logits = head * h

  // Dense parameter count of the seven decomposable matrices per layer.
  long long scope_params() const;
  // Stored parameter count of the same slots; factor pairs of a joint Q/K
  // factorization share R, which is counted once.
  long long emitted_scope_params() const;
  // Achieved compression over the decomposable matrices.
  double achieved_ratio() const { return 1.0 - static_cast<double>(emitted_scope_params()) / static_cast<double>(scope_params()); }
};

const Matrix& dense_weight(const WeightSlot& slot);
Eigen::Index slot_rows(const WeightSlot& slot);
Eigen::Index slot_cols(const WeightSlot& slot);

ToyModel init_toy_model(const ToyModelConfig& cfg);

using TokenSequence = std::vector<std::uint32_t>;
using Dataset = std::vector<TokenSequence>;

enum class CaptureMode { kNone, kImportance, kStats };

struct CaptureRequest {
  CaptureMode mode = CaptureMode::kNone;
  std::set<SublayerId> sublayers;  // empty: every sublayer
  bool stacked_qk_gram = true;     // stats mode: also accumulate [q; k] Gram
};

// Streaming accumulators filled by forward(). Accumulators are sized from the
// model config at construction; batches are added in call order.
class Capture {
 public:
  Capture(CaptureRequest request, const ToyModelConfig& cfg);

  const CaptureRequest& request() const { return request_; }
  bool wants(const SublayerId& id) const;

  void on_sublayer(const SublayerId& id, const Matrix& x, const Matrix& y);
  void on_matmul(const SublayerId& id, std::string_view name, const Matrix& input, const Matrix& output);
  void on_qk(int layer, const Matrix& q, const Matrix& k);

  // Importances (importance mode) or per-matrix statistics (stats mode).
  std::map<SublayerId, SublayerStats> finish() const;

 private:
  struct MatrixAcc {
    Matrix gram;
    Vector sum_y;
    Vector abs_sum_x;
    Vector sq_sum_x;
    long long tokens = 0;
  };
  CaptureRequest request_;
  ToyModelConfig cfg_;
  std::map<SublayerId, CosineAccumulator> cosine_;
  std::map<SublayerId, std::map<std::string, MatrixAcc, std::less<>>> matrices_;
  std::map<int, Matrix> qk_gram_;
};

// Called at every projection of the forward pass with the slot's input and
// output (d x L).
using MatmulObserver =
    std::function<void(const SublayerId& id, std::string_view name, const Matrix& input, const Matrix& output)>;

struct ForwardResult {
  Matrix logits;  // vocab x L
  Matrix hidden;  // d x L residual stream after the last layer
  long long matmul_macs = 0;  // multiply-adds spent in weight slots
};

ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens, Capture* capture = nullptr,
                      const MatmulObserver& observer = {});

// Two passes over the dataset, in index order, on the given model: importances
// first, then per-matrix statistics.
std::map<SublayerId, SublayerStats> collect_calibration(const ToyModel& model, const Dataset& dataset);

long long sublayer_param_count(const ToyModelConfig& cfg, SublayerKind kind);

enum class Backend { kSvd, kAsvd, kAwsvd, kPca, kAfm, kJointPca };

std::string_view backend_name(Backend b);
Backend parse_backend(std::string_view name);
EnergyKind backend_energy_kind(Backend b);

// Matrix names a backend allocates over: joint Q/K PCA treats "wqk" (the
// stacked 2d x d matrix) as one entry of the MHA sublayer.
std::vector<std::string> allocation_matrices(Backend b, SublayerKind kind);
MatrixDims allocation_dims(const ToyModelConfig& cfg, std::string_view name);

// Returns a copy of `model` with every planned matrix replaced by the
// backend's factor pair at the planned rank.
ToyModel apply_plan(const ToyModel& model, const AllocationPlan& plan,
                    const std::map<SublayerId, SublayerStats>& stats, Backend backend);

}  // namespace mgaa
