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

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgaa/allocate.hpp"
#include "mgaa/harness.hpp"
#include "mgaa/pipeline.hpp"

namespace mgaa {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

// One named tensor. Values are held as doubles whatever the stored dtype.
struct Tensor {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major

  std::uint64_t numel() const;
};

// "MGT1" container: little-endian, row-major, unique names, no trailing bytes.
struct TensorContainer {
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name, const std::string& source) const;
  void add(std::string name, const Matrix& m, DType dtype = DType::kF64);
  void add(std::string name, const Vector& v, DType dtype = DType::kF64);
};

std::vector<std::uint8_t> encode_container(const TensorContainer& c);
// `source` names the file in error messages.
TensorContainer decode_container(std::span<const std::uint8_t> bytes, const std::string& source);

std::vector<std::uint8_t> encode_tokens(const Dataset& d);
Dataset decode_tokens(std::span<const std::uint8_t> bytes, const std::string& source);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

TensorContainer read_container(const std::filesystem::path& path);
void write_container(const std::filesystem::path& path, const TensorContainer& c);

// Token ids are checked against `vocab` when it is positive.
Dataset read_tokens(const std::filesystem::path& path, int vocab = 0);
void write_tokens(const std::filesystem::path& path, const Dataset& d);

Matrix tensor_matrix(const Tensor& t, const std::string& source);
Vector tensor_vector(const Tensor& t, const std::string& source);

// Model layout: "config", "embedding", "head", "final_norm", and per layer
// "layers.<l>.<slot>" with factored slots as ".L", ".R", ".bias".
TensorContainer model_to_container(const ToyModel& model, DType dtype = DType::kF64);
ToyModel model_from_container(const TensorContainer& c, const std::string& source);
ToyModel load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const ToyModel& model);

TensorContainer stats_to_container(const std::map<SublayerId, SublayerStats>& stats);
std::map<SublayerId, SublayerStats> stats_from_container(const TensorContainer& c, const std::string& source);

struct RunConfig {
  Backend method = Backend::kPca;
  AllocationConfig alloc;
  std::uint64_t seed = 0;
  std::string model_path;
  std::string calib_path;
  std::string output_path;
  std::string report_path;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Toy model config plus optional calibration shape for gen-toy.
struct ToyGenConfig {
  ToyModelConfig model;
  int calib_sequences = 0;
  int calib_length = 0;
  std::uint64_t calib_seed = 1;
};
ToyGenConfig parse_toy_config(const nlohmann::json& j);
ToyGenConfig load_toy_config(const std::filesystem::path& path);

// Uniformly random token ids, seeded.
Dataset random_tokens(int vocab, int sequences, int length, std::uint64_t seed);

nlohmann::json plan_to_json(const AllocationPlan& plan);
AllocationPlan plan_from_json(const nlohmann::json& j);
nlohmann::json report_to_json(const CompressionReport& report, bool with_timing);
nlohmann::json eval_to_json(const EvalMetrics& m);
nlohmann::json comparison_to_json(const ComparisonRecord& rec);

// Sorted keys, two-space indent, trailing newline.
std::string dump_json(const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace mgaa
