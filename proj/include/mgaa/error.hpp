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

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgaa {

enum class Errc {
  kNonSquare,
  kNotSymmetric,
  kIndefiniteBeyondTolerance,
  kConvergenceFailure,
  kDimensionMismatch,
  kNonFinite,
  kRankTooLarge,
  kRatioOutOfRange,
  kInsufficientTokens,
  kShapeMismatch,
  kAllZeroSpectrum,
  kEmptyBatch,
  kAllDegenerateColumns,
  kTooFewSublayers,
  kHeterogeneousRankCost,
  kInfeasibleBudget,
  kSearchSpaceTooLarge,
  kInvalidConfig,
  kTokenOutOfRange,
  kEmptyDataset,
  kMissingStats,
  kPlanModelMismatch,
  kFormat,
  kIo,
};

std::string_view errc_name(Errc code);

// Every failure in the library is reported as an Error. `stage` is filled in
// by the pipeline when an error crosses a stage boundary.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::string stage = {});

  Errc code() const { return code_; }
  const std::string& stage() const { return stage_; }
  const std::string& detail() const { return detail_; }

  Error with_stage(std::string stage) const { return Error(code_, detail_, std::move(stage)); }

 private:
  Errc code_;
  std::string detail_;
  std::string stage_;
};

// Runs `f`, tagging any Error that has no stage yet with `stage`.
template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(stage);
  }
}

}  // namespace mgaa
