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

#include "mgaa/error.hpp"

namespace mgaa {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kNonSquare: return "NonSquare";
    case Errc::kNotSymmetric: return "NotSymmetric";
    case Errc::kIndefiniteBeyondTolerance: return "IndefiniteBeyondTolerance";
    case Errc::kConvergenceFailure: return "ConvergenceFailure";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kNonFinite: return "NonFinite";
    case Errc::kRankTooLarge: return "RankTooLarge";
    case Errc::kRatioOutOfRange: return "RatioOutOfRange";
    case Errc::kInsufficientTokens: return "InsufficientTokens";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kAllZeroSpectrum: return "AllZeroSpectrum";
    case Errc::kEmptyBatch: return "EmptyBatch";
    case Errc::kAllDegenerateColumns: return "AllDegenerateColumns";
    case Errc::kTooFewSublayers: return "TooFewSublayers";
    case Errc::kHeterogeneousRankCost: return "HeterogeneousRankCost";
    case Errc::kInfeasibleBudget: return "InfeasibleBudget";
    case Errc::kSearchSpaceTooLarge: return "SearchSpaceTooLarge";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kTokenOutOfRange: return "TokenOutOfRange";
    case Errc::kEmptyDataset: return "EmptyDataset";
    case Errc::kMissingStats: return "MissingStats";
    case Errc::kPlanModelMismatch: return "PlanModelMismatch";
    case Errc::kFormat: return "FormatError";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

namespace {

std::string compose(Errc code, const std::string& message, const std::string& stage) {
  std::string out;
  if (!stage.empty()) out += "[" + stage + "] ";
  out += std::string(errc_name(code));
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(Errc code, const std::string& message, std::string stage)
    : std::runtime_error(compose(code, message, stage)),
      code_(code),
      detail_(message),
      stage_(std::move(stage)) {}

}  // namespace mgaa
