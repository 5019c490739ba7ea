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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mgaa/allocate.hpp"

namespace mgaa {

struct Series {
  std::string label;
  std::vector<double> values;
};

// Minimal static SVG charts.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, const std::string& y_label);
std::string svg_line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label);

// Writes importance.csv/svg and energy.csv/energy_<kind>.svg from calibration
// statistics, plus ratios.csv/svg and ranks.csv/svg when a plan is given.
// Returns the written file names, sorted.
std::vector<std::string> write_analysis(const std::map<SublayerId, SublayerStats>& stats, const AllocationPlan* plan,
                                        const std::filesystem::path& dir);

}  // namespace mgaa
