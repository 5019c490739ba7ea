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

#include "mgaa/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mgaa/decompose.hpp"
#include "mgaa/error.hpp"
#include "mgaa/io.hpp"

namespace mgaa {

namespace {

constexpr double kWidth = 720;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 160;
constexpr double kTop = 40;
constexpr double kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double y_min = 0.0;
  double y_max = 1.0;
  double plot_w() const { return kWidth - kLeft - kRight; }
  double plot_h() const { return kHeight - kTop - kBottom; }
  double y(double v) const { return kTop + plot_h() * (1.0 - (v - y_min) / (y_max - y_min)); }
};

Frame frame_for(const std::vector<Series>& series) {
  Frame f;
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) hi = lo + 1.0;
  f.y_min = lo;
  f.y_max = hi + 0.05 * (hi - lo);
  return f;
}

void header(std::ostringstream& o, const std::string& title, const Frame& f, const std::string& y_label) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = f.y_min + (f.y_max - f.y_min) * t / 4.0;
    const double y = f.y(v);
    o << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + f.plot_w() << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  o << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << kTop + f.plot_h()
    << "\" stroke=\"black\"/>\n";
  o << "<text transform=\"translate(16," << kTop + f.plot_h() / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& o, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 16.0 * static_cast<double>(i);
    const double x = kWidth - kRight + 14;
    o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[i % 8]
      << "\"/>\n";
    o << "<text x=\"" << x + 14 << "\" y=\"" << y + 9 << "\">" << escape(series[i].label) << "</text>\n";
  }
}

void write(const std::filesystem::path& dir, const std::string& name, const std::string& text,
           std::vector<std::string>& written) {
  write_text_atomic(dir / name, text);
  written.push_back(name);
}

}  // namespace

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, const std::string& y_label) {
  const Frame f = frame_for(series);
  std::ostringstream o;
  header(o, title, f, y_label);
  const double group_w = f.plot_w() / static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double gx = kLeft + group_w * static_cast<double>(g);
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].values.size()) continue;
      const double v = series[s].values[g];
      const double y0 = f.y(std::max(0.0, f.y_min));
      const double y1 = f.y(v);
      o << "<rect x=\"" << gx + group_w * 0.1 + bar_w * static_cast<double>(s) << "\" y=\"" << std::min(y0, y1)
        << "\" width=\"" << bar_w << "\" height=\"" << std::abs(y0 - y1) << "\" fill=\"" << kPalette[s % 8]
        << "\"/>\n";
    }
    o << "<text transform=\"translate(" << gx + group_w / 2 << "," << kTop + f.plot_h() + 12
      << ") rotate(45)\">" << escape(labels[g]) << "</text>\n";
  }
  if (series.size() > 1) legend(o, series);
  o << "</svg>\n";
  return o.str();
}

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label) {
  const Frame f = frame_for(series);
  std::size_t n = 1;
  for (const auto& s : series) n = std::max(n, s.values.size());
  std::ostringstream o;
  header(o, title, f, y_label);
  const double step = n > 1 ? f.plot_w() / static_cast<double>(n - 1) : 0.0;
  for (std::size_t s = 0; s < series.size(); ++s) {
    o << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 8] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      o << kLeft + step * static_cast<double>(i) << "," << f.y(series[s].values[i]) << " ";
    }
    o << "\"/>\n";
  }
  o << "<text x=\"" << kLeft + f.plot_w() / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">"
    << escape(x_label) << " (1.." << n << ")</text>\n";
  legend(o, series);
  o << "</svg>\n";
  return o.str();
}

std::vector<std::string> write_analysis(const std::map<SublayerId, SublayerStats>& stats, const AllocationPlan* plan,
                                        const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::kIo, "cannot create " + dir.string());
  std::vector<std::string> written;

  std::ostringstream imp_csv;
  imp_csv << "sublayer,importance\n";
  std::vector<std::string> labels;
  Series imp{"importance", {}};
  for (const auto& [id, s] : stats) {
    imp_csv << to_string(id) << "," << num(s.importance) << "\n";
    labels.push_back(to_string(id));
    imp.values.push_back(s.importance);
  }
  write(dir, "importance.csv", imp_csv.str(), written);
  write(dir, "importance.svg", svg_bar_chart("Sublayer importance (input/output cosine)", labels, {imp}, "cosine"),
        written);

  std::ostringstream en_csv;
  en_csv << "sublayer,matrix,index,energy,cumulative\n";
  std::map<SublayerKind, std::vector<Series>> curves;
  for (const auto& [id, s] : stats) {
    for (const auto& [name, ms] : s.matrices) {
      if (ms.gram_y.size() == 0) continue;
      const EnergyProfile p = pca_profile(ms.gram_y);
      Series cum{to_string(id) + "." + name, {}};
      for (std::size_t i = 0; i < p.energies.size(); ++i) {
        en_csv << to_string(id) << "," << name << "," << i + 1 << "," << num(p.energies[i]) << ","
               << num(p.cumulative[i]) << "\n";
        cum.values.push_back(p.cumulative[i]);
      }
      if (id.layer == 0) curves[id.kind].push_back(std::move(cum));
    }
  }
  if (!curves.empty()) {
    write(dir, "energy.csv", en_csv.str(), written);
    for (const auto& [kind, series] : curves) {
      const std::string k = kind == SublayerKind::kMha ? "mha" : "ffn";
      write(dir, "energy_" + k + ".svg",
            svg_line_chart("Cumulative output energy, layer 0 " + k, series, "rank", "retained energy"), written);
    }
  }

  if (plan != nullptr) {
    std::ostringstream r_csv;
    std::ostringstream k_csv;
    r_csv << "sublayer,importance,ratio,ratio_pre_clamp,budget,tau,energy_spread\n";
    k_csv << "sublayer,matrix,rank,max_rank,retained_energy\n";
    std::vector<std::string> ids;
    Series ratio{"ratio", {}};
    for (const SublayerPlan& sp : plan->sublayers) {
      r_csv << to_string(sp.id) << "," << num(sp.importance) << "," << num(sp.ratio) << ","
            << num(sp.ratio_pre_clamp) << "," << sp.budget << "," << num(sp.tau) << "," << num(sp.energy_spread)
            << "\n";
      ids.push_back(to_string(sp.id));
      ratio.values.push_back(sp.ratio);
      for (const auto& [name, mp] : sp.matrices) {
        k_csv << to_string(sp.id) << "," << name << "," << mp.rank << "," << mp.dims.max_rank() << ","
              << num(mp.retained_energy) << "\n";
      }
    }
    write(dir, "ratios.csv", r_csv.str(), written);
    write(dir, "ratios.svg", svg_bar_chart("Compression ratio per sublayer", ids, {ratio}, "ratio"), written);
    write(dir, "ranks.csv", k_csv.str(), written);

    // One group per layer and kind; one bar per matrix name.
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      std::vector<std::string> layer_ids;
      std::map<std::string, Series> per_matrix;
      for (const SublayerPlan& sp : plan->sublayers) {
        if (sp.id.kind != kind || sp.matrices.empty()) continue;
        layer_ids.push_back(to_string(sp.id));
        for (const auto& [name, mp] : sp.matrices) {
          Series& s = per_matrix[name];
          s.label = name;
          s.values.resize(layer_ids.size() - 1, 0.0);
          s.values.push_back(static_cast<double>(mp.rank) / static_cast<double>(mp.dims.max_rank()));
        }
      }
      if (layer_ids.empty()) continue;
      std::vector<Series> series;
      for (auto& [n, s] : per_matrix) series.push_back(std::move(s));
      const std::string k = kind == SublayerKind::kMha ? "mha" : "ffn";
      write(dir, "ranks_" + k + ".svg",
            svg_bar_chart("Retained rank fraction per matrix, " + k, layer_ids, series, "rank / max rank"),
            written);
    }
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace mgaa
