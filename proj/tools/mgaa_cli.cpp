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

// Command-line front end: toy model generation, calibration capture,
// allocation, compression, evaluation and plots.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgaa/analyze.hpp"
#include "mgaa/error.hpp"
#include "mgaa/io.hpp"
#include "mgaa/pipeline.hpp"

namespace {

using namespace mgaa;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  throw UsageError(std::string("no ") + what + " given on the command line or in the config");
}

void emit_json(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << dump_json(j);
  } else {
    in_stage("write", [&] { write_text_atomic(out, dump_json(j)); return 0; });
  }
}

// Dimensions only; enough for output-space backends.
ToyModel model_shape_from_stats(const std::map<SublayerId, SublayerStats>& stats) {
  ToyModel m;
  int layers = 0;
  for (const auto& [id, s] : stats) {
    layers = std::max(layers, id.layer + 1);
    if (const auto it = s.matrices.find("wq"); it != s.matrices.end()) m.cfg.hidden = static_cast<int>(it->second.d_in);
    if (const auto it = s.matrices.find("wg"); it != s.matrices.end()) m.cfg.ffn = static_cast<int>(it->second.d_out);
  }
  m.cfg.layers = layers;
  m.layers.resize(static_cast<std::size_t>(layers));
  return m;
}

struct Args {
  std::string config, out, model, ref, calib, stats, plan, report, plot_dir;
  int sequences = -1;
  int length = -1;
  int vocab = 256;
  std::uint64_t seed = 1;
  bool with_timing = false;
};

int gen_toy(const Args& a) {
  const ToyGenConfig g = in_stage("load", [&] { return load_toy_config(a.config); });
  const ToyModel model = in_stage("init", [&] { return init_toy_model(g.model); });
  in_stage("write", [&] { save_model(a.out, model); return 0; });
  const int seqs = a.sequences >= 0 ? a.sequences : g.calib_sequences;
  const int len = a.length >= 0 ? a.length : g.calib_length;
  if (!a.calib.empty()) {
    if (seqs <= 0 || len <= 0) throw UsageError("--calib-out needs a positive calibration shape");
    in_stage("write", [&] { write_tokens(a.calib, random_tokens(g.model.vocab, seqs, len, g.calib_seed)); return 0; });
  }
  return 0;
}

int gen_tokens(const Args& a) {
  if (a.sequences <= 0 || a.length <= 0) throw UsageError("--sequences and --length must be positive");
  in_stage("write", [&] { write_tokens(a.out, random_tokens(a.vocab, a.sequences, a.length, a.seed)); return 0; });
  return 0;
}

int capture(const Args& a) {
  const ToyModel model = in_stage("load", [&] { return load_model(a.model); });
  const Dataset calib = in_stage("load", [&] { return read_tokens(a.calib, model.cfg.vocab); });
  const auto stats = in_stage("calibrate", [&] { return collect_calibration(model, calib); });
  in_stage("write", [&] { write_container(a.stats, stats_to_container(stats)); return 0; });
  return 0;
}

int allocate(const Args& a) {
  const RunConfig rc = in_stage("load", [&] { return load_run_config(a.config); });
  const auto stats = in_stage("load", [&] { return stats_from_container(read_container(a.stats), a.stats); });
  ToyModel model;
  const std::string model_path = !a.model.empty() ? a.model : rc.model_path;
  if (!model_path.empty()) {
    model = in_stage("load", [&] { return load_model(model_path); });
  } else if (backend_energy_kind(rc.method) == EnergyKind::kSingularSquared) {
    throw UsageError("method " + std::string(backend_name(rc.method)) + " needs --model");
  } else {
    model = model_shape_from_stats(stats);
  }
  const AllocationPlan plan = plan_from_stats(model, stats, rc.alloc, rc.method);
  emit_json(plan_to_json(plan), pick(a.plan, rc.output_path, "--out-plan"));
  return 0;
}

int compress(const Args& a) {
  const RunConfig rc = in_stage("load", [&] { return load_run_config(a.config); });
  const std::string model_path = pick(a.model, rc.model_path, "--model");
  const std::string calib_path = pick(a.calib, rc.calib_path, "--calib");
  const std::string out_path = pick(a.out, rc.output_path, "--out");
  const std::string report_path = pick(a.report, rc.report_path, "--report");
  const ToyModel model = in_stage("load", [&] { return load_model(model_path); });
  const Dataset calib = in_stage("load", [&] { return read_tokens(calib_path, model.cfg.vocab); });
  const CompressResult res = mgaa_compress(model, calib, rc.alloc, rc.method);
  in_stage("write", [&] {
    save_model(out_path, res.model);
    write_text_atomic(report_path, dump_json(report_to_json(res.report, a.with_timing)));
    return 0;
  });
  return 0;
}

int eval(const Args& a) {
  const ToyModel model = in_stage("load", [&] { return load_model(a.model); });
  const ToyModel ref = in_stage("load", [&] { return load_model(a.ref); });
  const Dataset data = in_stage("load", [&] { return read_tokens(a.calib, ref.cfg.vocab); });
  const EvalMetrics m = in_stage("eval", [&] { return eval_model(ref, model, data); });
  nlohmann::json j = eval_to_json(m);
  j["achieved_ratio"] = model.achieved_ratio();
  emit_json(j, a.out);
  return 0;
}

int compare(const Args& a) {
  const RunConfig rc = in_stage("load", [&] { return load_run_config(a.config); });
  const std::string model_path = pick(a.model, rc.model_path, "--model");
  const std::string calib_path = pick(a.calib, rc.calib_path, "--calib");
  const ToyModel model = in_stage("load", [&] { return load_model(model_path); });
  const Dataset calib = in_stage("load", [&] { return read_tokens(calib_path, model.cfg.vocab); });
  const ComparisonRecord rec = compare_uniform(model, calib, rc.alloc, rc.method);
  emit_json(comparison_to_json(rec), a.out);
  return 0;
}

int analyze(const Args& a) {
  const auto stats = in_stage("load", [&] { return stats_from_container(read_container(a.stats), a.stats); });
  std::optional<AllocationPlan> plan;
  if (!a.plan.empty()) plan = in_stage("load", [&] { return plan_from_json(load_json(a.plan)); });
  const auto files = in_stage("analyze", [&] { return write_analysis(stats, plan ? &*plan : nullptr, a.plot_dir); });
  for (const auto& f : files) std::cout << (std::filesystem::path(a.plot_dir) / f).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-granularity low-rank compression for toy transformer models"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen-toy", "Initialize a seeded toy model");
  gen->add_option("--config", a.config, "Toy model config JSON")->required();
  gen->add_option("--out", a.out, "Model container to write")->required();
  gen->add_option("--calib-out", a.calib, "Also write random calibration tokens");
  gen->add_option("--sequences", a.sequences, "Calibration sequences (overrides config)");
  gen->add_option("--length", a.length, "Calibration sequence length (overrides config)");

  auto* tok = app.add_subcommand("gen-tokens", "Write uniformly random token sequences");
  tok->add_option("--out", a.out, "Token file to write")->required();
  tok->add_option("--vocab", a.vocab, "Vocabulary size")->capture_default_str();
  tok->add_option("--sequences", a.sequences, "Number of sequences")->required();
  tok->add_option("--length", a.length, "Tokens per sequence")->required();
  tok->add_option("--seed", a.seed, "RNG seed")->capture_default_str();

  auto* cap = app.add_subcommand("capture", "Collect calibration statistics");
  cap->add_option("--model", a.model, "Model container")->required();
  cap->add_option("--calib", a.calib, "Calibration token file")->required();
  cap->add_option("--out-stats", a.stats, "Statistics container to write")->required();

  auto* alloc = app.add_subcommand("allocate", "Compute sublayer ratios and matrix ranks");
  alloc->add_option("--stats", a.stats, "Statistics container")->required();
  alloc->add_option("--config", a.config, "Run config JSON")->required();
  alloc->add_option("--out-plan", a.plan, "Plan JSON to write");
  alloc->add_option("--model", a.model, "Model container (needed for weight-space methods)");

  auto* comp = app.add_subcommand("compress", "Calibrate, allocate and factorize");
  comp->add_option("--model", a.model, "Model container");
  comp->add_option("--calib", a.calib, "Calibration token file");
  comp->add_option("--config", a.config, "Run config JSON")->required();
  comp->add_option("--out", a.out, "Compressed model container to write");
  comp->add_option("--report", a.report, "Report JSON to write");
  comp->add_flag("--with-timing", a.with_timing, "Record wall time in the report");

  auto* ev = app.add_subcommand("eval", "Compare a model against a reference");
  ev->add_option("--model", a.model, "Candidate model container")->required();
  ev->add_option("--ref", a.ref, "Reference model container")->required();
  ev->add_option("--calib", a.calib, "Evaluation token file")->required();
  ev->add_option("--out", a.out, "Metrics JSON to write (default: stdout)");

  auto* cmp = app.add_subcommand("compare", "Uniform vs adaptive allocation on the same inputs");
  cmp->add_option("--model", a.model, "Model container");
  cmp->add_option("--calib", a.calib, "Calibration token file");
  cmp->add_option("--config", a.config, "Run config JSON")->required();
  cmp->add_option("--out", a.out, "Comparison JSON to write (default: stdout)");

  auto* an = app.add_subcommand("analyze", "Write importance/energy CSVs and SVG plots");
  an->add_option("--stats", a.stats, "Statistics container")->required();
  an->add_option("--plot-dir", a.plot_dir, "Output directory")->required();
  an->add_option("--plan", a.plan, "Plan JSON for ratio and rank plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "gen-toy") return gen_toy(a);
    if (cmd == "gen-tokens") return gen_tokens(a);
    if (cmd == "capture") return capture(a);
    if (cmd == "allocate") return allocate(a);
    if (cmd == "compress") return compress(a);
    if (cmd == "eval") return eval(a);
    if (cmd == "compare") return compare(a);
    if (cmd == "analyze") return analyze(a);
  } catch (const UsageError& e) {
    std::cerr << "mgaa " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "mgaa " << cmd << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mgaa " << cmd << ": " << e.what() << "\n";
    return 1;
  }
  return 2;
}
