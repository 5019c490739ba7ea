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

#include "mgaa/io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

namespace mgaa {
namespace {

namespace fs = std::filesystem;
using testing::expect_errc;

std::string format_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kFormat);
    return e.what();
  }
  ADD_FAILURE() << "expected Format";
  return {};
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mgaa_io_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

ToyModel small_model(std::uint64_t seed) {
  ToyModelConfig c;
  c.vocab = 32;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 20;
  c.layers = 2;
  c.seed = seed;
  return init_toy_model(c);
}

TEST(Container, RoundTripIsBitwise) {
  TensorContainer c;
  Matrix m = testing::random_matrix(3, 5, 7);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  c.add("a", m);
  c.add("v", Vector(Vector::LinSpaced(4, -1.0, 1.0)));
  c.tensors.push_back({"empty", DType::kF64, {0, 3}, {}});
  const auto bytes = encode_container(c);
  const TensorContainer d = decode_container(bytes, "mem");
  ASSERT_EQ(d.tensors.size(), 3u);
  const Matrix back = tensor_matrix(d.at("a", "mem"), "mem");
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * m.size()), 0);
  EXPECT_TRUE(std::signbit(back(0, 0)));
  EXPECT_EQ(d.tensors[2].numel(), 0u);
  EXPECT_EQ(encode_container(d), bytes);

  // Non-finite values survive the container but not conversion to a matrix.
  TensorContainer inf;
  inf.tensors.push_back({"x", DType::kF64, {1, 1}, {std::numeric_limits<double>::infinity()}});
  const TensorContainer inf_back = decode_container(encode_container(inf), "mem");
  EXPECT_TRUE(std::isinf(inf_back.tensors[0].values[0]));
  expect_errc(Errc::kNonFinite, [&] { tensor_matrix(inf_back.tensors[0], "mem"); });
}

TEST(Container, Float32Path) {
  TensorContainer c;
  c.add("x", Vector(Vector::LinSpaced(5, 0.1, 0.5)), DType::kF32);
  const auto bytes = encode_container(c);
  // magic, count, name length, name, dtype, ndim, one dim, 5 floats
  EXPECT_EQ(bytes.size(), 4u + 4 + 2 + 1 + 1 + 1 + 8 + 5 * 4);
  const TensorContainer d = decode_container(bytes, "mem");
  EXPECT_EQ(d.tensors[0].dtype, DType::kF32);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(d.tensors[0].values[i], static_cast<double>(static_cast<float>(0.1 * (i + 1))));
}

TEST(Container, LayoutIsRowMajorLittleEndian) {
  TensorContainer c;
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  c.add("m", m);
  const auto bytes = encode_container(c);
  const std::size_t payload = 4 + 4 + 2 + 1 + 1 + 1 + 16;
  double second;
  std::memcpy(&second, bytes.data() + payload + 8, 8);
  EXPECT_EQ(second, 2.0);
  EXPECT_EQ(bytes[4], 1);  // count, low byte first
}

TEST(Container, Rejections) {
  TensorContainer c;
  c.add("a", Vector(Vector::Ones(3)));
  auto bytes = encode_container(c);

  auto bad = bytes;
  bad[0] = 'X';
  const std::string magic = format_message([&] { decode_container(bad, "model.bin"); });
  EXPECT_NE(magic.find("model.bin"), std::string::npos) << magic;
  EXPECT_NE(magic.find("offset 0"), std::string::npos) << magic;

  auto trailing = bytes;
  trailing.push_back(0);
  const std::string t = format_message([&] { decode_container(trailing, "f"); });
  EXPECT_NE(t.find("trailing bytes at offset " + std::to_string(bytes.size())), std::string::npos) << t;

  for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{9}, bytes.size() - 1}) {
    std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    format_message([&] { decode_container(shorter, "f"); });
  }

  auto dtype = bytes;
  dtype[4 + 4 + 2 + 1] = 7;
  EXPECT_NE(format_message([&] { decode_container(dtype, "f"); }).find("dtype"), std::string::npos);

  // Duplicate names, built by hand since the encoder refuses them.
  TensorContainer two;
  two.add("a", Vector(Vector::Ones(1)));
  two.add("b", Vector(Vector::Ones(1)));
  auto dup = encode_container(two);
  const std::size_t second_name = 4 + 4 + (2 + 1 + 1 + 1 + 8 + 8) + 2;
  ASSERT_EQ(dup[second_name], 'b');
  dup[second_name] = 'a';
  EXPECT_NE(format_message([&] { decode_container(dup, "f"); }).find("duplicate"), std::string::npos);
  expect_errc(Errc::kFormat, [&] { encode_container(TensorContainer{{two.tensors[0], two.tensors[0]}}); });
}

TEST(Tokens, RoundTripAndVocab) {
  const Dataset d = random_tokens(50, 3, 7, 11);
  ASSERT_EQ(d.size(), 3u);
  for (const auto& s : d) {
    ASSERT_EQ(s.size(), 7u);
    for (auto t : s) EXPECT_LT(t, 50u);
  }
  EXPECT_EQ(random_tokens(50, 3, 7, 11), d);
  EXPECT_NE(random_tokens(50, 3, 7, 12), d);
  const fs::path p = scratch("tok.bin");
  write_tokens(p, d);
  EXPECT_EQ(read_tokens(p, 50), d);
  expect_errc(Errc::kTokenOutOfRange, [&] { read_tokens(p, 10); });
  auto bytes = read_file(p);
  bytes.pop_back();
  expect_errc(Errc::kFormat, [&] { decode_tokens(bytes, "tok"); });
  expect_errc(Errc::kIo, [&] { read_tokens(scratch("missing.bin")); });
}

TEST(Model, DenseRoundTrip) {
  const ToyModel m = small_model(3);
  const fs::path p = scratch("dense.bin");
  save_model(p, m);
  const ToyModel back = load_model(p);
  EXPECT_EQ(back.cfg.seed, m.cfg.seed);
  EXPECT_EQ(back.cfg.ffn, m.cfg.ffn);
  EXPECT_EQ(encode_container(model_to_container(back)), read_file(p));
  EXPECT_EQ(back.embedding, m.embedding);
  EXPECT_EQ(std::get<Matrix>(back.layers[1].wd), std::get<Matrix>(m.layers[1].wd));
}

TEST(Model, FactoredRoundTripKeepsJointAndBias) {
  const ToyModel m = small_model(4);
  const Dataset calib = random_tokens(32, 4, 16, 2);
  AllocationConfig cfg;
  cfg.alpha = 0.1;
  for (Backend b : {Backend::kAfm, Backend::kJointPca}) {
    const CompressResult r = mgaa_compress(m, calib, cfg, b);
    const ToyModel back = model_from_container(decode_container(encode_container(model_to_container(r.model)), "m"), "m");
    EXPECT_EQ(back.emitted_scope_params(), r.model.emitted_scope_params()) << backend_name(b);
    const auto& q = std::get<FactorPair>(back.layers[0].wq);
    EXPECT_EQ(q.method == Method::kJointQk, b == Backend::kJointPca);
    if (b == Backend::kAfm) {
      EXPECT_TRUE(std::get<FactorPair>(back.layers[0].wg).bias_correction.has_value());
    }
    for (std::size_t l = 0; l < back.layers.size(); ++l) {
      const auto& a = std::get<FactorPair>(back.layers[l].wo);
      const auto& o = std::get<FactorPair>(r.model.layers[l].wo);
      EXPECT_EQ(a.l, o.l);
      EXPECT_EQ(a.r, o.r);
    }
    EXPECT_EQ(forward(back, calib[0]).logits, forward(r.model, calib[0]).logits);
  }
}

TEST(Model, RejectsBadContainers) {
  TensorContainer c = model_to_container(small_model(5));
  TensorContainer extra = c;
  extra.add("stray", Vector(Vector::Ones(1)));
  expect_errc(Errc::kFormat, [&] { model_from_container(extra, "m"); });
  TensorContainer missing = c;
  missing.tensors.pop_back();
  expect_errc(Errc::kFormat, [&] { model_from_container(missing, "m"); });
  TensorContainer wrong = c;
  for (auto& t : wrong.tensors) {
    if (t.name == "layers.0.wv") {
      t.dims = {4, 16};
    }
  }
  expect_errc(Errc::kShapeMismatch, [&] { model_from_container(wrong, "m"); });
}

TEST(Stats, RoundTrip) {
  const ToyModel m = small_model(6);
  const auto stats = collect_calibration(m, random_tokens(32, 3, 10, 4));
  const auto back = stats_from_container(decode_container(encode_container(stats_to_container(stats)), "s"), "s");
  ASSERT_EQ(back.size(), stats.size());
  for (const auto& [id, s] : stats) {
    const SublayerStats& b = back.at(id);
    EXPECT_EQ(b.importance, s.importance);
    EXPECT_EQ(b.importance_columns, s.importance_columns);
    EXPECT_EQ(b.param_count, s.param_count);
    EXPECT_EQ(b.qk_gram.has_value(), s.qk_gram.has_value());
    if (s.qk_gram) {
      EXPECT_EQ(*b.qk_gram, *s.qk_gram);
    }
    for (const auto& [n, ms] : s.matrices) {
      const MatrixStats& mb = b.matrices.at(n);
      EXPECT_EQ(mb.token_count, ms.token_count);
      EXPECT_EQ(mb.gram_y, ms.gram_y);
      EXPECT_EQ(mb.mean_y, ms.mean_y);
      EXPECT_EQ(mb.scale_abs, ms.scale_abs);
      EXPECT_EQ(mb.scale_l2, ms.scale_l2);
    }
  }
  EXPECT_EQ(plan_from_stats(m, back, AllocationConfig{}, Backend::kPca).achieved_ratio,
            plan_from_stats(m, stats, AllocationConfig{}, Backend::kPca).achieved_ratio);
}

TEST(RunConfig, ParsesDefaultsAndRejectsUnknownKeys) {
  const RunConfig c = parse_run_config(nlohmann::json::parse(R"({"method": "afm", "target_ratio": 0.3})"));
  EXPECT_EQ(c.method, Backend::kAfm);
  EXPECT_EQ(c.alloc.target_ratio, 0.3);
  EXPECT_EQ(c.alloc.alpha, 0.35);
  EXPECT_EQ(c.alloc.epsilon, 1e-3);
  EXPECT_EQ(c.alloc.rank_floor_ratio, 0.1);
  EXPECT_EQ(c.alloc.rounding, BudgetRounding::kGlobalCarry);

  const RunConfig full = parse_run_config(nlohmann::json::parse(
      R"({"method": "joint_pca", "target_ratio": 0.4, "alpha": 0.2, "skip_sublayers": ["L0.mha", "L2.ffn"],
          "rounding": "per_matrix_floor", "clamp": [0.02, 0.9], "seed": 9, "model_path": "m.bin"})"));
  EXPECT_EQ(full.alloc.skip_sublayers.size(), 2u);
  EXPECT_TRUE(full.alloc.skip_sublayers.contains(SublayerId{2, SublayerKind::kFfn}));
  EXPECT_EQ(full.alloc.clamp_lo, 0.02);
  EXPECT_EQ(full.seed, 9u);
  EXPECT_EQ(parse_run_config(run_config_to_json(full)).alloc.alpha, 0.2);

  for (const char* bad : {R"({"method": "pca", "target_ratio": 0.5, "alhpa": 0.1})",
                          R"({"target_ratio": 0.5})", R"({"method": "pca"})",
                          R"({"method": "pca", "target_ratio": "half"})",
                          R"({"method": "pca", "target_ratio": 1.2})",
                          R"({"method": "pca", "target_ratio": 0.5, "alpha": -1})",
                          R"({"method": "pca", "target_ratio": 0.5, "rounding": "nearest"})",
                          R"([1, 2])"}) {
    expect_errc(Errc::kInvalidConfig, [&] { parse_run_config(nlohmann::json::parse(bad)); });
  }
}

TEST(Json, PlanRoundTripAndSortedKeys) {
  const ToyModel m = small_model(7);
  const Dataset calib = random_tokens(32, 3, 12, 8);
  const CompressResult r = mgaa_compress(m, calib, AllocationConfig{}, Backend::kPca);
  const auto j = plan_to_json(r.plan);
  EXPECT_EQ(dump_json(plan_to_json(plan_from_json(j))), dump_json(j));
  const std::string text = dump_json(report_to_json(r.report, false));
  EXPECT_EQ(text.back(), '\n');
  EXPECT_EQ(text.find("wall_time"), std::string::npos);
  EXPECT_NE(dump_json(report_to_json(r.report, true)).find("wall_time"), std::string::npos);
  // Top-level keys come out sorted.
  std::vector<std::string> keys;
  const auto parsed = nlohmann::json::parse(text);
  for (auto it = parsed.begin(); it != parsed.end(); ++it) keys.push_back(it.key());
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_LT(text.find("\"achieved_ratio\""), text.find("\"sublayers\""));
}

TEST(Files, AtomicWriteReplaces) {
  const fs::path p = scratch("out.txt");
  write_text_atomic(p, "one");
  write_text_atomic(p, "two");
  const auto bytes = read_file(p);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "two");
  for (const auto& e : fs::directory_iterator(p.parent_path())) {
    EXPECT_EQ(e.path().filename().string().find(".tmp."), std::string::npos);
  }
}

}  // namespace
}  // namespace mgaa
