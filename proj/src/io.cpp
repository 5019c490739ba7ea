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

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "mgaa/error.hpp"

namespace mgaa {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kContainerMagic[4] = {'M', 'G', 'T', '1'};
constexpr char kTokenMagic[4] = {'T', 'O', 'K', '1'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw Error(Errc::kFormat, source_ + ": " + msg + " at offset " + std::to_string(at));
  }
  void magic(const char (&m)[4]) {
    const std::size_t at = pos_;
    if (bytes_.size() - pos_ < 4 || std::memcmp(bytes_.data() + pos_, m, 4) != 0) fail("bad magic", at);
    pos_ += 4;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what, pos_);
  }
  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

std::string layer_key(int l, std::string_view slot) { return "layers." + std::to_string(l) + "." + std::string(slot); }

json clamp_json(const ClampEvent& c) {
  return {{"sublayer", to_string(c.id)}, {"what", c.what}, {"before", c.before}, {"after", c.after}};
}

ClampEvent clamp_from_json(const json& j) {
  return {parse_sublayer_id(j.at("sublayer").get<std::string>()), j.at("what").get<std::string>(),
          j.at("before").get<double>(), j.at("after").get<double>()};
}

std::string rounding_name(BudgetRounding r) {
  return r == BudgetRounding::kGlobalCarry ? "global_carry" : "per_matrix_floor";
}

BudgetRounding parse_rounding(const std::string& s) {
  if (s == "global_carry") return BudgetRounding::kGlobalCarry;
  if (s == "per_matrix_floor") return BudgetRounding::kPerMatrixFloor;
  throw Error(Errc::kInvalidConfig, "unknown rounding '" + s + "'");
}

json alloc_config_json(const AllocationConfig& c) {
  json skip = json::array();
  for (const auto& id : c.skip_sublayers) skip.push_back(to_string(id));
  return {{"target_ratio", c.target_ratio}, {"alpha", c.alpha},       {"epsilon", c.epsilon},
          {"rank_floor_ratio", c.rank_floor_ratio}, {"clamp", {c.clamp_lo, c.clamp_hi}},
          {"skip_sublayers", skip}, {"rounding", rounding_name(c.rounding)}};
}

// Runs `f`, turning JSON access errors into InvalidConfig.
template <class F>
auto schema(const std::string& source, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(Errc::kInvalidConfig, source + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw Error(Errc::kInvalidConfig, what + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw Error(Errc::kInvalidConfig, what + ": unknown key '" + k + "'");
  }
}

}  // namespace

std::uint64_t Tensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const Tensor* TensorContainer::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorContainer::at(std::string_view name, const std::string& source) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw Error(Errc::kFormat, source + ": missing tensor '" + std::string(name) + "'");
  return *t;
}

void TensorContainer::add(std::string name, const Matrix& m, DType dtype) {
  Tensor t{std::move(name), dtype, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
           to_row_major(m)};
  tensors.push_back(std::move(t));
}

void TensorContainer::add(std::string name, const Vector& v, DType dtype) {
  Tensor t{std::move(name), dtype, {static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.begin(), v.end())};
  tensors.push_back(std::move(t));
}

std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
  std::set<std::string_view> names;
  Writer w;
  w.bytes(kContainerMagic, 4);
  w.put(static_cast<std::uint32_t>(c.tensors.size()));
  for (const Tensor& t : c.tensors) {
    if (!names.insert(t.name).second) throw Error(Errc::kFormat, "duplicate tensor name '" + t.name + "'");
    if (t.name.size() > 0xffff) throw Error(Errc::kFormat, "tensor name too long");
    if (t.dims.size() > 0xff) throw Error(Errc::kFormat, "too many dims for '" + t.name + "'");
    if (t.numel() != t.values.size()) throw Error(Errc::kFormat, "payload size mismatch for '" + t.name + "'");
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put(static_cast<std::uint8_t>(t.dtype));
    w.put(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put(d);
    if (t.dtype == DType::kF64) {
      w.bytes(t.values.data(), t.values.size() * sizeof(double));
    } else {
      for (double v : t.values) w.put(static_cast<float>(v));
    }
  }
  return w.take();
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  r.magic(kContainerMagic);
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorContainer c;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    Tensor t;
    const auto len = r.get<std::uint16_t>("name length");
    const auto name = r.take(len, "name");
    t.name.assign(name.begin(), name.end());
    if (!names.insert(t.name).second) r.fail("duplicate tensor name '" + t.name + "'", start);
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) r.fail("unknown dtype " + std::to_string(dtype), dtype_at);
    t.dtype = static_cast<DType>(dtype);
    const auto ndim = r.get<std::uint8_t>("ndim");
    std::uint64_t numel = 1;
    for (int k = 0; k < ndim; ++k) {
      const std::size_t at = r.pos();
      const auto d = r.get<std::uint64_t>("dims");
      if (d != 0 && numel > (std::uint64_t{1} << 40) / d) r.fail("tensor too large", at);
      numel *= d;
      t.dims.push_back(d);
    }
    const std::size_t width = t.dtype == DType::kF64 ? 8 : 4;
    if (numel > (bytes.size() - r.pos()) / width) r.fail("truncated payload of '" + t.name + "'", r.pos());
    const auto payload = r.take(numel * width, "payload");
    t.values.resize(numel);
    if (t.dtype == DType::kF64) {
      std::memcpy(t.values.data(), payload.data(), payload.size());
    } else {
      for (std::size_t k = 0; k < numel; ++k) {
        float f;
        std::memcpy(&f, payload.data() + 4 * k, 4);
        t.values[k] = f;
      }
    }
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes", r.pos());
  return c;
}

std::vector<std::uint8_t> encode_tokens(const Dataset& d) {
  Writer w;
  w.bytes(kTokenMagic, 4);
  w.put(static_cast<std::uint32_t>(d.size()));
  for (const auto& seq : d) {
    w.put(static_cast<std::uint32_t>(seq.size()));
    w.bytes(seq.data(), seq.size() * sizeof(std::uint32_t));
  }
  return w.take();
}

Dataset decode_tokens(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  r.magic(kTokenMagic);
  const auto count = r.get<std::uint32_t>("sequence count");
  Dataset d;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("sequence length");
    if (len > (bytes.size() - r.pos()) / 4) r.fail("truncated sequence", r.pos());
    const auto payload = r.take(std::size_t{len} * 4, "tokens");
    TokenSequence seq(len);
    std::memcpy(seq.data(), payload.data(), payload.size());
    d.push_back(std::move(seq));
  }
  if (!r.done()) r.fail("trailing bytes", r.pos());
  return d;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(Errc::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::kIo, "cannot rename onto " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

TensorContainer read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path), path.string());
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
  write_file_atomic(path, encode_container(c));
}

Dataset read_tokens(const std::filesystem::path& path, int vocab) {
  Dataset d = decode_tokens(read_file(path), path.string());
  if (vocab > 0) {
    for (std::size_t s = 0; s < d.size(); ++s) {
      for (auto t : d[s]) {
        if (t >= static_cast<std::uint32_t>(vocab)) {
          throw Error(Errc::kTokenOutOfRange, path.string() + ": token " + std::to_string(t) + " in sequence " +
                                                  std::to_string(s) + " exceeds vocab " + std::to_string(vocab));
        }
      }
    }
  }
  return d;
}

void write_tokens(const std::filesystem::path& path, const Dataset& d) { write_file_atomic(path, encode_tokens(d)); }

Matrix tensor_matrix(const Tensor& t, const std::string& source) {
  if (t.dims.size() != 2) throw Error(Errc::kFormat, source + ": tensor '" + t.name + "' is not 2-D");
  return matrix_from_row_major(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]), t.values);
}

Vector tensor_vector(const Tensor& t, const std::string& source) {
  if (t.dims.size() != 1) throw Error(Errc::kFormat, source + ": tensor '" + t.name + "' is not 1-D");
  return Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

TensorContainer model_to_container(const ToyModel& model, DType dtype) {
  const auto& cfg = model.cfg;
  TensorContainer c;
  Vector meta(8);
  meta << cfg.vocab, cfg.hidden, cfg.heads, cfg.ffn, cfg.layers, cfg.norm_eps,
      static_cast<double>(cfg.seed >> 32), static_cast<double>(cfg.seed & 0xffffffffu);
  c.add("config", meta, DType::kF64);
  c.add("embedding", model.embedding, dtype);
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerWeights& lw = model.layers[static_cast<std::size_t>(l)];
    c.add(layer_key(l, "attn_norm"), lw.attn_norm, dtype);
    c.add(layer_key(l, "ffn_norm"), lw.ffn_norm, dtype);
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      for (auto name : matrix_names(kind)) {
        const WeightSlot& slot = lw.slot(name);
        const std::string key = layer_key(l, name);
        if (const auto* f = std::get_if<FactorPair>(&slot)) {
          c.add(key + ".L", f->l, dtype);
          c.add(key + ".R", f->r, dtype);
          if (f->bias_correction) c.add(key + ".bias", *f->bias_correction, dtype);
        } else {
          c.add(key, std::get<Matrix>(slot), dtype);
        }
      }
    }
  }
  c.add("final_norm", model.final_norm, dtype);
  c.add("head", model.head, dtype);
  return c;
}

ToyModel model_from_container(const TensorContainer& c, const std::string& source) {
  const Vector meta = tensor_vector(c.at("config", source), source);
  if (meta.size() != 8) throw Error(Errc::kFormat, source + ": config tensor must have 8 entries");
  ToyModel m;
  m.cfg.vocab = static_cast<int>(meta(0));
  m.cfg.hidden = static_cast<int>(meta(1));
  m.cfg.heads = static_cast<int>(meta(2));
  m.cfg.ffn = static_cast<int>(meta(3));
  m.cfg.layers = static_cast<int>(meta(4));
  m.cfg.norm_eps = meta(5);
  m.cfg.seed = (static_cast<std::uint64_t>(meta(6)) << 32) | static_cast<std::uint64_t>(meta(7));
  m.cfg.validate();
  const Eigen::Index v = m.cfg.vocab;
  const Eigen::Index d = m.cfg.hidden;

  auto matrix = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    Matrix x = tensor_matrix(c.at(name, source), source);
    if (x.rows() != rows || x.cols() != cols) {
      throw Error(Errc::kShapeMismatch, source + ": tensor '" + name + "' has shape " + std::to_string(x.rows()) +
                                            "x" + std::to_string(x.cols()) + ", expected " + std::to_string(rows) +
                                            "x" + std::to_string(cols));
    }
    return x;
  };
  auto vector = [&](const std::string& name, Eigen::Index n) {
    Vector x = tensor_vector(c.at(name, source), source);
    if (x.size() != n) throw Error(Errc::kShapeMismatch, source + ": tensor '" + name + "' has wrong length");
    return x;
  };

  std::set<std::string> used = {"config", "embedding", "final_norm", "head"};
  m.embedding = matrix("embedding", v, d);
  m.final_norm = vector("final_norm", d);
  m.head = matrix("head", v, d);
  for (int l = 0; l < m.cfg.layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = vector(layer_key(l, "attn_norm"), d);
    lw.ffn_norm = vector(layer_key(l, "ffn_norm"), d);
    used.insert(layer_key(l, "attn_norm"));
    used.insert(layer_key(l, "ffn_norm"));
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      for (auto name : matrix_names(kind)) {
        const MatrixDims dims = allocation_dims(m.cfg, name);
        const std::string key = layer_key(l, name);
        if (c.find(key) != nullptr) {
          lw.slot(name) = matrix(key, dims.d_out, dims.d_in);
          used.insert(key);
          continue;
        }
        FactorPair f;
        f.l = tensor_matrix(c.at(key + ".L", source), source);
        f.r = tensor_matrix(c.at(key + ".R", source), source);
        if (f.l.rows() != dims.d_out || f.r.cols() != dims.d_in || f.l.cols() != f.r.rows()) {
          throw Error(Errc::kShapeMismatch, source + ": factors of '" + key + "' do not fit " +
                                                std::to_string(dims.d_out) + "x" + std::to_string(dims.d_in));
        }
        used.insert(key + ".L");
        used.insert(key + ".R");
        if (c.find(key + ".bias") != nullptr) {
          f.bias_correction = vector(key + ".bias", dims.d_out);
          used.insert(key + ".bias");
        }
        lw.slot(name) = std::move(f);
      }
    }
    // Joint Q/K factors are recognized by their shared R.
    auto* q = std::get_if<FactorPair>(&lw.wq);
    auto* k = std::get_if<FactorPair>(&lw.wk);
    if (q != nullptr && k != nullptr && q->r.rows() == k->r.rows() && q->r == k->r) {
      q->method = Method::kJointQk;
      k->method = Method::kJointQk;
    }
    m.layers.push_back(std::move(lw));
  }
  for (const Tensor& t : c.tensors) {
    if (!used.contains(t.name)) throw Error(Errc::kFormat, source + ": unexpected tensor '" + t.name + "'");
  }
  return m;
}

ToyModel load_model(const std::filesystem::path& path) {
  return model_from_container(read_container(path), path.string());
}

void save_model(const std::filesystem::path& path, const ToyModel& model) {
  write_container(path, model_to_container(model));
}

TensorContainer stats_to_container(const std::map<SublayerId, SublayerStats>& stats) {
  TensorContainer c;
  for (const auto& [id, s] : stats) {
    const std::string key = to_string(id);
    Vector meta(4);
    meta << s.importance, static_cast<double>(s.importance_columns), static_cast<double>(s.skipped_columns),
        static_cast<double>(s.param_count);
    c.add(key + ".meta", meta);
    for (const auto& [name, ms] : s.matrices) {
      const std::string mk = key + "." + name;
      Vector mm(3);
      mm << static_cast<double>(ms.d_in), static_cast<double>(ms.d_out), static_cast<double>(ms.token_count);
      c.add(mk + ".meta", mm);
      c.add(mk + ".gram", ms.gram_y);
      c.add(mk + ".mean", ms.mean_y);
      c.add(mk + ".scale_abs", ms.scale_abs);
      c.add(mk + ".scale_l2", ms.scale_l2);
    }
    if (s.qk_gram) c.add(key + ".qk_gram", *s.qk_gram);
  }
  return c;
}

std::map<SublayerId, SublayerStats> stats_from_container(const TensorContainer& c, const std::string& source) {
  std::map<SublayerId, SublayerStats> out;
  auto split = [](const std::string& name) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    std::string p;
    while (std::getline(ss, p, '.')) parts.push_back(p);
    return parts;
  };
  for (const Tensor& t : c.tensors) {
    const auto parts = split(t.name);
    if (parts.size() < 3) throw Error(Errc::kFormat, source + ": unexpected tensor '" + t.name + "'");
    const SublayerId id = parse_sublayer_id(parts[0] + "." + parts[1]);
    SublayerStats& s = out[id];
    s.id = id;
    if (parts.size() == 3 && parts[2] == "meta") {
      const Vector m = tensor_vector(t, source);
      if (m.size() != 4) throw Error(Errc::kFormat, source + ": bad '" + t.name + "'");
      s.importance = m(0);
      s.importance_columns = static_cast<long long>(m(1));
      s.skipped_columns = static_cast<long long>(m(2));
      s.param_count = static_cast<long long>(m(3));
    } else if (parts.size() == 3 && parts[2] == "qk_gram") {
      s.qk_gram = tensor_matrix(t, source);
    } else if (parts.size() == 4) {
      MatrixStats& ms = s.matrices[parts[2]];
      const std::string& field = parts[3];
      if (field == "meta") {
        const Vector m = tensor_vector(t, source);
        if (m.size() != 3) throw Error(Errc::kFormat, source + ": bad '" + t.name + "'");
        ms.d_in = static_cast<Eigen::Index>(m(0));
        ms.d_out = static_cast<Eigen::Index>(m(1));
        ms.token_count = static_cast<long long>(m(2));
      } else if (field == "gram") {
        ms.gram_y = tensor_matrix(t, source);
      } else if (field == "mean") {
        ms.mean_y = tensor_vector(t, source);
      } else if (field == "scale_abs") {
        ms.scale_abs = tensor_vector(t, source);
      } else if (field == "scale_l2") {
        ms.scale_l2 = tensor_vector(t, source);
      } else {
        throw Error(Errc::kFormat, source + ": unexpected tensor '" + t.name + "'");
      }
    } else {
      throw Error(Errc::kFormat, source + ": unexpected tensor '" + t.name + "'");
    }
  }
  return out;
}

RunConfig parse_run_config(const json& j) {
  reject_unknown(j,
                 {"method", "target_ratio", "alpha", "epsilon", "rank_floor_ratio", "clamp", "skip_sublayers", "seed",
                  "model_path", "calib_path", "output_path", "report_path", "rounding"},
                 "run config");
  return schema("run config", [&] {
    RunConfig rc;
    if (!j.contains("method")) throw Error(Errc::kInvalidConfig, "run config: missing 'method'");
    if (!j.contains("target_ratio")) throw Error(Errc::kInvalidConfig, "run config: missing 'target_ratio'");
    rc.method = parse_backend(j.at("method").get<std::string>());
    AllocationConfig& a = rc.alloc;
    a.target_ratio = j.at("target_ratio").get<double>();
    a.alpha = j.value("alpha", a.alpha);
    a.epsilon = j.value("epsilon", a.epsilon);
    a.rank_floor_ratio = j.value("rank_floor_ratio", a.rank_floor_ratio);
    if (j.contains("clamp")) {
      const auto clamp = j.at("clamp").get<std::vector<double>>();
      if (clamp.size() != 2) throw Error(Errc::kInvalidConfig, "run config: 'clamp' must be [lo, hi]");
      a.clamp_lo = clamp[0];
      a.clamp_hi = clamp[1];
    }
    if (j.contains("skip_sublayers")) {
      for (const auto& s : j.at("skip_sublayers").get<std::vector<std::string>>()) {
        a.skip_sublayers.insert(parse_sublayer_id(s));
      }
    }
    if (j.contains("rounding")) a.rounding = parse_rounding(j.at("rounding").get<std::string>());
    rc.seed = j.value("seed", std::uint64_t{0});
    rc.model_path = j.value("model_path", std::string());
    rc.calib_path = j.value("calib_path", std::string());
    rc.output_path = j.value("output_path", std::string());
    rc.report_path = j.value("report_path", std::string());
    a.validate();
    return rc;
  });
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(load_json(path)); }

json run_config_to_json(const RunConfig& cfg) {
  json j = alloc_config_json(cfg.alloc);
  j["method"] = backend_name(cfg.method);
  j["seed"] = cfg.seed;
  if (!cfg.model_path.empty()) j["model_path"] = cfg.model_path;
  if (!cfg.calib_path.empty()) j["calib_path"] = cfg.calib_path;
  if (!cfg.output_path.empty()) j["output_path"] = cfg.output_path;
  if (!cfg.report_path.empty()) j["report_path"] = cfg.report_path;
  return j;
}

ToyGenConfig parse_toy_config(const json& j) {
  reject_unknown(j, {"vocab", "hidden", "heads", "ffn", "layers", "seed", "norm_eps", "calib_sequences",
                     "calib_length", "calib_seed"},
                 "toy config");
  return schema("toy config", [&] {
    ToyGenConfig g;
    ToyModelConfig& m = g.model;
    m.vocab = j.value("vocab", m.vocab);
    m.hidden = j.value("hidden", m.hidden);
    m.heads = j.value("heads", m.heads);
    m.ffn = j.value("ffn", m.ffn);
    m.layers = j.value("layers", m.layers);
    m.seed = j.value("seed", m.seed);
    m.norm_eps = j.value("norm_eps", m.norm_eps);
    g.calib_sequences = j.value("calib_sequences", 0);
    g.calib_length = j.value("calib_length", 0);
    g.calib_seed = j.value("calib_seed", m.seed + 1);
    m.validate();
    if (g.calib_sequences < 0 || g.calib_length < 0) {
      throw Error(Errc::kInvalidConfig, "toy config: calibration shape must be non-negative");
    }
    return g;
  });
}

ToyGenConfig load_toy_config(const std::filesystem::path& path) { return parse_toy_config(load_json(path)); }

Dataset random_tokens(int vocab, int sequences, int length, std::uint64_t seed) {
  if (vocab <= 0) throw Error(Errc::kInvalidConfig, "vocab must be positive");
  std::mt19937_64 rng(seed);
  Dataset d(static_cast<std::size_t>(sequences), TokenSequence(static_cast<std::size_t>(length)));
  for (auto& seq : d) {
    for (auto& t : seq) t = static_cast<std::uint32_t>(rng() % static_cast<std::uint64_t>(vocab));
  }
  return d;
}

json plan_to_json(const AllocationPlan& plan) {
  json subs = json::array();
  for (const SublayerPlan& sp : plan.sublayers) {
    json mats = json::object();
    for (const auto& [name, mp] : sp.matrices) {
      mats[name] = {{"d_in", mp.dims.d_in}, {"d_out", mp.dims.d_out}, {"rank", mp.rank},
                    {"retained_energy", mp.retained_energy}};
    }
    subs.push_back({{"id", to_string(sp.id)},
                    {"skipped", sp.skipped},
                    {"importance", sp.importance},
                    {"ratio", sp.ratio},
                    {"ratio_pre_clamp", sp.ratio_pre_clamp},
                    {"budget", sp.budget},
                    {"budget_unit", sp.unit},
                    {"tau", sp.tau},
                    {"energy_spread", sp.energy_spread},
                    {"spread_exceeds_epsilon", sp.spread_exceeds_epsilon},
                    {"matrices", mats}});
  }
  json clamps = json::array();
  for (const auto& c : plan.clamps) clamps.push_back(clamp_json(c));
  return {{"target_ratio", plan.target_ratio},
          {"effective_target", plan.effective_target},
          {"weighted_mean_before_shift", plan.weighted_mean_before_shift},
          {"epsilon", plan.epsilon},
          {"scope_params", plan.scope_params},
          {"planned_params", plan.planned_params},
          {"achieved_ratio", plan.achieved_ratio},
          {"degenerate_variance", plan.degenerate_variance},
          {"sublayers", subs},
          {"clamps", clamps}};
}

AllocationPlan plan_from_json(const json& j) {
  return schema("plan", [&] {
    AllocationPlan plan;
    plan.target_ratio = j.at("target_ratio").get<double>();
    plan.effective_target = j.at("effective_target").get<double>();
    plan.weighted_mean_before_shift = j.at("weighted_mean_before_shift").get<double>();
    plan.epsilon = j.at("epsilon").get<double>();
    plan.scope_params = j.at("scope_params").get<long long>();
    plan.planned_params = j.at("planned_params").get<long long>();
    plan.achieved_ratio = j.at("achieved_ratio").get<double>();
    plan.degenerate_variance = j.at("degenerate_variance").get<bool>();
    for (const json& s : j.at("sublayers")) {
      SublayerPlan sp;
      sp.id = parse_sublayer_id(s.at("id").get<std::string>());
      sp.skipped = s.at("skipped").get<bool>();
      sp.importance = s.at("importance").get<double>();
      sp.ratio = s.at("ratio").get<double>();
      sp.ratio_pre_clamp = s.at("ratio_pre_clamp").get<double>();
      sp.budget = s.at("budget").get<long long>();
      sp.unit = s.at("budget_unit").get<long long>();
      sp.tau = s.at("tau").get<double>();
      sp.energy_spread = s.at("energy_spread").get<double>();
      sp.spread_exceeds_epsilon = s.at("spread_exceeds_epsilon").get<bool>();
      for (const auto& [name, m] : s.at("matrices").items()) {
        MatrixPlan mp;
        mp.dims = {m.at("d_in").get<Eigen::Index>(), m.at("d_out").get<Eigen::Index>()};
        mp.rank = m.at("rank").get<Eigen::Index>();
        mp.retained_energy = m.at("retained_energy").get<double>();
        sp.matrices[name] = mp;
      }
      plan.sublayers.push_back(std::move(sp));
    }
    for (const json& c : j.at("clamps")) plan.clamps.push_back(clamp_from_json(c));
    return plan;
  });
}

json report_to_json(const CompressionReport& r, bool with_timing) {
  json subs = json::array();
  for (const SublayerReport& s : r.sublayers) {
    json mats = json::array();
    for (const MatrixReport& m : s.matrices) {
      mats.push_back({{"name", m.name},
                      {"d_in", m.dims.d_in},
                      {"d_out", m.dims.d_out},
                      {"rank", m.rank},
                      {"retained_energy", m.retained_energy},
                      {"predicted_loss", m.predicted_loss},
                      {"predicted_in_output_space", m.predicted_in_output_space},
                      {"measured_loss", m.measured_loss},
                      {"output_energy", m.output_energy},
                      {"loss_ratio", m.loss_ratio()}});
    }
    subs.push_back({{"id", to_string(s.id)},
                    {"skipped", s.skipped},
                    {"importance", s.importance},
                    {"ratio", s.ratio},
                    {"ratio_pre_clamp", s.ratio_pre_clamp},
                    {"budget", s.budget},
                    {"budget_unit", s.budget_unit},
                    {"tau", s.tau},
                    {"energy_spread", s.energy_spread},
                    {"spread_exceeds_epsilon", s.spread_exceeds_epsilon},
                    {"matrices", mats}});
  }
  json clamps = json::array();
  for (const auto& c : r.clamps) clamps.push_back(clamp_json(c));
  json j = {{"method", backend_name(r.backend)},
            {"config", alloc_config_json(r.config)},
            {"calibration", {{"sequences", r.calibration_sequences}, {"tokens", r.calibration_tokens}}},
            {"target_ratio", r.config.target_ratio},
            {"effective_target", r.effective_target},
            {"weighted_mean_before_shift", r.weighted_mean_before_shift},
            {"scope_params", r.scope_params},
            {"emitted_params", r.emitted_params},
            {"planned_ratio", r.planned_ratio},
            {"achieved_ratio", r.achieved_ratio},
            {"ratio_deviation", r.achieved_ratio - r.config.target_ratio},
            {"degenerate_variance", r.degenerate_variance},
            {"total_predicted_loss", r.total_predicted_loss},
            {"total_measured_loss", r.total_measured_loss},
            {"sublayers", subs},
            {"clamps", clamps}};
  if (with_timing && r.wall_time_seconds) j["wall_time_seconds"] = *r.wall_time_seconds;
  return j;
}

json eval_to_json(const EvalMetrics& m) {
  return {{"hidden_error", m.hidden_error},
          {"hidden_rel_error", m.hidden_rel_error},
          {"token_kl", m.token_kl},
          {"tokens", m.tokens}};
}

json comparison_to_json(const ComparisonRecord& rec) {
  auto variant = [](const VariantResult& v) {
    json me = json::object();
    for (const auto& [id, e] : v.min_energy) me[to_string(id)] = e;
    return json{{"achieved_ratio", v.achieved_ratio},
                {"metrics", eval_to_json(v.metrics)},
                {"min_energy", me},
                {"mha_loss_ratio_sd", v.mha_loss_ratio_sd}};
  };
  return {{"target_ratio", rec.target_ratio},
          {"uniform", variant(rec.uniform)},
          {"layer_adaptive", variant(rec.layer_adaptive)},
          {"energy_balanced", variant(rec.energy_balanced)},
          {"mgaa", variant(rec.mgaa)},
          {"dominance_holds", rec.dominance_holds}};
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

json load_json(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(Errc::kInvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace mgaa
