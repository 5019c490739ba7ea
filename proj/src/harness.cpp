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

#include "mgaa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "mgaa/error.hpp"

namespace mgaa {

void ToyModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::kInvalidConfig, msg); };
  if (vocab < 1 || hidden < 1 || heads < 1 || ffn < 1 || layers < 1) fail("toy model sizes must be positive");
  if (hidden % heads != 0) fail("hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  if (!(norm_eps > 0.0)) fail("norm_eps must be > 0");
}

std::span<const std::string_view> matrix_names(SublayerKind kind) {
  if (kind == SublayerKind::kMha) return kMhaMatrices;
  return kFfnMatrices;
}

WeightSlot& LayerWeights::slot(std::string_view name) {
  return const_cast<WeightSlot&>(std::as_const(*this).slot(name));
}

const WeightSlot& LayerWeights::slot(std::string_view name) const {
  if (name == "wq") return wq;
  if (name == "wk") return wk;
  if (name == "wv") return wv;
  if (name == "wo") return wo;
  if (name == "wg") return wg;
  if (name == "wu") return wu;
  if (name == "wd") return wd;
  throw Error(Errc::kPlanModelMismatch, "no weight slot named '" + std::string(name) + "'");
}

const Matrix& dense_weight(const WeightSlot& slot) {
  if (const auto* m = std::get_if<Matrix>(&slot)) return *m;
  throw Error(Errc::kPlanModelMismatch, "slot is already factored");
}

Eigen::Index slot_rows(const WeightSlot& slot) {
  return std::visit([](const auto& s) -> Eigen::Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(s)>, Matrix>) {
      return s.rows();
    } else {
      return s.d_out();
    }
  }, slot);
}

Eigen::Index slot_cols(const WeightSlot& slot) {
  return std::visit([](const auto& s) -> Eigen::Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(s)>, Matrix>) {
      return s.cols();
    } else {
      return s.d_in();
    }
  }, slot);
}

long long ToyModel::scope_params() const {
  const long long d = cfg.hidden;
  const long long f = cfg.ffn;
  return static_cast<long long>(cfg.layers) * (4 * d * d + 3 * d * f);
}

long long ToyModel::emitted_scope_params() const {
  long long total = 0;
  for (const auto& layer : layers) {
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      for (auto name : matrix_names(kind)) {
        const WeightSlot& s = layer.slot(name);
        if (const auto* m = std::get_if<Matrix>(&s)) {
          total += m->size();
        } else {
          total += std::get<FactorPair>(s).param_count();
        }
      }
    }
    const auto* q = std::get_if<FactorPair>(&layer.wq);
    const auto* k = std::get_if<FactorPair>(&layer.wk);
    if (q != nullptr && k != nullptr && q->method == Method::kJointQk && k->method == Method::kJointQk &&
        q->r.rows() == k->r.rows() && q->r == k->r) {
      total -= k->r.size();
    }
  }
  return total;
}

long long sublayer_param_count(const ToyModelConfig& cfg, SublayerKind kind) {
  const long long d = cfg.hidden;
  return kind == SublayerKind::kMha ? 4 * d * d : 3 * d * static_cast<long long>(cfg.ffn);
}

ToyModel init_toy_model(const ToyModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal(rng);
    }
    return m;
  };
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index f = cfg.ffn;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));

  ToyModel model;
  model.cfg = cfg;
  model.embedding = gaussian(cfg.vocab, d, sd);
  model.layers.reserve(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    LayerWeights w;
    w.attn_norm = Vector::Ones(d);
    w.ffn_norm = Vector::Ones(d);
    w.wq = gaussian(d, d, sd);
    w.wk = gaussian(d, d, sd);
    w.wv = gaussian(d, d, sd);
    w.wo = gaussian(d, d, sd);
    w.wg = gaussian(f, d, sd);
    w.wu = gaussian(f, d, sd);
    w.wd = gaussian(d, f, sf);
    model.layers.push_back(std::move(w));
  }
  model.final_norm = Vector::Ones(d);
  model.head = gaussian(cfg.vocab, d, sd);
  return model;
}

Capture::Capture(CaptureRequest request, const ToyModelConfig& cfg) : request_(std::move(request)), cfg_(cfg) {
  if (request_.mode != CaptureMode::kStats) return;
  const Eigen::Index d = cfg.hidden;
  for (int l = 0; l < cfg.layers; ++l) {
    for (auto kind : {SublayerKind::kMha, SublayerKind::kFfn}) {
      const SublayerId id{l, kind};
      if (!wants(id)) continue;
      auto& mats = matrices_[id];
      for (auto name : matrix_names(kind)) {
        const MatrixDims dims = allocation_dims(cfg, name);
        MatrixAcc acc;
        acc.gram = Matrix::Zero(dims.d_out, dims.d_out);
        acc.sum_y = Vector::Zero(dims.d_out);
        acc.abs_sum_x = Vector::Zero(dims.d_in);
        acc.sq_sum_x = Vector::Zero(dims.d_in);
        mats.emplace(std::string(name), std::move(acc));
      }
      if (kind == SublayerKind::kMha && request_.stacked_qk_gram) qk_gram_[l] = Matrix::Zero(2 * d, 2 * d);
    }
  }
}

bool Capture::wants(const SublayerId& id) const {
  return request_.mode != CaptureMode::kNone && (request_.sublayers.empty() || request_.sublayers.contains(id));
}

void Capture::on_sublayer(const SublayerId& id, const Matrix& x, const Matrix& y) {
  if (request_.mode != CaptureMode::kImportance || !wants(id)) return;
  cosine_[id].add(x, y);
}

void Capture::on_matmul(const SublayerId& id, std::string_view name, const Matrix& input, const Matrix& output) {
  if (request_.mode != CaptureMode::kStats || !wants(id)) return;
  auto& acc = matrices_.at(id).find(name)->second;
  // Lower triangle only; mirrored in finish().
  acc.gram.selfadjointView<Eigen::Lower>().rankUpdate(output);
  acc.sum_y += output.rowwise().sum();
  acc.abs_sum_x += input.cwiseAbs().rowwise().sum();
  acc.sq_sum_x += input.array().square().matrix().rowwise().sum();
  acc.tokens += input.cols();
}

void Capture::on_qk(int layer, const Matrix& q, const Matrix& k) {
  if (request_.mode != CaptureMode::kStats || !request_.stacked_qk_gram) return;
  if (!wants({layer, SublayerKind::kMha})) return;
  Matrix stacked(q.rows() + k.rows(), q.cols());
  stacked << q, k;
  qk_gram_.at(layer).selfadjointView<Eigen::Lower>().rankUpdate(stacked);
}

std::map<SublayerId, SublayerStats> Capture::finish() const {
  std::map<SublayerId, SublayerStats> out;
  for (const auto& [id, acc] : cosine_) {
    SublayerStats& s = out[id];
    s.id = id;
    s.importance = acc.mean();
    s.importance_columns = acc.used();
    s.skipped_columns = acc.skipped();
    s.param_count = sublayer_param_count(cfg_, id.kind);
  }
  for (const auto& [id, mats] : matrices_) {
    SublayerStats& s = out[id];
    s.id = id;
    s.param_count = sublayer_param_count(cfg_, id.kind);
    for (const auto& [name, acc] : mats) {
      MatrixStats ms;
      ms.d_in = acc.abs_sum_x.size();
      ms.d_out = acc.sum_y.size();
      ms.token_count = acc.tokens;
      ms.gram_y = acc.gram.selfadjointView<Eigen::Lower>();
      const double n = static_cast<double>(std::max<long long>(acc.tokens, 1));
      ms.mean_y = acc.sum_y / n;
      ms.scale_abs = acc.abs_sum_x / n;
      ms.scale_l2 = acc.sq_sum_x.cwiseSqrt();
      s.matrices.emplace(name, std::move(ms));
    }
    if (id.kind == SublayerKind::kMha) {
      if (const auto it = qk_gram_.find(id.layer); it != qk_gram_.end()) {
        s.qk_gram = Matrix(it->second.selfadjointView<Eigen::Lower>());
      }
    }
  }
  return out;
}

namespace {

Matrix rms_norm(const Matrix& x, const Vector& gain, double eps) {
  Matrix out(x.rows(), x.cols());
  const double d = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double ms = x.col(j).squaredNorm() / d;
    out.col(j) = gain.cwiseProduct(x.col(j)) / std::sqrt(ms + eps);
  }
  return out;
}

Matrix apply_slot(const WeightSlot& slot, const Matrix& x, long long& macs) {
  const long long L = x.cols();
  if (const auto* w = std::get_if<Matrix>(&slot)) {
    macs += static_cast<long long>(w->rows()) * w->cols() * L;
    return *w * x;
  }
  const auto& f = std::get<FactorPair>(slot);
  macs += static_cast<long long>(f.rank()) * (f.d_in() + f.d_out()) * L;
  Matrix inner = f.r * x;
  Matrix out = f.l * inner;
  if (f.bias_correction) out.colwise() += *f.bias_correction;
  return out;
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens, Capture* capture,
                      const MatmulObserver& observer) {
  const ToyModelConfig& cfg = model.cfg;
  if (tokens.empty()) throw Error(Errc::kEmptyBatch, "empty token sequence");
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index L = static_cast<Eigen::Index>(tokens.size());

  Matrix x(d, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    const std::uint32_t tok = tokens[static_cast<std::size_t>(t)];
    if (tok >= static_cast<std::uint32_t>(cfg.vocab)) {
      throw Error(Errc::kTokenOutOfRange,
                  "token " + std::to_string(tok) + " at position " + std::to_string(t) + " >= vocab " +
                      std::to_string(cfg.vocab));
    }
    x.col(t) = model.embedding.row(tok).transpose();
  }

  ForwardResult res;
  auto project = [&](const SublayerId& id, const LayerWeights& w, std::string_view name, const Matrix& in) {
    Matrix out = apply_slot(w.slot(name), in, res.matmul_macs);
    if (capture != nullptr) capture->on_matmul(id, name, in, out);
    if (observer) observer(id, name, in, out);
    return out;
  };

  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];

    // Attention sublayer.
    {
      const SublayerId id{l, SublayerKind::kMha};
      const Matrix u = rms_norm(x, w.attn_norm, cfg.norm_eps);
      const Matrix q = project(id, w, "wq", u);
      const Matrix k = project(id, w, "wk", u);
      const Matrix v = project(id, w, "wv", u);
      if (capture != nullptr) capture->on_qk(l, q, k);
      Matrix attn(d, L);
      for (int h = 0; h < cfg.heads; ++h) {
        const auto qh = q.middleRows(h * hd, hd);
        const auto kh = k.middleRows(h * hd, hd);
        const auto vh = v.middleRows(h * hd, hd);
        // Column i holds the weights of query i over keys 0..i.
        Matrix probs = (kh.transpose() * qh) * scale;
        for (Eigen::Index i = 0; i < L; ++i) {
          auto live = probs.col(i).head(i + 1).array();
          live = (live - live.maxCoeff()).exp();
          live /= live.sum();
          probs.col(i).tail(L - i - 1).setZero();
        }
        attn.middleRows(h * hd, hd).noalias() = vh * probs;
      }
      Matrix y = x + project(id, w, "wo", attn);
      if (capture != nullptr) capture->on_sublayer(id, x, y);
      x = std::move(y);
    }

    // Gated feed-forward sublayer.
    {
      const SublayerId id{l, SublayerKind::kFfn};
      const Matrix u = rms_norm(x, w.ffn_norm, cfg.norm_eps);
      const Matrix g = project(id, w, "wg", u);
      const Matrix up = project(id, w, "wu", u);
      const Matrix act = g.unaryExpr(&silu).cwiseProduct(up);
      Matrix y = x + project(id, w, "wd", act);
      if (capture != nullptr) capture->on_sublayer(id, x, y);
      x = std::move(y);
    }
  }

  res.logits = model.head * rms_norm(x, model.final_norm, cfg.norm_eps);
  res.hidden = std::move(x);
  return res;
}

std::map<SublayerId, SublayerStats> collect_calibration(const ToyModel& model, const Dataset& dataset) {
  if (dataset.empty()) throw Error(Errc::kEmptyDataset, "calibration dataset has no sequences");

  Capture importance({CaptureMode::kImportance, {}, false}, model.cfg);
  for (const auto& seq : dataset) forward(model, seq, &importance);
  std::map<SublayerId, SublayerStats> out = importance.finish();

  Capture stats({CaptureMode::kStats, {}, true}, model.cfg);
  for (const auto& seq : dataset) forward(model, seq, &stats);
  for (auto& [id, s] : stats.finish()) {
    SublayerStats& dst = out[id];
    dst.matrices = std::move(s.matrices);
    dst.qk_gram = std::move(s.qk_gram);
  }
  return out;
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kSvd: return "svd";
    case Backend::kAsvd: return "asvd";
    case Backend::kAwsvd: return "awsvd";
    case Backend::kPca: return "pca";
    case Backend::kAfm: return "afm";
    case Backend::kJointPca: return "joint_pca";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  for (Backend b : {Backend::kSvd, Backend::kAsvd, Backend::kAwsvd, Backend::kPca, Backend::kAfm, Backend::kJointPca}) {
    if (backend_name(b) == name) return b;
  }
  throw Error(Errc::kInvalidConfig, "unknown method '" + std::string(name) + "'");
}

EnergyKind backend_energy_kind(Backend b) {
  switch (b) {
    case Backend::kSvd:
    case Backend::kAsvd:
    case Backend::kAwsvd:
      return EnergyKind::kSingularSquared;
    default:
      return EnergyKind::kEigen;
  }
}

std::vector<std::string> allocation_matrices(Backend b, SublayerKind kind) {
  if (kind == SublayerKind::kMha && b == Backend::kJointPca) return {"wo", "wqk", "wv"};
  std::vector<std::string> out;
  for (auto n : matrix_names(kind)) out.emplace_back(n);
  return out;
}

MatrixDims allocation_dims(const ToyModelConfig& cfg, std::string_view name) {
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index f = cfg.ffn;
  if (name == "wq" || name == "wk" || name == "wv" || name == "wo") return {d, d};
  if (name == "wqk") return {d, 2 * d};
  if (name == "wg" || name == "wu") return {d, f};
  if (name == "wd") return {f, d};
  throw Error(Errc::kPlanModelMismatch, "unknown matrix '" + std::string(name) + "'");
}

namespace {

const MatrixStats& need_stats(const SublayerStats& s, const std::string& name) {
  const auto it = s.matrices.find(name);
  if (it == s.matrices.end()) {
    throw Error(Errc::kMissingStats, "no statistics for " + to_string(s.id) + "." + name);
  }
  return it->second;
}

FactorPair factorize(Backend backend, const Matrix& w, const MatrixStats* ms, Eigen::Index rank) {
  switch (backend) {
    case Backend::kSvd:
      return plain_svd_decompose(w, rank).factors;
    case Backend::kAsvd:
      return weighted_svd_decompose(w, ScaleVector::clamped(ms->scale_abs, ScaleKind::kMeanAbs), rank).factors;
    case Backend::kAwsvd:
      return weighted_svd_decompose(w, ScaleVector::clamped(ms->scale_l2, ScaleKind::kL2Norm), rank).factors;
    case Backend::kPca:
    case Backend::kJointPca:
      return pca_decompose(w, ms->gram_y, rank).factors;
    case Backend::kAfm:
      return afm_decompose(w, ms->gram_y, ms->mean_y, ms->token_count, rank).factors;
  }
  throw Error(Errc::kInvalidConfig, "unhandled backend");
}

}  // namespace

ToyModel apply_plan(const ToyModel& model, const AllocationPlan& plan,
                    const std::map<SublayerId, SublayerStats>& stats, Backend backend) {
  ToyModel out = model;
  for (const SublayerPlan& sp : plan.sublayers) {
    if (sp.skipped) continue;
    if (sp.id.layer < 0 || sp.id.layer >= model.cfg.layers) {
      throw Error(Errc::kPlanModelMismatch, "plan names " + to_string(sp.id) + " but the model has " +
                                                std::to_string(model.cfg.layers) + " layers");
    }
    LayerWeights& layer = out.layers[static_cast<std::size_t>(sp.id.layer)];
    const SublayerStats* s = nullptr;
    if (backend != Backend::kSvd) {
      const auto it = stats.find(sp.id);
      if (it == stats.end()) throw Error(Errc::kMissingStats, "no statistics for " + to_string(sp.id));
      s = &it->second;
    }
    for (const auto& [name, mp] : sp.matrices) {
      if (name == "wqk") {
        if (sp.id.kind != SublayerKind::kMha) throw Error(Errc::kPlanModelMismatch, "wqk outside MHA");
        std::optional<Matrix> gram;
        if (backend == Backend::kJointPca) {
          if (s == nullptr || !s->qk_gram) {
            throw Error(Errc::kMissingStats, "no stacked Q/K Gram for " + to_string(sp.id));
          }
          gram = s->qk_gram;
        }
        JointQkResult j = joint_qk_decompose(dense_weight(layer.wq), dense_weight(layer.wk), gram, mp.rank);
        layer.wq = std::move(j.q);
        layer.wk = std::move(j.k);
        continue;
      }
      const auto names = matrix_names(sp.id.kind);
      if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw Error(Errc::kPlanModelMismatch, to_string(sp.id) + " has no matrix '" + name + "'");
      }
      WeightSlot& slot = layer.slot(name);
      const Matrix& w = dense_weight(slot);
      if (w.cols() != mp.dims.d_in || w.rows() != mp.dims.d_out) {
        throw Error(Errc::kPlanModelMismatch, "plan shape for " + to_string(sp.id) + "." + name +
                                                  " does not match the model");
      }
      const MatrixStats* ms = backend == Backend::kSvd ? nullptr : &need_stats(*s, name);
      slot = factorize(backend, w, ms, mp.rank);
    }
  }
  return out;
}

}  // namespace mgaa
