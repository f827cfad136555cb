// Copyright 2026 The LCT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// End-to-end trimming network.
//
//   regions --affine--> F (N x D) --[trim]--> F_hat --mean--> pooled
//   [pooled | bank readout | question embedding] --affine+tanh--> hidden
//   hidden --affine--> logits --sigmoid--> per-answer probabilities
//
// Ablation flags:
//   use_dafb  keeps a K-prototype FeatureBank; adds a bank readout to the
//             fusion input and the orthogonality loss against the bank mean.
//   use_ct    trims F before pooling. With the bank, relevance is computed
//             against its prototypes. Without it, each image's own pooled
//             feature plus a zero "null" prototype stand in for the bank and
//             a running batch-global feature serves the orthogonality loss.
// With both flags off the network is a plain pooled fusion classifier and
// L_orth is 0.

#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lct/autodiff.hpp"
#include "lct/binary_io.hpp"
#include "lct/feature_bank.hpp"
#include "lct/gradcheck.hpp"
#include "lct/synthgen.hpp"
#include "lct/tensor.hpp"
#include "lct/trimming.hpp"

namespace lct {

struct ModelConfig {
  std::uint32_t raw_dim = 32;      // D_in
  std::uint32_t feature_dim = 32;  // D
  std::uint32_t hidden = 64;       // H
  std::uint32_t num_questions = kNumQuestions;
  std::uint32_t num_answers = 8;
  std::uint32_t bank_size = 256;  // K
  double momentum = 0.99;
  double tau = 0.07;
  bool use_dafb = true;
  bool use_ct = true;
  std::uint64_t seed = 1;

  void validate() const {
    auto positive = [](std::uint32_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string(key) + " must be >= 1");
    };
    positive(raw_dim, "raw_dim");
    positive(feature_dim, "feature_dim");
    positive(hidden, "hidden");
    positive(num_questions, "num_questions");
    positive(num_answers, "num_answers");
    positive(bank_size, "bank_size");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0, got " + std::to_string(tau));
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("momentum must lie in [0,1), got " + std::to_string(momentum));
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossBreakdown {
  double l_vqa = 0.0;
  double l_orth = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
};

/// Everything a forward pass produces that callers look at.
struct ForwardResult {
  Tensor2D probs;                // B x A
  Tensor2D features;             // (B*N) x D, pre-trim
  std::optional<Tensor2D> mask;  // (B*N) x 1 when use_ct
  Tensor2D pooled;               // B x D, pooled (trimmed) features
};

struct LossResult {
  LossBreakdown loss;
  std::vector<Tensor2D> grads;  // parallel to LctModel::parameters(); empty if not requested
  Tensor2D features;            // (B*N) x D pre-trim features, for the bank update
};

enum class LossTerms { kJoint, kVqaOnly };

/// Mean binary cross-entropy over classes for one instance.
inline double vqa_loss(std::span<const double> probs, std::span<const double> one_hot) {
  if (probs.size() != one_hot.size()) {
    throw ConfigError("vqa_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                      std::to_string(one_hot.size()) + " labels");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double p = std::clamp(probs[j], ad::kProbClamp, 1.0 - ad::kProbClamp);
    sum += -(one_hot[j] * std::log(p) + (1.0 - one_hot[j]) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(probs.size());
}

/// Squared cosine between two vectors; 0 (with a warning) if either is zero.
inline double squared_cosine(std::span<const double> a, std::span<const double> b) {
  const double aa = dot(a, a), bb = dot(b, b);
  if (aa == 0.0 || bb == 0.0) {
    std::cerr << "warning: orthogonality loss on a zero-norm vector; returning 0\n";
    return 0.0;
  }
  const double ab = dot(a, b);
  return std::min((ab * ab) / (aa * bb), 1.0);
}

/// Squared cosine between the mean trimmed region feature and the bank mean.
inline double orth_loss(const Tensor2D& trimmed, const FeatureBank& bank) {
  return squared_cosine(column_mean(trimmed), bank.average());
}

class LctModel {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  struct Parameter {
    std::string name;
    Tensor2D value;
  };

  LctModel() = default;

  explicit LctModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    auto gaussian = [&](std::size_t r, std::size_t c, double stddev) {
      std::normal_distribution<double> normal(0.0, stddev);
      Tensor2D t(r, c);
      for (double& v : t.data()) v = normal(rng);
      return t;
    };
    const std::size_t D = cfg_.feature_dim;
    const std::size_t fusion_in = fusion_width();
    add("vis_weight", gaussian(cfg_.raw_dim, D, 1.0 / std::sqrt(double(cfg_.raw_dim))));
    add("vis_bias", Tensor2D(1, D));
    add("q_embed", gaussian(cfg_.num_questions, D, 0.1));
    add("fusion_weight", gaussian(fusion_in, cfg_.hidden, 1.0 / std::sqrt(double(fusion_in))));
    add("fusion_bias", Tensor2D(1, cfg_.hidden));
    add("head_weight", gaussian(cfg_.hidden, cfg_.num_answers, 1.0 / std::sqrt(double(cfg_.hidden))));
    add("head_bias", Tensor2D(1, cfg_.num_answers));
    if (cfg_.use_ct) {
      const TrimParams neutral = TrimParams::neutral(trim_width(), cfg_.tau);
      add("trim_w", Tensor2D::row_vector(neutral.w));
      add("psi_scale", Tensor2D(1, 1, neutral.psi_scale));
      add("psi_bias", Tensor2D(1, 1, neutral.psi_bias));
    }
    const std::uint64_t bank_seed = cfg_.seed ^ 0x5eed0bacc0ffeeULL;
    if (cfg_.use_dafb) {
      bank_ = FeatureBank::init(cfg_.bank_size, D, cfg_.momentum, bank_seed);
    } else if (cfg_.use_ct) {
      global_ = FeatureBank::init(1, D, cfg_.momentum, bank_seed);
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }

  const Tensor2D& param(const std::string& name) const { return params_.at(index_of(name)).value; }
  Tensor2D& param(const std::string& name) { return params_.at(index_of(name)).value; }
  bool has_param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return true;
    return false;
  }

  /// DAFB when use_dafb, else nullptr.
  const FeatureBank* bank() const noexcept { return bank_ ? &*bank_ : nullptr; }
  FeatureBank* bank() noexcept { return bank_ ? &*bank_ : nullptr; }
  /// Running batch-global feature (K=1 bank) in the CT-without-DAFB arm.
  const FeatureBank* global_feature() const noexcept { return global_ ? &*global_ : nullptr; }

  /// The bank whose mean enters L_orth, if any.
  const FeatureBank* confounder_proxy() const noexcept {
    if (bank_) return &*bank_;
    if (global_) return &*global_;
    return nullptr;
  }

  /// Current trimming parameters (use_ct only).
  TrimParams trim_params() const {
    if (!cfg_.use_ct) throw ConfigError("trim_params: model has no trimming module");
    const Tensor2D& w = param("trim_w");
    return TrimParams{w.vec(), param("psi_scale")[0], param("psi_bias")[0], cfg_.tau};
  }

  ForwardResult forward(std::span<const ModelInput> batch) const {
    GradTape tape;
    Graph g = build(tape, batch, false);
    ForwardResult r;
    r.probs = tape.value(g.probs);
    r.features = tape.value(g.features);
    if (g.mask.valid()) r.mask = tape.value(g.mask);
    r.pooled = tape.value(g.pooled);
    return r;
  }

  /// Joint loss on a batch; fills gradients for every parameter when
  /// `with_grad` is set.
  LossResult loss(std::span<const ModelInput> batch, std::span<const std::uint32_t> answers, double lambda,
                  bool with_grad = true, LossTerms terms = LossTerms::kJoint) const {
    if (batch.empty()) throw ConfigError("loss: empty batch");
    if (answers.size() != batch.size()) {
      throw ConfigError("loss: " + std::to_string(batch.size()) + " inputs vs " +
                        std::to_string(answers.size()) + " answers");
    }
    GradTape tape;
    Graph g = build(tape, batch, with_grad);

    Tensor2D targets(batch.size(), cfg_.num_answers);
    for (std::size_t i = 0; i < answers.size(); ++i) {
      if (answers[i] >= cfg_.num_answers) {
        throw DataError("answer id " + std::to_string(answers[i]) + " out of range");
      }
      targets(i, answers[i]) = 1.0;
    }
    Var l_vqa = ad::bce_mean(tape, g.probs, std::move(targets));
    Var total = l_vqa;
    LossResult out;
    out.loss.lambda = lambda;
    out.loss.l_vqa = tape.value(l_vqa)[0];
    if (terms == LossTerms::kJoint) {
      Var l_orth = orthogonality(tape, g);
      total = ad::add_scaled(tape, l_vqa, l_orth, lambda);
      out.loss.l_orth = tape.value(l_orth)[0];
    }
    out.loss.l_total = tape.value(total)[0];
    out.features = tape.value(g.features);
    if (with_grad) {
      tape.backward(total);
      out.grads.reserve(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor2D* gr = tape.grad(g.params[i]);
        out.grads.push_back(gr ? *gr : Tensor2D(params_[i].value.rows(), params_[i].value.cols()));
      }
    }
    return out;
  }

  /// Folds a batch of pre-trim features into the memory: one nearest-
  /// prototype update per instance for the DAFB, one batch-global update for
  /// the running global feature.
  void update_memory(const Tensor2D& features, std::size_t regions_per_instance) {
    if (regions_per_instance == 0 || features.rows() % regions_per_instance != 0) {
      throw ConfigError("update_memory: feature rows not a multiple of regions per instance");
    }
    if (bank_) {
      const std::size_t n = features.rows() / regions_per_instance;
      std::vector<double> pooled(features.cols());
      for (std::size_t s = 0; s < n; ++s) {
        std::fill(pooled.begin(), pooled.end(), 0.0);
        for (std::size_t r = 0; r < regions_per_instance; ++r) {
          auto row = features.row(s * regions_per_instance + r);
          for (std::size_t j = 0; j < row.size(); ++j) pooled[j] += row[j];
        }
        for (double& v : pooled) v /= static_cast<double>(regions_per_instance);
        bank_->momentum_update(pooled);
      }
    }
    if (global_) {
      const Tensor2D* fp = &features;
      global_->momentum_update(batch_global_feature(std::span<const Tensor2D>(fp, 1)));
    }
  }

  /// Names, values and gradient slots for gradcheck.
  std::vector<ParamRef> param_refs(const std::vector<Tensor2D>& grads) {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < params_.size(); ++i)
      refs.push_back(ParamRef{params_[i].name, &params_[i].value, i < grads.size() ? &grads[i] : nullptr});
    return refs;
  }

  void save(std::ostream& os) const {
    io::write_magic(os, "LCTM");
    io::write_u32(os, kFormatVersion);
    io::write_u32(os, cfg_.raw_dim);
    io::write_u32(os, cfg_.feature_dim);
    io::write_u32(os, cfg_.hidden);
    io::write_u32(os, cfg_.num_questions);
    io::write_u32(os, cfg_.num_answers);
    io::write_u32(os, cfg_.bank_size);
    io::write_f64(os, cfg_.momentum);
    io::write_f64(os, cfg_.tau);
    io::write_u32(os, cfg_.use_dafb ? 1u : 0u);
    io::write_u32(os, cfg_.use_ct ? 1u : 0u);
    io::write_u64(os, cfg_.seed);
    io::write_u32(os, static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
      io::write_string(os, p.name);
      io::write_tensor(os, p.value);
    }
    io::write_u32(os, bank_ ? 1u : 0u);
    if (bank_) bank_->save(os);
    io::write_u32(os, global_ ? 1u : 0u);
    if (global_) global_->save(os);
  }

  static LctModel load(std::istream& is) {
    io::expect_magic(is, "LCTM");
    const std::uint32_t version = io::read_u32(is, "model version");
    if (version != kFormatVersion) {
      throw DataError("model checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kFormatVersion) + ")");
    }
    ModelConfig cfg;
    cfg.raw_dim = io::read_u32(is);
    cfg.feature_dim = io::read_u32(is);
    cfg.hidden = io::read_u32(is);
    cfg.num_questions = io::read_u32(is);
    cfg.num_answers = io::read_u32(is);
    cfg.bank_size = io::read_u32(is);
    cfg.momentum = io::read_f64(is);
    cfg.tau = io::read_f64(is);
    cfg.use_dafb = io::read_u32(is) != 0;
    cfg.use_ct = io::read_u32(is) != 0;
    cfg.seed = io::read_u64(is);
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw DataError(std::string("model checkpoint header: ") + e.what());
    }
    LctModel m(cfg);
    const std::uint32_t n = io::read_u32(is, "parameter count");
    if (n != m.params_.size()) {
      throw DataError("checkpoint has " + std::to_string(n) + " parameter sections, model expects " +
                      std::to_string(m.params_.size()));
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string name = io::read_string(is);
      Tensor2D value = io::read_tensor(is);
      Tensor2D& dst = m.param(name);
      if (!dst.same_shape(value)) {
        throw DataError("checkpoint section '" + name + "' has shape " + shape_str(value) + ", expected " +
                        shape_str(dst));
      }
      dst = std::move(value);
    }
    const bool has_bank = io::read_u32(is, "bank flag") != 0;
    if (has_bank != m.bank_.has_value()) throw DataError("checkpoint bank presence does not match flags");
    if (has_bank) m.bank_ = FeatureBank::load(is);
    const bool has_global = io::read_u32(is, "global flag") != 0;
    if (has_global != m.global_.has_value()) {
      throw DataError("checkpoint global-feature presence does not match flags");
    }
    if (has_global) m.global_ = FeatureBank::load(is);
    if (m.bank_ && (m.bank_->size() != cfg.bank_size || m.bank_->dim() != cfg.feature_dim)) {
      throw DataError("checkpoint bank shape does not match model config");
    }
    return m;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save(os);
    if (!os) throw std::runtime_error("failed writing " + path);
  }

  static LctModel load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load(is);
  }

  friend bool operator==(const LctModel& a, const LctModel& b) {
    if (!(a.cfg_ == b.cfg_) || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i)
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
    return a.bank_ == b.bank_ && a.global_ == b.global_;
  }

 private:
  struct Graph {
    std::vector<Var> params;
    Var features;  // pre-trim F
    Var mask;
    Var pooled;    // per-instance pooled (trimmed) features
    Var probs;
    std::size_t regions = 0;
  };

  std::size_t fusion_width() const { return (cfg_.use_dafb ? 3u : 2u) * cfg_.feature_dim; }
  std::size_t trim_width() const { return cfg_.use_dafb ? cfg_.bank_size : 2u; }

  void add(std::string name, Tensor2D value) { params_.push_back(Parameter{std::move(name), std::move(value)}); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw ConfigError("model has no parameter '" + name + "'");
  }

  Graph build(GradTape& tape, std::span<const ModelInput> batch, bool with_grad) const {
    if (batch.empty()) throw ConfigError("forward: empty batch");
    Graph g;
    for (const auto& p : params_) g.params.push_back(with_grad ? tape.parameter(p.value) : tape.constant(p.value));
    auto P = [&](const char* name) { return g.params[index_of(name)]; };

    const std::size_t N = batch.front().regions->rows();
    g.regions = N;
    Tensor2D stacked(batch.size() * N, cfg_.raw_dim);
    std::vector<std::size_t> qids;
    qids.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Tensor2D& x = *batch[b].regions;
      if (x.rows() != N || x.cols() != cfg_.raw_dim) {
        throw DataError("forward: instance " + std::to_string(b) + " has shape " + shape_str(x) +
                        ", expected " + std::to_string(N) + "x" + std::to_string(cfg_.raw_dim));
      }
      std::copy(x.data().begin(), x.data().end(), stacked.row(b * N).begin());
      if (batch[b].question_id >= cfg_.num_questions) {
        throw DataError("forward: unknown question id " + std::to_string(batch[b].question_id));
      }
      qids.push_back(batch[b].question_id);
    }

    Var x = tape.constant(std::move(stacked));
    g.features = ad::add_row(tape, ad::matmul(tape, x, P("vis_weight")), P("vis_bias"));

    Var bank_protos{};
    Var bank_scores{};
    if (cfg_.use_dafb) bank_protos = tape.constant(bank_->prototypes());

    Var trimmed = g.features;
    if (cfg_.use_ct) {
      if (cfg_.use_dafb) {
        TrimVars tv = trim_on_tape(tape, g.features, bank_protos, P("trim_w"), P("psi_scale"), P("psi_bias"),
                                   cfg_.tau);
        bank_scores = tv.scores;
        g.mask = tv.mask;
        trimmed = tv.trimmed;
      } else {
        // Prototype set {own pooled feature, 0}: S_i0 = sigmoid(F_i . f_avg / tau).
        Var centers = ad::segment_mean(tape, g.features, N);
        Var logits = ad::concat_cols(
            tape, {ad::segment_dot(tape, g.features, centers, N), tape.constant(Tensor2D(batch.size() * N, 1))});
        Var scores = ad::softmax_rows(tape, logits, cfg_.tau);
        Var agg = ad::prototype_aggregate(tape, scores, P("trim_w"));
        Var gate = ad::sigmoid(tape, ad::affine_scalar(tape, agg, P("psi_scale"), P("psi_bias")));
        g.mask = ad::one_minus(tape, gate);
        trimmed = ad::residual_gate(tape, g.features, g.mask);
      }
    }

    g.pooled = ad::segment_mean(tape, trimmed, N);
    std::vector<Var> parts{g.pooled};
    if (cfg_.use_dafb) {
      if (!bank_scores.valid()) {
        bank_scores = ad::softmax_rows(tape, ad::matmul_nt(tape, g.features, bank_protos), cfg_.tau);
      }
      Var assignment = ad::segment_mean(tape, bank_scores, N);  // B x K
      parts.push_back(ad::matmul(tape, assignment, bank_protos));
    }
    parts.push_back(ad::gather_rows(tape, P("q_embed"), std::move(qids)));

    Var fused = ad::concat_cols(tape, std::move(parts));
    Var hidden = ad::tanh(tape, ad::add_row(tape, ad::matmul(tape, fused, P("fusion_weight")), P("fusion_bias")));
    Var logits = ad::add_row(tape, ad::matmul(tape, hidden, P("head_weight")), P("head_bias"));
    g.probs = ad::sigmoid(tape, logits);
    return g;
  }

  Var orthogonality(GradTape& tape, const Graph& g) const {
    const FeatureBank* proxy = confounder_proxy();
    if (proxy == nullptr) return tape.constant(Tensor2D(1, 1, 0.0));
    Var f_avg = ad::mean_rows(tape, g.pooled);
    Var b_avg = tape.constant(Tensor2D::row_vector(proxy->average()));
    return ad::squared_cosine(tape, f_avg, b_avg);
  }

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::optional<FeatureBank> bank_;
  std::optional<FeatureBank> global_;
};

}  // namespace lct
