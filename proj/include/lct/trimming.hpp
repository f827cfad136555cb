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

// Soft trimming of region features against a prototype bank.
//
//   S = softmax_k(F b_k^T / tau)                 relevance of region i to prototype k
//   M_i = 1 - sigmoid(psi_scale * sum_k S_ik w_k + psi_bias)
//   F_hat_i = F_i * M_i + F_i
//
// Regions that look like a heavily weighted prototype get a mask near 0 and
// pass through the residual unchanged; distinctive regions get a mask near 1
// and are amplified up to 2x. The bank only enters as a constant.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "lct/autodiff.hpp"
#include "lct/feature_bank.hpp"
#include "lct/tensor.hpp"

namespace lct {

struct TrimParams {
  std::vector<double> w;  // one weight per prototype
  double psi_scale = 1.0;
  double psi_bias = 0.0;
  double tau = 0.07;

  /// Neutral start: w = 0, identity psi, so every mask entry is exactly 0.5.
  static TrimParams neutral(std::size_t K, double tau) {
    return TrimParams{std::vector<double>(K, 0.0), 1.0, 0.0, tau};
  }
};

struct TrimOutput {
  Tensor2D scores;           // N x K
  std::vector<double> mask;  // N
  Tensor2D trimmed;          // N x D
};

inline Tensor2D relevance_scores(const Tensor2D& features, const Tensor2D& prototypes, double tau) {
  if (features.cols() != prototypes.cols()) {
    throw ConfigError("relevance_scores: feature dim " + std::to_string(features.cols()) +
                      " vs prototype dim " + std::to_string(prototypes.cols()));
  }
  return softmax_rows(matmul_nt(features, prototypes), tau);
}

inline Tensor2D relevance_scores(const Tensor2D& features, const FeatureBank& bank, double tau) {
  return relevance_scores(features, bank.prototypes(), tau);
}

inline std::vector<double> soft_mask(const Tensor2D& scores, const TrimParams& params) {
  if (scores.cols() != params.w.size()) {
    throw ConfigError("soft_mask: " + std::to_string(scores.cols()) + " score columns vs " +
                      std::to_string(params.w.size()) + " prototype weights");
  }
  const Tensor2D agg = prototype_aggregate(scores, Tensor2D::row_vector(params.w));
  std::vector<double> mask(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) mask[i] = 1.0 - sigmoid(params.psi_scale * agg[i] + params.psi_bias);
  return mask;
}

inline Tensor2D apply_trim(const Tensor2D& features, std::span<const double> mask) {
  if (mask.size() != features.rows()) {
    throw ConfigError("apply_trim: mask length " + std::to_string(mask.size()) + " vs " +
                      std::to_string(features.rows()) + " regions");
  }
  Tensor2D out(features.rows(), features.cols());
  for (std::size_t i = 0; i < features.rows(); ++i)
    for (std::size_t j = 0; j < features.cols(); ++j)
      out(i, j) = features(i, j) * mask[i] + features(i, j);
  return out;
}

inline TrimOutput trim_forward(const Tensor2D& features, const Tensor2D& prototypes,
                               const TrimParams& params) {
  TrimOutput out;
  out.scores = relevance_scores(features, prototypes, params.tau);
  out.mask = soft_mask(out.scores, params);
  out.trimmed = apply_trim(features, out.mask);
  return out;
}

inline TrimOutput trim_forward(const Tensor2D& features, const FeatureBank& bank,
                               const TrimParams& params) {
  return trim_forward(features, bank.prototypes(), params);
}

/// Tape handles for the differentiable trimming path.
struct TrimVars {
  Var scores;
  Var mask;
  Var trimmed;
};

/// Records the three trimming steps on `tape`. `prototypes` should be a
/// constant node; `w` is 1 x K, `psi_scale` and `psi_bias` are 1 x 1.
inline TrimVars trim_on_tape(GradTape& tape, Var features, Var prototypes, Var w, Var psi_scale,
                             Var psi_bias, double tau) {
  TrimVars v;
  Var logits = ad::matmul_nt(tape, features, prototypes);
  v.scores = ad::softmax_rows(tape, logits, tau);
  Var agg = ad::prototype_aggregate(tape, v.scores, w);  // N x 1
  Var gate = ad::sigmoid(tape, ad::affine_scalar(tape, agg, psi_scale, psi_bias));
  v.mask = ad::one_minus(tape, gate);
  v.trimmed = ad::residual_gate(tape, features, v.mask);
  return v;
}

}  // namespace lct
