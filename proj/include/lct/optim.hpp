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

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lct/tensor.hpp"

namespace lct {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Thrown when a gradient entry is NaN or infinite. Parameters are left
/// untouched.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with decoupled weight decay:
///   theta <- theta * (1 - lr*wd)
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  /// One update over parallel lists of parameters and gradients.
  void step(std::span<Tensor2D* const> params, std::span<const Tensor2D> grads,
            std::span<const std::string> names = {}) {
    if (params.size() != grads.size()) {
      throw ConfigError("AdamW: " + std::to_string(params.size()) + " parameters vs " +
                        std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->same_shape(grads[i])) {
        throw ConfigError("AdamW: gradient shape " + shape_str(grads[i]) + " vs parameter " +
                          shape_str(*params[i]));
      }
      if (!grads[i].all_finite()) {
        throw NonFiniteGradient("non-finite gradient for parameter '" +
                                (i < names.size() ? names[i] : std::to_string(i)) + "'");
      }
    }
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    } else if (m_.size() != params.size()) {
      throw ConfigError("AdamW: parameter list changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->data();
      auto g = grads[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] *= decay;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        p[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
  std::uint64_t t_ = 0;
};

}  // namespace lct
