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

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lct/tensor.hpp"

namespace lct {

/// A parameter tensor plus the slot its analytic gradient is written to.
struct ParamRef {
  std::string name;
  Tensor2D* value = nullptr;
  const Tensor2D* grad = nullptr;
};

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& e : entries) {
      os << e.name << ": n=" << e.count << " max_rel_err=" << e.max_rel_error
         << " max|g|=" << e.max_abs_analytic << "\n";
    }
    os << "overall max_rel_err=" << max_rel_error << "\n";
    return os.str();
  }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients with central differences.
///
/// `closure(bool with_grad)` returns the scalar loss at the current parameter
/// values; when `with_grad` is true it must also refresh every ParamRef::grad.
/// Each parameter entry is perturbed by +-h in place and restored afterwards.
template <class Closure>
  requires std::invocable<Closure&, bool>
GradcheckReport gradcheck(Closure&& closure, std::span<const ParamRef> params, double h = 1e-5) {
  auto eval = [&](bool with_grad) {
    const double v = closure(with_grad);
    if (!std::isfinite(v)) {
      throw std::runtime_error("gradcheck: non-finite loss " + std::to_string(v));
    }
    return v;
  };

  eval(true);
  // Snapshot analytic gradients before the probing evaluations overwrite them.
  std::vector<Tensor2D> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (p.grad == nullptr || !p.grad->same_shape(*p.value)) {
      throw ConfigError("gradcheck: parameter '" + p.name + "' has no gradient of matching shape");
    }
    analytic.push_back(*p.grad);
  }

  GradcheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    GradcheckEntry entry{p.name, p.value->size(), 0.0, 0.0};
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double orig = (*p.value)[i];
      (*p.value)[i] = orig + h;
      const double up = eval(false);
      (*p.value)[i] = orig - h;
      const double down = eval(false);
      (*p.value)[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lct
