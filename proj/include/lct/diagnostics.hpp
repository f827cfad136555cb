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
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lct/gradcheck.hpp"
#include "lct/model.hpp"
#include "lct/synthgen.hpp"

namespace lct {

/// Toy problem for checking the analytic gradients of the whole network.
struct GradcheckShape {
  std::uint32_t instances = 4;
  std::uint32_t regions = 5;      // N
  std::uint32_t bank_size = 4;    // K
  std::uint32_t feature_dim = 8;  // D
  std::uint32_t raw_dim = 8;
  std::uint32_t hidden = 8;
  double tau = 0.07;
  double lambda = 0.1;
  bool use_dafb = true;
  bool use_ct = true;
  std::uint64_t seed = 1;
};

/// Builds a model and batch of the given shape, moves every parameter (and
/// the bank) off its initial value so no gradient is trivially zero, then
/// compares analytic and central-difference gradients of the joint loss.
inline GradcheckReport model_gradcheck(const GradcheckShape& s, double h = 1e-5) {
  GeneratorConfig gen;
  gen.regions = s.regions;
  gen.raw_dim = s.raw_dim;
  gen.n_train = s.instances;
  gen.seed = s.seed;
  gen.validate();
  const Prototypes protos = make_prototypes(gen);
  const Dataset data = generate_split(gen, protos, Split::kTrain);

  ModelConfig mc;
  mc.raw_dim = s.raw_dim;
  mc.feature_dim = s.feature_dim;
  mc.hidden = s.hidden;
  mc.num_answers = gen.num_answers();
  mc.bank_size = s.bank_size;
  mc.momentum = 0.5;
  mc.tau = s.tau;
  mc.use_dafb = s.use_dafb;
  mc.use_ct = s.use_ct;
  mc.seed = s.seed;
  LctModel model(mc);

  std::mt19937_64 rng(s.seed + 17);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& p : model.parameters())
    for (double& v : p.value.data()) v += jitter(rng);

  std::vector<ModelInput> inputs;
  std::vector<std::uint32_t> answers;
  for (std::size_t i = 0; i < data.size(); ++i) {
    inputs.push_back(data.input(i));
    answers.push_back(data.answer(i));
  }
  // A few memory updates pull prototypes toward real features so the
  // relevance softmax is not saturated on one entry.
  for (int k = 0; k < 3; ++k) model.update_memory(model.forward(inputs).features, s.regions);

  std::vector<Tensor2D> grads;
  auto closure = [&](bool with_grad) {
    LossResult r = model.loss(inputs, answers, s.lambda, with_grad);
    if (with_grad) {
      if (grads.empty()) grads.resize(r.grads.size());
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = r.grads[i];
    }
    return r.loss.l_total;
  };
  closure(true);
  const std::vector<ParamRef> refs = model.param_refs(grads);
  return gradcheck(closure, refs, h);
}

/// Per-region trimming mask of one instance. rows x cols is the square-ish
/// layout used for the heatmap.
struct MaskDump {
  std::vector<double> mask;  // length N
  std::size_t rows = 0;
  std::size_t cols = 0;
};

inline MaskDump dump_mask(const LctModel& model, const Dataset& data, std::size_t index) {
  if (!model.config().use_ct) throw ConfigError("dump-mask: checkpoint has no trimming module (use_ct=false)");
  if (index >= data.size()) {
    throw DataError("instance " + std::to_string(index) + " out of range (dataset has " +
                    std::to_string(data.size()) + ")");
  }
  const ModelInput in = data.input(index);
  const ForwardResult fr = model.forward(std::span<const ModelInput>(&in, 1));
  MaskDump d;
  d.mask = fr.mask->vec();
  const std::size_t n = d.mask.size();
  d.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  d.rows = (n + d.cols - 1) / d.cols;
  return d;
}

/// One line per region: "<index> <mask>".
inline std::string mask_grid_text(const MaskDump& d) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < d.mask.size(); ++i) os << i << ' ' << d.mask[i] << '\n';
  return os.str();
}

/// Plain (P2) PGM; each region is a `cell` x `cell` block, mask 1 -> white.
inline void write_mask_pgm(std::ostream& os, const MaskDump& d, std::size_t cell = 16) {
  os << "P2\n" << d.cols * cell << ' ' << d.rows * cell << "\n255\n";
  for (std::size_t y = 0; y < d.rows * cell; ++y) {
    for (std::size_t x = 0; x < d.cols * cell; ++x) {
      const std::size_t i = (y / cell) * d.cols + x / cell;
      const int v = i < d.mask.size() ? static_cast<int>(std::lround(255.0 * d.mask[i])) : 0;
      os << v << (x + 1 == d.cols * cell ? '\n' : ' ');
    }
  }
}

}  // namespace lct
