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
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lct/binary_io.hpp"
#include "lct/tensor.hpp"

namespace lct {

/// K x D prototype memory maintained by exponential moving averages.
///
/// The prototypes are a buffer, not a parameter: readers get a const view
/// and nothing on a GradTape can write into it. Only momentum_update()
/// mutates the bank, and each call moves exactly one prototype row (the one
/// nearest to the incoming feature).
class FeatureBank {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  FeatureBank() = default;

  FeatureBank(Tensor2D prototypes, double momentum, std::uint64_t update_count = 0)
      : prototypes_(std::move(prototypes)), momentum_(momentum), update_count_(update_count) {
    if (prototypes_.rows() == 0 || prototypes_.cols() == 0) {
      throw ConfigError("FeatureBank: K and D must be >= 1, got " + shape_str(prototypes_));
    }
    if (!(momentum_ >= 0.0 && momentum_ < 1.0)) {
      throw ConfigError("FeatureBank: momentum must lie in [0,1), got " + std::to_string(momentum_));
    }
    if (!prototypes_.all_finite()) throw DataError("FeatureBank: non-finite prototype entries");
  }

  /// Gaussian prototypes with standard deviation 1/sqrt(D).
  static FeatureBank init(std::size_t K, std::size_t D, double momentum, std::uint64_t seed) {
    if (K == 0 || D == 0) {
      throw ConfigError("init_bank: K and D must be >= 1 (K=" + std::to_string(K) +
                        ", D=" + std::to_string(D) + ")");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(D)));
    Tensor2D protos(K, D);
    for (double& v : protos.data()) v = normal(rng);
    return FeatureBank(std::move(protos), momentum, 0);
  }

  std::size_t size() const noexcept { return prototypes_.rows(); }
  std::size_t dim() const noexcept { return prototypes_.cols(); }
  double momentum() const noexcept { return momentum_; }
  std::uint64_t update_count() const noexcept { return update_count_; }
  const Tensor2D& prototypes() const noexcept { return prototypes_; }

  /// Index of the prototype nearest to `f` in Euclidean distance; ties go to
  /// the lowest index.
  std::size_t nearest(std::span<const double> f) const {
    check_dim(f);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < size(); ++k) {
      auto b = prototypes_.row(k);
      double d = 0.0;
      for (std::size_t j = 0; j < f.size(); ++j) d += (b[j] - f[j]) * (b[j] - f[j]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }

  /// b <- m*b + (1-m)*f on the nearest prototype. Returns the updated row.
  std::size_t momentum_update(std::span<const double> f) {
    check_dim(f);
    for (double v : f) {
      if (!std::isfinite(v)) throw DataError("momentum_update: non-finite feature");
    }
    const std::size_t k = nearest(f);
    auto b = prototypes_.row(k);
    for (std::size_t j = 0; j < f.size(); ++j) b[j] = momentum_ * b[j] + (1.0 - momentum_) * f[j];
    ++update_count_;
    return k;
  }

  /// Mean over the K prototype rows.
  std::vector<double> average() const { return column_mean(prototypes_); }

  void save(std::ostream& os) const {
    io::write_magic(os, "DAFB");
    io::write_u32(os, kFormatVersion);
    io::write_u32(os, static_cast<std::uint32_t>(size()));
    io::write_u32(os, static_cast<std::uint32_t>(dim()));
    io::write_f64(os, momentum_);
    io::write_u64(os, update_count_);
    for (double v : prototypes_.data()) io::write_f64(os, v);
  }

  static FeatureBank load(std::istream& is) {
    io::expect_magic(is, "DAFB");
    const std::uint32_t version = io::read_u32(is, "bank version");
    if (version != kFormatVersion) {
      throw DataError("bank checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kFormatVersion) + ")");
    }
    const std::uint32_t K = io::read_u32(is, "bank K");
    const std::uint32_t D = io::read_u32(is, "bank D");
    if (static_cast<std::uint64_t>(K) * D > (1ull << 26)) {
      throw DataError("bank shape " + std::to_string(K) + "x" + std::to_string(D) + " is implausible");
    }
    const double m = io::read_f64(is, "bank momentum");
    const std::uint64_t count = io::read_u64(is, "bank update count");
    Tensor2D protos(K, D);
    for (double& v : protos.data()) v = io::read_f64(is, "bank prototypes");
    return FeatureBank(std::move(protos), m, count);
  }

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;

 private:
  void check_dim(std::span<const double> f) const {
    if (f.size() != dim()) {
      throw ConfigError("FeatureBank: feature dimension " + std::to_string(f.size()) +
                        " does not match bank dimension " + std::to_string(dim()));
    }
  }

  Tensor2D prototypes_;
  double momentum_ = 0.99;
  std::uint64_t update_count_ = 0;
};

/// Mean over every region of every instance in the batch.
inline std::vector<double> batch_global_feature(std::span<const Tensor2D> batch) {
  if (batch.empty()) throw ConfigError("batch_global_feature: empty batch");
  const std::size_t D = batch.front().cols();
  std::vector<double> sum(D, 0.0);
  std::size_t count = 0;
  for (const auto& fv : batch) {
    if (fv.cols() != D) {
      throw ConfigError("batch_global_feature: inconsistent feature dimension " +
                        std::to_string(fv.cols()) + " vs " + std::to_string(D));
    }
    for (std::size_t i = 0; i < fv.rows(); ++i) {
      auto r = fv.row(i);
      for (std::size_t j = 0; j < D; ++j) sum[j] += r[j];
    }
    count += fv.rows();
  }
  if (count == 0) throw ConfigError("batch_global_feature: batch has no regions");
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

}  // namespace lct
