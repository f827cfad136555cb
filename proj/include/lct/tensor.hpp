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
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lct {

/// Raised for invalid shapes, hyperparameters or config values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or inconsistent data (files, ids, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;

  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ConfigError("Tensor2D: buffer length " + std::to_string(data_.size()) +
                        " does not match shape " + std::to_string(rows_) + "x" +
                        std::to_string(cols_));
    }
  }

  Tensor2D(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ConfigError("Tensor2D: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor2D row_vector(std::span<const double> values) {
    return Tensor2D(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  static Tensor2D column_vector(std::span<const double> values) {
    return Tensor2D(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor2D& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor2D& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

namespace detail {
inline void require(bool ok, const char* op, const Tensor2D& a, const Tensor2D& b) {
  if (!ok) {
    throw ConfigError(std::string(op) + ": dimension mismatch " + shape_str(a) + " vs " +
                      shape_str(b));
  }
}
}  // namespace detail

/// a (r x n) * b (n x c)
inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  detail::require(a.cols() == b.rows(), "matmul", a, b);
  Tensor2D out(a.rows(), b.cols());
  const std::size_t n = a.cols(), c = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data().data() + i * c;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.data().data() + k * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

/// a (r x n) * b^T where b is (c x n)
inline Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt", a, b);
  Tensor2D out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.data().data() + i * n;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.data().data() + j * n;
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// a^T * b where a is (n x r) and b is (n x c)
inline Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
  detail::require(a.rows() == b.rows(), "matmul_tn", a, b);
  Tensor2D out(a.cols(), b.cols());
  const std::size_t r = a.cols(), c = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.data().data() + k * r;
    const double* br = b.data().data() + k * c;
    for (std::size_t i = 0; i < r; ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* o = out.data().data() + i * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

inline Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// Sum of `values` taken in ascending order, so any permutation of the input
/// gives the same bits. `scratch` is reused between calls.
inline double sorted_sum(std::span<const double> values, std::vector<double>& scratch) {
  scratch.assign(values.begin(), values.end());
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double v : scratch) s += v;
  return s;
}

/// Row-wise softmax of x / temperature. The division happens first, then the
/// row maximum is subtracted before exponentiation. The normaliser is a
/// sorted_sum, so permuting columns permutes the output bitwise.
inline Tensor2D softmax_rows(const Tensor2D& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax_rows: temperature must be > 0, got " + std::to_string(temperature));
  }
  Tensor2D out(x.rows(), x.cols());
  std::vector<double> scratch;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = in[j] / temperature;
      mx = std::max(mx, o[j]);
    }
    for (double& v : o) v = std::exp(v - mx);
    const double sum = sorted_sum(o, scratch);
    for (double& v : o) v /= sum;
  }
  return out;
}

/// agg_i = sum_k scores_ik * w_k (scores N x K, w 1 x K), summed with
/// sorted_sum so jointly permuting score columns and w is bitwise neutral.
inline Tensor2D prototype_aggregate(const Tensor2D& scores, const Tensor2D& w) {
  if (w.rows() != 1 || w.cols() != scores.cols()) {
    throw ConfigError("prototype_aggregate: scores " + shape_str(scores) + " vs weights " + shape_str(w));
  }
  Tensor2D out(scores.rows(), 1);
  std::vector<double> terms(scores.cols()), scratch;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto r = scores.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) terms[k] = r[k] * w[k];
    out[i] = sorted_sum(terms, scratch);
  }
  return out;
}

inline double sigmoid(double x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor2D sigmoid(const Tensor2D& x) {
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

/// Mean over rows, returned as a plain vector of length cols.
inline std::vector<double> column_mean(const Tensor2D& x) {
  std::vector<double> mean(x.cols(), 0.0);
  if (x.rows() == 0) return mean;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += r[j];
  }
  for (double& v : mean) v /= static_cast<double>(x.rows());
  return mean;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius_distance(const Tensor2D& a, const Tensor2D& b) {
  detail::require(a.same_shape(b), "frobenius_distance", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace lct
