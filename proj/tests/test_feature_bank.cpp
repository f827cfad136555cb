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

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "lct/feature_bank.hpp"
#include "test_util.hpp"

namespace lct {
namespace {

using testing::random_tensor;

TEST(FeatureBankInit, SameSeedSameBank) {
  EXPECT_EQ(FeatureBank::init(256, 64, 0.99, 42), FeatureBank::init(256, 64, 0.99, 42));
  EXPECT_FALSE(FeatureBank::init(256, 64, 0.99, 42) == FeatureBank::init(256, 64, 0.99, 43));
}

TEST(FeatureBankInit, MinimalShape) {
  const FeatureBank b = FeatureBank::init(1, 1, 0.99, 3);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(b.dim(), 1u);
  EXPECT_TRUE(b.prototypes().all_finite());
  EXPECT_EQ(b.update_count(), 0u);
}

TEST(FeatureBankInit, EmpiricalStdNearInverseSqrtD) {
  const FeatureBank b = FeatureBank::init(256, 64, 0.99, 5);
  double sum = 0.0, sq = 0.0;
  for (double v : b.prototypes().data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(b.prototypes().size());
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(stddev, 1.0 / 8.0, 0.2 / 8.0);
}

TEST(FeatureBankInit, RejectsBadArguments) {
  EXPECT_THROW(FeatureBank::init(0, 4, 0.99, 1), ConfigError);
  EXPECT_THROW(FeatureBank::init(4, 0, 0.99, 1), ConfigError);
  EXPECT_THROW(FeatureBank::init(4, 4, 1.0, 1), ConfigError);
  EXPECT_THROW(FeatureBank::init(4, 4, -0.1, 1), ConfigError);
}

TEST(MomentumUpdate, SinglePrototypeArithmetic) {
  FeatureBank b(Tensor2D{{1, 0}}, 0.99);
  const std::vector<double> f{0, 1};
  EXPECT_EQ(b.momentum_update(f), 0u);
  EXPECT_NEAR(b.prototypes()(0, 0), 0.99, 1e-15);
  EXPECT_NEAR(b.prototypes()(0, 1), 0.01, 1e-15);
  EXPECT_EQ(b.update_count(), 1u);
}

TEST(MomentumUpdate, FixedPoint) {
  for (double m : {0.0, 0.3, 0.99}) {
    FeatureBank b(Tensor2D{{0.25, -1.5, 3.0}}, m);
    const std::vector<double> f{0.25, -1.5, 3.0};
    b.momentum_update(f);
    EXPECT_NEAR(b.prototypes().row(0)[0], 0.25, 1e-15);
    EXPECT_NEAR(b.prototypes().row(0)[1], -1.5, 1e-15);
    EXPECT_NEAR(b.prototypes().row(0)[2], 3.0, 1e-15);
  }
}

TEST(MomentumUpdate, GeometricContraction) {
  const double m = 0.99;
  FeatureBank b(Tensor2D{{2.0, -1.0, 0.5}}, m);
  const std::vector<double> f{0.1, 0.7, -0.3};
  auto dist = [&] {
    double s = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) s += std::pow(b.prototypes()(0, j) - f[j], 2);
    return std::sqrt(s);
  };
  const double d0 = dist();
  for (int t = 1; t <= 10; ++t) {
    b.momentum_update(f);
    EXPECT_NEAR(dist(), std::pow(m, t) * d0, 1e-9) << "step " << t;
  }
}

TEST(MomentumUpdate, ExactlyOneRowChanges) {
  std::mt19937_64 rng(9);
  FeatureBank b = FeatureBank::init(16, 8, 0.9, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor2D before = b.prototypes();
    const Tensor2D f = random_tensor(1, 8, rng);
    const std::size_t k = b.momentum_update(f.row(0));
    std::size_t changed = 0;
    for (std::size_t r = 0; r < b.size(); ++r) {
      bool same = true;
      for (std::size_t j = 0; j < b.dim(); ++j) same = same && before(r, j) == b.prototypes()(r, j);
      if (!same) {
        ++changed;
        EXPECT_EQ(r, k);
      }
    }
    EXPECT_EQ(changed, 1u);
  }
}

TEST(MomentumUpdate, NearestWithLowestIndexOnTies) {
  FeatureBank b(Tensor2D{{1, 0}, {-1, 0}, {1, 0}}, 0.5);
  const std::vector<double> origin{0, 0};
  EXPECT_EQ(b.nearest(origin), 0u);
  const std::vector<double> right{0.9, 0.1};
  EXPECT_EQ(b.nearest(right), 0u);
  const std::vector<double> left{-2, 0};
  EXPECT_EQ(b.nearest(left), 1u);
}

TEST(MomentumUpdate, RejectsBadInput) {
  FeatureBank b = FeatureBank::init(4, 3, 0.9, 1);
  const std::vector<double> wrong_dim{1, 2};
  EXPECT_THROW(b.momentum_update(wrong_dim), ConfigError);
  const std::vector<double> nan{1, std::nan(""), 0};
  EXPECT_THROW(b.momentum_update(nan), DataError);
  EXPECT_EQ(b.update_count(), 0u);
}

TEST(BankAverage, Cases) {
  const FeatureBank same(Tensor2D{{1, 2}, {1, 2}, {1, 2}}, 0.9);
  EXPECT_EQ(same.average(), (std::vector<double>{1, 2}));
  const FeatureBank two(Tensor2D{{1, 4}, {3, -2}}, 0.9);
  EXPECT_EQ(two.average(), (std::vector<double>{2, 1}));
}

TEST(BankAverage, MatchesColumnOracle) {
  const FeatureBank b = FeatureBank::init(37, 5, 0.9, 11);
  const std::vector<double> avg = b.average();
  for (std::size_t j = 0; j < 5; ++j) {
    long double s = 0.0L;
    for (std::size_t k = 0; k < 37; ++k) s += b.prototypes()(k, j);
    EXPECT_NEAR(avg[j], static_cast<double>(s / 37.0L), 1e-14);
  }
}

TEST(BatchGlobalFeature, ConstantRegions) {
  const std::vector<Tensor2D> batch{Tensor2D{{1, -2}, {1, -2}, {1, -2}}};
  EXPECT_EQ(batch_global_feature(batch), (std::vector<double>{1, -2}));
}

TEST(BatchGlobalFeature, TwoInstancesAverage) {
  const std::vector<Tensor2D> batch{Tensor2D{{0, 0}, {2, 2}}, Tensor2D{{4, 0}, {4, 2}}};
  const std::vector<double> g = batch_global_feature(batch);
  EXPECT_DOUBLE_EQ(g[0], (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(g[1], (1.0 + 1.0) / 2.0);
}

TEST(BatchGlobalFeature, MatchesRestackedMean) {
  std::mt19937_64 rng(13);
  std::vector<Tensor2D> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(random_tensor(4 + i, 7, rng));
  std::size_t total_rows = 0;
  for (const auto& b : batch) total_rows += b.rows();
  Tensor2D stacked(total_rows, 7);
  std::size_t r = 0;
  for (const auto& b : batch)
    for (std::size_t i = 0; i < b.rows(); ++i, ++r)
      for (std::size_t j = 0; j < 7; ++j) stacked(r, j) = b(i, j);
  const std::vector<double> oracle = column_mean(stacked);
  const std::vector<double> g = batch_global_feature(batch);
  for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(g[j], oracle[j], 1e-12);
}

TEST(BatchGlobalFeature, Errors) {
  EXPECT_THROW(batch_global_feature(std::vector<Tensor2D>{}), ConfigError);
  EXPECT_THROW(batch_global_feature(std::vector<Tensor2D>{Tensor2D(2, 3), Tensor2D(2, 4)}), ConfigError);
}

TEST(BankCheckpoint, RoundTripIsByteIdentical) {
  FeatureBank b = FeatureBank::init(8, 5, 0.97, 3);
  const std::vector<double> f{1, 2, 3, 4, 5};
  b.momentum_update(f);
  const std::string first = testing::bytes_of([&](std::ostream& os) { b.save(os); });
  std::istringstream is(first);
  const FeatureBank loaded = FeatureBank::load(is);
  EXPECT_EQ(loaded, b);
  EXPECT_EQ(testing::bytes_of([&](std::ostream& os) { loaded.save(os); }), first);
}

TEST(BankCheckpoint, HeaderLayout) {
  const FeatureBank b(Tensor2D{{1.0, 2.0}}, 0.5, 7);
  const std::string bytes = testing::bytes_of([&](std::ostream& os) { b.save(os); });
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 8 + 8 + 2 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "DAFB");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // K
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2u); // D
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 7u); // update_count
}

TEST(BankCheckpoint, RejectsCorruptInput) {
  const FeatureBank b = FeatureBank::init(2, 2, 0.5, 1);
  std::string bytes = testing::bytes_of([&](std::ostream& os) { b.save(os); });
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad);
    EXPECT_THROW(FeatureBank::load(is), DataError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;
    std::istringstream is(bad);
    EXPECT_THROW(FeatureBank::load(is), DataError);
  }
  {
    std::istringstream is(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(FeatureBank::load(is), DataError);
  }
}

}  // namespace
}  // namespace lct
