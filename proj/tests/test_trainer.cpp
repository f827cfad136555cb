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

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "lct/optim.hpp"
#include "lct/trainer.hpp"

namespace lct {
namespace {

TEST(AdamW, ZeroGradientWithoutDecayIsNoOp) {
  AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  Tensor2D p{{1.5, -2.0}};
  const Tensor2D before = p;
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D(1, 2)};
  for (int i = 0; i < 5; ++i) opt.step(params, grads);
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(AdamW, FirstStepMovesByLearningRateAgainstTheSign) {
  const double lr = 1e-3;
  AdamW opt(AdamWConfig{lr, 0.9, 0.999, 1e-8, 0.0});
  Tensor2D p{{0.5, -0.5, 2.0}};
  const Tensor2D before = p;
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D{{3.0, -0.01, 1e-3}}};
  opt.step(params, grads);
  for (std::size_t j = 0; j < 3; ++j) {
    const double g = grads[0][j];
    EXPECT_NEAR(p[j] - before[j], -lr * g / (std::abs(g) + 1e-8), 1e-12);
  }
}

TEST(AdamW, DecoupledDecayShrinksBeforeTheUpdate) {
  const double lr = 0.01, wd = 0.5;
  AdamW opt(AdamWConfig{lr, 0.9, 0.999, 1e-8, wd});
  Tensor2D p{{4.0}};
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D{{2.0}}};
  opt.step(params, grads);
  EXPECT_NEAR(p[0], 4.0 * (1.0 - lr * wd) - lr * 2.0 / (2.0 + 1e-8), 1e-12);
}

TEST(AdamW, MinimisesAQuadratic) {
  AdamW opt(AdamWConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
  Tensor2D x{{3.0}};
  Tensor2D* params[] = {&x};
  for (int i = 0; i < 200; ++i) {
    const Tensor2D g[] = {Tensor2D{{2.0 * x[0]}}};
    opt.step(params, g);
  }
  EXPECT_LT(std::abs(x[0]), 0.1);
}

TEST(AdamW, StepOpposesGradientSign) {
  AdamW opt(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  Tensor2D p(1, 6);
  const Tensor2D before = p;
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D{{1, -2, 0.5, -1e-4, 7, -3}}};
  opt.step(params, grads);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_LT((p[j] - before[j]) * grads[0][j], 0.0);
}

TEST(AdamW, NonFiniteGradientThrowsAndLeavesParameters) {
  AdamW opt;
  Tensor2D p{{1.0, 2.0}};
  const Tensor2D before = p;
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D{{0.1, std::numeric_limits<double>::quiet_NaN()}}};
  const std::string names[] = {"w"};
  EXPECT_THROW(opt.step(params, grads, names), NonFiniteGradient);
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(AdamW, ShapeMismatch) {
  AdamW opt;
  Tensor2D p(1, 2);
  Tensor2D* params[] = {&p};
  const Tensor2D grads[] = {Tensor2D(2, 1)};
  EXPECT_THROW(opt.step(params, grads), ConfigError);
}

struct Tiny {
  GeneratorConfig gen;
  SplitSet splits;
  TrainConfig cfg;

  Tiny() {
    gen.n_train = 96;
    gen.n_iid_test = 64;
    gen.n_ood_test = 64;
    splits = build_splits(gen);
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.bank_size = 16;
    cfg.feature_dim = 8;
    cfg.hidden = 16;
  }
  TrainData data() const { return TrainData{&splits.train, &splits.iid_test, &splits.ood_test}; }
};

TEST(EpochOrder, IsAPermutationAndDeterministic) {
  const auto a = epoch_order(100, 7, 3), b = epoch_order(100, 7, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, epoch_order(100, 7, 4));
  EXPECT_NE(a, epoch_order(100, 8, 3));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(PredictAnswer, RestrictedToGroupWithLowestIdOnTies) {
  const std::vector<double> probs{0.9, 0.2, 0.7, 0.7, 0.1};
  EXPECT_EQ(predict_answer(probs, {1, 2, 3}), 2u);
  EXPECT_EQ(predict_answer(probs, {4}), 4u);
  EXPECT_EQ(predict_answer(probs, {0, 4}), 0u);
}

TEST(Evaluate, CountsAddUpAndModelIsUntouched) {
  Tiny t;
  const LctModel m(t.cfg.model(t.gen));
  const LctModel copy = m;
  const SplitMetrics s = evaluate(m, t.splits.ood_test, 10);
  EXPECT_EQ(s.split, "ood_test");
  EXPECT_EQ(s.total, t.splits.ood_test.size());
  EXPECT_EQ(s.open_total + s.closed_total, s.total);
  EXPECT_EQ(s.open_correct + s.closed_correct, s.correct);
  EXPECT_TRUE(m == copy);
  EXPECT_EQ(evaluate(m, t.splits.ood_test, 7), s);
}

TEST(Evaluate, UntrainedClosedQuestionsNearChance) {
  GeneratorConfig gen;
  gen.n_train = 1;
  gen.n_iid_test = 1000;
  gen.n_ood_test = 1;
  const SplitSet s = build_splits(gen);
  TrainConfig cfg;
  double sum = 0.0;
  const int seeds = 40;
  for (int seed = 1; seed <= seeds; ++seed) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    sum += evaluate(LctModel(cfg.model(gen)), s.iid_test).closed();
  }
  EXPECT_NEAR(sum / seeds, 50.0, 5.0);
}

TEST(Evaluate, SplitMetricsPercentages) {
  SplitMetrics m;
  EXPECT_EQ(m.overall(), 0.0);
  m.total = 8;
  m.correct = 2;
  EXPECT_EQ(m.overall(), 25.0);
}

TEST(Train, ZeroEpochsOnlyEvaluatesInitialState) {
  Tiny t;
  t.cfg.epochs = 0;
  LctModel m(t.cfg.model(t.gen));
  const LctModel before = m;
  const TrainReport r = train(m, t.data(), t.cfg);
  EXPECT_EQ(r.initial.size(), 2u);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_TRUE(r.final.empty());
  EXPECT_TRUE(m == before);
}

TEST(Train, DeterministicAcrossRuns) {
  Tiny t;
  LctModel a(t.cfg.model(t.gen)), b(t.cfg.model(t.gen));
  const TrainReport ra = train(a, t.data(), t.cfg), rb = train(b, t.data(), t.cfg);
  EXPECT_EQ(ra, rb);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(ra.epochs.size(), 2u);
  EXPECT_EQ(ra.final.size(), 3u);
  EXPECT_FALSE(ra.aborted);
  for (const auto& e : ra.epochs) {
    EXPECT_TRUE(std::isfinite(e.l_total));
    EXPECT_NEAR(e.l_total, e.l_vqa + t.cfg.lambda * e.l_orth, 1e-12);
    EXPECT_GT(e.bank_drift, 0.0);
  }
}

TEST(Train, BaselineHasNoMemoryDrift) {
  Tiny t;
  t.cfg.use_dafb = false;
  t.cfg.use_ct = false;
  LctModel m(t.cfg.model(t.gen));
  const TrainReport r = train(m, t.data(), t.cfg);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.bank_drift, 0.0);
    EXPECT_EQ(e.l_orth, 0.0);
  }
}

TEST(Train, LossDecreasesOnTheTrainingSplit) {
  Tiny t;
  t.cfg.epochs = 10;
  t.cfg.lr = 5e-3;
  LctModel m(t.cfg.model(t.gen));
  const TrainReport r = train(m, t.data(), t.cfg);
  EXPECT_LT(r.epochs.back().l_vqa, r.epochs.front().l_vqa);
}

TEST(Train, NonFiniteLossAbortsAndRestores) {
  Tiny t;
  LctModel m(t.cfg.model(t.gen));
  m.param("head_bias")[0] = std::numeric_limits<double>::quiet_NaN();
  const TrainReport r = train(m, t.data(), t.cfg);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.abort_reason.empty());
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_TRUE(std::isnan(m.param("head_bias")[0]));
}

TEST(Train, InvalidConfigIsRejected) {
  Tiny t;
  t.cfg.batch_size = 0;
  LctModel m(TrainConfig{}.model(t.gen));
  EXPECT_THROW(train(m, t.data(), t.cfg), ConfigError);
}

TEST(Ablation, TableHasEveryArmAndSplit) {
  Tiny t;
  t.cfg.epochs = 1;
  const AblationReport rep = run_ablation(t.data(), t.cfg, ablation_seeds(3, 2));
  ASSERT_EQ(rep.arms.size(), 4u);
  for (const char* name : {"baseline", "+DAFB", "+CT", "full"}) {
    const ArmResult& a = rep.arm(name);
    EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(a.runs.size(), 2u);
    const double lo = std::min(a.runs[0].final_split("ood_test").overall(), a.runs[1].final_split("ood_test").overall());
    const double hi = std::max(a.runs[0].final_split("ood_test").overall(), a.runs[1].final_split("ood_test").overall());
    EXPECT_DOUBLE_EQ(a.median_accuracy("ood_test", &SplitMetrics::overall), 0.5 * (lo + hi));
  }
  const std::string table = format_ablation_table(rep);
  std::size_t lines = std::count(table.begin(), table.end(), '\n');
  EXPECT_EQ(lines, 6u);
  EXPECT_NE(table.find("Overall"), std::string::npos);
  const nlohmann::json j = ablation_json(rep);
  EXPECT_EQ(j["records"].size(), 12u);
  EXPECT_EQ(j["runs"].size(), 8u);
  EXPECT_THROW(rep.arm("nope"), std::out_of_range);
}

TEST(Ablation, MedianOfOddCount) {
  ArmResult a;
  for (double v : {3.0, 1.0, 2.0}) {
    TrainReport r;
    SplitMetrics m;
    m.split = "ood_test";
    m.total = 100;
    m.correct = static_cast<std::size_t>(v);
    r.final.push_back(m);
    a.runs.push_back(r);
  }
  EXPECT_EQ(a.median_accuracy("ood_test", &SplitMetrics::overall), 2.0);
}

TEST(LossCsv, OneRowPerEpoch) {
  TrainReport r;
  r.epochs.push_back(EpochLog{1, 0.5, 0.25, 0.525, 0.0});
  r.epochs.push_back(EpochLog{2, 0.4, 0.5, 0.45, 1.5});
  std::ostringstream os;
  write_loss_csv(os, r, "full,1");
  EXPECT_EQ(os.str(), "full,1,1,0.5,0.25,0.52500000000000002,0\nfull,1,2,0.40000000000000002,0.5,0.45000000000000001,1.5\n");
}

}  // namespace
}  // namespace lct
