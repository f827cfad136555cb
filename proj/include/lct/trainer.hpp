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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lct/model.hpp"
#include "lct/optim.hpp"
#include "lct/synthgen.hpp"

namespace lct {

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 32;
  double lr = 1e-3;
  double lambda = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint32_t bank_size = 256;
  double momentum = 0.99;
  double tau = 0.07;
  std::uint32_t feature_dim = 32;
  std::uint32_t hidden = 64;
  std::uint64_t seed = 1;
  bool use_dafb = true;
  bool use_ct = true;
  std::uint32_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_dir;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a positive finite number");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
    if (!(weight_decay >= 0.0) || lr * weight_decay >= 1.0) {
      throw ConfigError("weight_decay must be >= 0 with lr*weight_decay < 1");
    }
    if (bank_size == 0) throw ConfigError("bank_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (feature_dim == 0) throw ConfigError("feature_dim must be >= 1");
    if (hidden == 0) throw ConfigError("hidden must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  AdamWConfig optimizer() const { return AdamWConfig{lr, beta1, beta2, eps, weight_decay}; }

  ModelConfig model(const GeneratorConfig& data) const {
    ModelConfig m;
    m.raw_dim = data.raw_dim;
    m.feature_dim = feature_dim;
    m.hidden = hidden;
    m.num_questions = kNumQuestions;
    m.num_answers = data.num_answers();
    m.bank_size = bank_size;
    m.momentum = momentum;
    m.tau = tau;
    m.use_dafb = use_dafb;
    m.use_ct = use_ct;
    m.seed = seed;
    return m;
  }
};

struct SplitMetrics {
  std::string split;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t open_total = 0;
  std::size_t open_correct = 0;
  std::size_t closed_total = 0;
  std::size_t closed_correct = 0;

  static double pct(std::size_t c, std::size_t n) { return n == 0 ? 0.0 : 100.0 * double(c) / double(n); }
  double overall() const { return pct(correct, total); }
  double open() const { return pct(open_correct, open_total); }
  double closed() const { return pct(closed_correct, closed_total); }

  friend bool operator==(const SplitMetrics&, const SplitMetrics&) = default;
};

struct EpochLog {
  std::uint32_t epoch = 0;  // 1-based
  double l_vqa = 0.0;       // batch means over the epoch
  double l_orth = 0.0;
  double l_total = 0.0;
  double bank_drift = 0.0;  // Frobenius distance of the memory across the epoch
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainReport {
  std::vector<SplitMetrics> initial;  // iid_test, ood_test before training
  std::vector<SplitMetrics> final;    // train, iid_test, ood_test after training
  std::vector<EpochLog> epochs;
  bool aborted = false;
  std::string abort_reason;

  const SplitMetrics& final_split(const std::string& name) const {
    for (const auto& m : final)
      if (m.split == name) return m;
    throw std::out_of_range("no final metrics for split " + name);
  }

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Decision rule for one instance: argmax of the probabilities restricted to
/// the answers valid for its question type. Ties go to the lowest answer id.
inline std::uint32_t predict_answer(std::span<const double> probs, const std::vector<std::uint32_t>& group) {
  std::uint32_t best = group.front();
  for (std::uint32_t a : group)
    if (probs[a] > probs[best]) best = a;
  return best;
}

/// Accuracy of `model` on `data`. Reads only regions, question ids and
/// answers; never touches the model.
inline SplitMetrics evaluate(const LctModel& model, const Dataset& data, std::size_t batch_size = 256) {
  SplitMetrics m;
  m.split = split_name(data.split());
  std::vector<std::vector<std::uint32_t>> groups;
  for (std::uint32_t q = 0; q < kNumQuestions; ++q) groups.push_back(answer_group(data.config(), q));
  std::vector<ModelInput> batch;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(data.input(i));
    const ForwardResult fr = model.forward(batch);
    for (std::size_t i = start; i < end; ++i) {
      const std::uint32_t q = data.question(i);
      const bool hit = predict_answer(fr.probs.row(i - start), groups.at(q)) == data.answer(i);
      ++m.total;
      m.correct += hit;
      if (question_kind(q) == QuestionKind::kOpen) {
        ++m.open_total;
        m.open_correct += hit;
      } else {
        ++m.closed_total;
        m.closed_correct += hit;
      }
    }
  }
  return m;
}

/// Deterministic Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint32_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu, epoch};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* iid_test = nullptr;
  const Dataset* ood_test = nullptr;
};

inline std::string checkpoint_path(const std::string& dir, std::uint32_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".lctm";
  return (std::filesystem::path(dir) / os.str()).string();
}

namespace detail {

inline const Tensor2D* memory_snapshot(const LctModel& m) {
  if (const FeatureBank* b = m.confounder_proxy()) return &b->prototypes();
  return nullptr;
}

}  // namespace detail

/// Trains `model` in place. Per batch: forward, joint loss, backward, AdamW
/// step, then the memory update from the pre-trim features of that batch.
/// A non-finite loss or gradient restores the state from the start of the
/// epoch and stops.
inline TrainReport train(LctModel& model, const TrainData& data, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.train == nullptr || data.train->empty()) throw ConfigError("train: empty training split");
  TrainReport report;
  for (const Dataset* d : {data.iid_test, data.ood_test})
    if (d != nullptr) report.initial.push_back(evaluate(model, *d));

  AdamW opt(cfg.optimizer());
  std::vector<std::string> names;
  for (const auto& p : model.parameters()) names.push_back(p.name);
  const std::size_t regions = data.train->config().regions;

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs && !report.aborted; ++epoch) {
    const LctModel last_good = model;
    const AdamW last_opt = opt;
    const auto order = epoch_order(data.train->size(), cfg.seed, epoch);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    std::vector<ModelInput> inputs;
    std::vector<std::uint32_t> answers;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      inputs.clear();
      answers.clear();
      for (std::size_t k = start; k < end; ++k) {
        inputs.push_back(data.train->input(order[k]));
        answers.push_back(data.train->answer(order[k]));
      }
      LossResult lr = model.loss(inputs, answers, cfg.lambda, true);
      if (!std::isfinite(lr.loss.l_total)) {
        report.aborted = true;
        report.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches);
        break;
      }
      std::vector<Tensor2D*> params;
      for (auto& p : model.parameters()) params.push_back(&p.value);
      try {
        opt.step(params, lr.grads, names);
      } catch (const NonFiniteGradient& e) {
        report.aborted = true;
        report.abort_reason = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
      model.update_memory(lr.features, regions);
      log.l_vqa += lr.loss.l_vqa;
      log.l_orth += lr.loss.l_orth;
      log.l_total += lr.loss.l_total;
      ++batches;
    }
    if (report.aborted) {
      model = last_good;
      opt = last_opt;
      if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        model.save_file((std::filesystem::path(cfg.checkpoint_dir) / "last_good.lctm").string());
      }
      break;
    }
    log.l_vqa /= double(batches);
    log.l_orth /= double(batches);
    log.l_total /= double(batches);
    const Tensor2D* before = detail::memory_snapshot(last_good);
    const Tensor2D* after = detail::memory_snapshot(model);
    log.bank_drift = (before && after) ? frobenius_distance(*before, *after) : 0.0;
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      model.save_file(checkpoint_path(cfg.checkpoint_dir, epoch));
    }
  }

  if (!report.epochs.empty()) {
    report.final.push_back(evaluate(model, *data.train));
    for (const Dataset* d : {data.iid_test, data.ood_test})
      if (d != nullptr) report.final.push_back(evaluate(model, *d));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ablation

struct ArmSpec {
  std::string name;
  bool use_dafb = false;
  bool use_ct = false;
};

inline std::vector<ArmSpec> ablation_arms() {
  return {{"baseline", false, false}, {"+DAFB", true, false}, {"+CT", false, true}, {"full", true, true}};
}

struct ArmResult {
  ArmSpec arm;
  std::vector<std::uint64_t> seeds;
  std::vector<TrainReport> runs;  // parallel to seeds

  /// Median over seeds of a per-run statistic.
  double median(const std::function<double(const TrainReport&)>& stat) const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(stat(r));
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  double median_accuracy(const std::string& split, double (SplitMetrics::*field)() const) const {
    return median([&](const TrainReport& r) { return (r.final_split(split).*field)(); });
  }

  double median_gap() const {
    return median([](const TrainReport& r) {
      return r.final_split("iid_test").overall() - r.final_split("ood_test").overall();
    });
  }
};

struct AblationReport {
  std::vector<ArmResult> arms;

  const ArmResult& arm(const std::string& name) const {
    for (const auto& a : arms)
      if (a.arm.name == name) return a;
    throw std::out_of_range("no ablation arm " + name);
  }
};

inline std::vector<std::uint64_t> ablation_seeds(std::uint64_t base, std::uint32_t count) {
  std::vector<std::uint64_t> s;
  for (std::uint32_t i = 0; i < count; ++i) s.push_back(base + i);
  return s;
}

/// Trains every arm on every seed against the same datasets. Arms differ only
/// in their flags; run k of every arm uses seeds[k].
inline AblationReport run_ablation(const TrainData& data, const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::function<void(const std::string&)>& progress = {}) {
  AblationReport out;
  for (const ArmSpec& arm : ablation_arms()) {
    ArmResult res;
    res.arm = arm;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.use_dafb = arm.use_dafb;
      cfg.use_ct = arm.use_ct;
      cfg.seed = seed;
      cfg.checkpoint_every = 0;
      LctModel model(cfg.model(data.train->config()));
      res.seeds.push_back(seed);
      res.runs.push_back(train(model, data, cfg));
      if (progress) {
        const auto& r = res.runs.back();
        std::ostringstream os;
        os << std::fixed << std::setprecision(1) << arm.name << " seed=" << seed;
        if (!r.final.empty()) {
          os << " iid=" << r.final_split("iid_test").overall() << " ood=" << r.final_split("ood_test").overall();
        }
        if (r.aborted) os << " ABORTED: " << r.abort_reason;
        progress(os.str());
      }
    }
    out.arms.push_back(std::move(res));
  }
  return out;
}

/// Aligned text table: one row per arm, Open/Closed/Overall per split,
/// medians over seeds.
inline std::string format_ablation_table(const AblationReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  const char* splits[] = {"train", "iid_test", "ood_test"};
  os << std::left << std::setw(10) << "arm";
  for (const char* s : splits) os << " | " << std::setw(22) << s;
  os << " | gap\n" << std::setw(10) << "";
  for (std::size_t i = 0; i < 3; ++i) os << " | " << std::setw(7) << "Open" << std::setw(7) << "Closed" << std::setw(8) << "Overall";
  os << " |\n";
  for (const auto& a : rep.arms) {
    os << std::setw(10) << a.arm.name;
    for (const char* s : splits) {
      os << " | " << std::setw(7) << a.median_accuracy(s, &SplitMetrics::open) << std::setw(7)
         << a.median_accuracy(s, &SplitMetrics::closed) << std::setw(8) << a.median_accuracy(s, &SplitMetrics::overall);
    }
    os << " | " << a.median_gap() << "\n";
  }
  return os.str();
}

inline nlohmann::json metrics_json(const SplitMetrics& m) {
  return {{"split", m.split},           {"total", m.total},
          {"correct", m.correct},       {"overall", m.overall()},
          {"open_total", m.open_total}, {"open_correct", m.open_correct},
          {"open", m.open()},           {"closed_total", m.closed_total},
          {"closed_correct", m.closed_correct}, {"closed", m.closed()}};
}

inline nlohmann::json report_json(const TrainReport& r) {
  nlohmann::json j;
  j["initial"] = nlohmann::json::array();
  for (const auto& m : r.initial) j["initial"].push_back(metrics_json(m));
  j["final"] = nlohmann::json::array();
  for (const auto& m : r.final) j["final"].push_back(metrics_json(m));
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    j["epochs"].push_back(
        {{"epoch", e.epoch}, {"l_vqa", e.l_vqa}, {"l_orth", e.l_orth}, {"l_total", e.l_total}, {"bank_drift", e.bank_drift}});
  }
  j["aborted"] = r.aborted;
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  return j;
}

/// One record per arm x split with medians, plus the per-seed runs.
inline nlohmann::json ablation_json(const AblationReport& rep) {
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& a : rep.arms) {
    for (const char* s : {"train", "iid_test", "ood_test"}) {
      records.push_back({{"arm", a.arm.name},
                         {"use_dafb", a.arm.use_dafb},
                         {"use_ct", a.arm.use_ct},
                         {"split", s},
                         {"median_overall", a.median_accuracy(s, &SplitMetrics::overall)},
                         {"median_open", a.median_accuracy(s, &SplitMetrics::open)},
                         {"median_closed", a.median_accuracy(s, &SplitMetrics::closed)},
                         {"seeds", a.seeds}});
    }
    for (std::size_t k = 0; k < a.runs.size(); ++k) {
      nlohmann::json r = report_json(a.runs[k]);
      r["arm"] = a.arm.name;
      r["seed"] = a.seeds[k];
      runs.push_back(std::move(r));
    }
  }
  return {{"records", records}, {"runs", runs}};
}

/// epoch,l_vqa,l_orth,l_total[,bank_drift] rows, prefixed with arm and seed
/// when `label` is set.
inline void write_loss_csv(std::ostream& os, const TrainReport& r, const std::string& label = {}) {
  os << std::setprecision(17);
  for (const auto& e : r.epochs) {
    if (!label.empty()) os << label << ",";
    os << e.epoch << "," << e.l_vqa << "," << e.l_orth << "," << e.l_total << "," << e.bank_drift << "\n";
  }
}

}  // namespace lct
