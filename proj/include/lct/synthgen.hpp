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

// Synthetic confounded VQA benchmark.
//
// Each image has N regions: one lesion region (lesion signature + noise) and
// N-1 background regions (background prototype + noise). The answer is a
// function of the lesion and the question only. In training, lesion l is
// shown on its paired background g(l) with probability `train_bias`, which
// makes the background a shortcut predictor of the answer. The OOD split uses
// `ood_bias` (default 0, i.e. never the paired background), so a model that
// leans on the background fails there.
//
// Questions:
//   0  "which lesion is shown?"        open,   answers [0, L)
//   1  "is the lesion malignant?"      closed, answers L (yes) / L+1 (no)
//   2  "is the lesion solid?"          closed, answers L+2 (yes) / L+3 (no)
// Malignant lesions are the first ceil(L/2) ids, solid lesions the even ids,
// so both closed questions are balanced for L = 4.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lct/binary_io.hpp"
#include "lct/tensor.hpp"

namespace lct {

enum class Split : std::uint32_t { kTrain = 0, kIidTest = 1, kOodTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kIidTest: return "iid_test";
    case Split::kOodTest: return "ood_test";
  }
  return "unknown";
}

enum class QuestionKind { kOpen, kClosed };

inline constexpr std::uint32_t kNumQuestions = 3;
inline constexpr std::uint32_t kQuestionLesionType = 0;
inline constexpr std::uint32_t kQuestionMalignant = 1;
inline constexpr std::uint32_t kQuestionSolid = 2;

inline QuestionKind question_kind(std::uint32_t question_id) {
  return question_id == kQuestionLesionType ? QuestionKind::kOpen : QuestionKind::kClosed;
}

struct GeneratorConfig {
  std::uint32_t backgrounds = 4;  // G
  std::uint32_t lesions = 4;      // L
  std::uint32_t regions = 9;      // N
  std::uint32_t raw_dim = 32;     // D_in
  double noise_sigma = 0.2;
  double train_bias = 0.9;
  double ood_bias = 0.0;
  std::uint32_t pairing_offset = 0;  // g(l) = (l + offset) mod G
  std::uint32_t n_train = 4000;
  std::uint32_t n_iid_test = 1000;
  std::uint32_t n_ood_test = 1000;
  std::uint64_t seed = 1;

  std::uint32_t num_answers() const { return lesions + 4; }

  std::uint32_t paired_background(std::uint32_t lesion) const {
    return (lesion + pairing_offset) % backgrounds;
  }

  double bias(Split s) const { return s == Split::kOodTest ? ood_bias : train_bias; }

  std::uint32_t count(Split s) const {
    switch (s) {
      case Split::kTrain: return n_train;
      case Split::kIidTest: return n_iid_test;
      case Split::kOodTest: return n_ood_test;
    }
    return 0;
  }

  void validate() const {
    auto positive = [](std::uint32_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string(key) + " must be >= 1");
    };
    positive(backgrounds, "backgrounds");
    positive(lesions, "lesions");
    positive(regions, "regions");
    positive(raw_dim, "raw_dim");
    auto probability = [](double v, const char* key) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError(std::string(key) + " must be a probability in [0,1], got " +
                          std::to_string(v));
      }
    };
    probability(train_bias, "train_bias");
    probability(ood_bias, "ood_bias");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw ConfigError("noise_sigma must be finite and >= 0, got " + std::to_string(noise_sigma));
    }
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

/// Causal answer rule: depends on the question and the lesion only.
inline std::uint32_t answer_for(const GeneratorConfig& cfg, std::uint32_t question_id,
                                std::uint32_t lesion_id) {
  switch (question_id) {
    case kQuestionLesionType: return lesion_id;
    case kQuestionMalignant: {
      const bool malignant = lesion_id < (cfg.lesions + 1) / 2;
      return cfg.lesions + (malignant ? 0u : 1u);
    }
    case kQuestionSolid: {
      const bool solid = lesion_id % 2 == 0;
      return cfg.lesions + 2 + (solid ? 0u : 1u);
    }
    default:
      throw DataError("unknown question id " + std::to_string(question_id));
  }
}

/// Answer ids admissible for a question.
inline std::vector<std::uint32_t> answer_group(const GeneratorConfig& cfg, std::uint32_t question_id) {
  switch (question_id) {
    case kQuestionLesionType: {
      std::vector<std::uint32_t> g(cfg.lesions);
      for (std::uint32_t i = 0; i < cfg.lesions; ++i) g[i] = i;
      return g;
    }
    case kQuestionMalignant: return {cfg.lesions, cfg.lesions + 1};
    case kQuestionSolid: return {cfg.lesions + 2, cfg.lesions + 3};
    default:
      throw DataError("unknown question id " + std::to_string(question_id));
  }
}

struct InstanceMeta {
  std::uint32_t background_id = 0;
  std::uint32_t lesion_id = 0;
  std::uint32_t lesion_region = 0;
  friend bool operator==(const InstanceMeta&, const InstanceMeta&) = default;
};

struct VqaInstance {
  Tensor2D regions;  // N x D_in raw region features
  std::uint32_t question_id = 0;
  std::uint32_t answer = 0;
  InstanceMeta meta;  // diagnostics only
  friend bool operator==(const VqaInstance&, const VqaInstance&) = default;
};

/// What a model is allowed to see of an instance.
struct ModelInput {
  const Tensor2D* regions = nullptr;
  std::uint32_t question_id = 0;
};

struct Prototypes {
  Tensor2D backgrounds;  // G x D_in, unit rows
  Tensor2D lesions;      // L x D_in, unit rows
};

namespace detail {
inline std::seed_seq make_seed_seq(std::uint64_t seed, std::uint32_t stream, std::uint32_t index) {
  return std::seed_seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                       static_cast<std::uint32_t>(seed >> 32), stream, index};
}
}  // namespace detail

/// G + L unit vectors with pairwise |cos| < 0.5, resampled until they are.
inline Prototypes make_prototypes(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t total = cfg.backgrounds + cfg.lesions;
  if (cfg.raw_dim < total) {
    throw ConfigError("raw_dim (" + std::to_string(cfg.raw_dim) + ") must be >= backgrounds + lesions (" +
                      std::to_string(total) + ") to keep prototypes separated");
  }
  auto seq = detail::make_seed_seq(cfg.seed, 0xB0B0u, 0);
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2D all(total, cfg.raw_dim);
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (std::size_t i = 0; i < total; ++i) {
      auto r = all.row(i);
      for (double& v : r) v = normal(rng);
      const double n = norm(r);
      for (double& v : r) v /= n;
    }
    bool ok = true;
    for (std::size_t i = 0; i < total && ok; ++i)
      for (std::size_t j = i + 1; j < total && ok; ++j) ok = std::abs(dot(all.row(i), all.row(j))) < 0.5;
    if (!ok) continue;
    Prototypes p{Tensor2D(cfg.backgrounds, cfg.raw_dim), Tensor2D(cfg.lesions, cfg.raw_dim)};
    std::copy_n(all.data().begin(), p.backgrounds.size(), p.backgrounds.data().begin());
    std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(p.backgrounds.size()), p.lesions.size(),
                p.lesions.data().begin());
    return p;
  }
  throw ConfigError("make_prototypes: could not separate prototypes after " +
                    std::to_string(kMaxAttempts) + " attempts");
}

/// Draws instance `index` of `split`. Every instance has its own random
/// stream derived from (seed, split, index), and the draws that fix the
/// answer never depend on the background draw.
inline VqaInstance sample_instance(const GeneratorConfig& cfg, const Prototypes& protos, Split split,
                                   std::uint32_t index) {
  auto seq = detail::make_seed_seq(cfg.seed, static_cast<std::uint32_t>(split) + 1, index);
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](std::uint32_t n) {
    return std::min<std::uint32_t>(static_cast<std::uint32_t>(unit(rng) * n), n - 1);
  };

  VqaInstance inst;
  const std::uint32_t lesion = pick(cfg.lesions);
  const std::uint32_t region = pick(cfg.regions);
  const bool open = unit(rng) < 0.5;
  const std::uint32_t closed_q = unit(rng) < 0.5 ? kQuestionMalignant : kQuestionSolid;
  inst.question_id = open ? kQuestionLesionType : closed_q;
  inst.answer = answer_for(cfg, inst.question_id, lesion);

  const double u_bias = unit(rng);
  const std::uint32_t other = cfg.backgrounds > 1 ? pick(cfg.backgrounds - 1) : 0;
  const std::uint32_t paired = cfg.paired_background(lesion);
  std::uint32_t background = paired;
  if (cfg.backgrounds > 1 && !(u_bias < cfg.bias(split))) {
    background = other >= paired ? other + 1 : other;
  }

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  inst.regions = Tensor2D(cfg.regions, cfg.raw_dim);
  for (std::uint32_t i = 0; i < cfg.regions; ++i) {
    auto src = i == region ? protos.lesions.row(lesion) : protos.backgrounds.row(background);
    auto dst = inst.regions.row(i);
    for (std::uint32_t j = 0; j < cfg.raw_dim; ++j) dst[j] = src[j] + noise(rng);
  }
  inst.meta = InstanceMeta{background, lesion, region};
  return inst;
}

/// A generated split. Model code reads instances through input()/answer();
/// meta() is for diagnostics.
class Dataset {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  Dataset() = default;
  Dataset(GeneratorConfig cfg, Split split, std::vector<VqaInstance> instances)
      : config_(cfg), split_(split), instances_(std::move(instances)) {}

  const GeneratorConfig& config() const noexcept { return config_; }
  Split split() const noexcept { return split_; }
  std::size_t size() const noexcept { return instances_.size(); }
  bool empty() const noexcept { return instances_.empty(); }

  ModelInput input(std::size_t i) const {
    const auto& inst = instances_.at(i);
    return ModelInput{&inst.regions, inst.question_id};
  }
  std::uint32_t answer(std::size_t i) const { return instances_.at(i).answer; }
  std::uint32_t question(std::size_t i) const { return instances_.at(i).question_id; }
  const InstanceMeta& meta(std::size_t i) const { return instances_.at(i).meta; }
  const VqaInstance& instance(std::size_t i) const { return instances_.at(i); }

  void save(std::ostream& os) const {
    io::write_magic(os, "LCTD");
    io::write_u32(os, kFormatVersion);
    write_config(os, config_);
    io::write_u32(os, static_cast<std::uint32_t>(split_));
    io::write_u64(os, instances_.size());
    for (const auto& inst : instances_) {
      io::write_u32(os, static_cast<std::uint32_t>(inst.regions.rows()));
      io::write_u32(os, static_cast<std::uint32_t>(inst.regions.cols()));
      for (double v : inst.regions.data()) io::write_f64(os, v);
      io::write_u32(os, inst.question_id);
      io::write_u32(os, inst.answer);
      io::write_u32(os, inst.meta.background_id);
      io::write_u32(os, inst.meta.lesion_id);
      io::write_u32(os, inst.meta.lesion_region);
    }
  }

  static Dataset load(std::istream& is) {
    io::expect_magic(is, "LCTD");
    const std::uint32_t version = io::read_u32(is, "dataset version");
    if (version != kFormatVersion) {
      throw DataError("dataset version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kFormatVersion) + ")");
    }
    GeneratorConfig cfg = read_config(is);
    const std::uint32_t split = io::read_u32(is, "split");
    if (split > 2) throw DataError("dataset split id " + std::to_string(split) + " is invalid");
    const std::uint64_t n = io::read_u64(is, "instance count");
    std::vector<VqaInstance> instances;
    instances.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
    for (std::uint64_t k = 0; k < n; ++k) {
      VqaInstance inst;
      const std::uint32_t rows = io::read_u32(is, "regions");
      const std::uint32_t cols = io::read_u32(is, "raw_dim");
      if (rows != cfg.regions || cols != cfg.raw_dim) {
        throw DataError("instance " + std::to_string(k) + " has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", header says " + std::to_string(cfg.regions) + "x" +
                        std::to_string(cfg.raw_dim));
      }
      inst.regions = Tensor2D(rows, cols);
      for (double& v : inst.regions.data()) v = io::read_f64(is, "region features");
      inst.question_id = io::read_u32(is, "question id");
      inst.answer = io::read_u32(is, "answer");
      inst.meta.background_id = io::read_u32(is, "background id");
      inst.meta.lesion_id = io::read_u32(is, "lesion id");
      inst.meta.lesion_region = io::read_u32(is, "lesion region");
      if (inst.question_id >= kNumQuestions || inst.answer >= cfg.num_answers()) {
        throw DataError("instance " + std::to_string(k) + " has out-of-range question/answer");
      }
      instances.push_back(std::move(inst));
    }
    return Dataset(cfg, static_cast<Split>(split), std::move(instances));
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save(os);
    if (!os) throw std::runtime_error("failed writing " + path);
  }

  static Dataset load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load(is);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  static void write_config(std::ostream& os, const GeneratorConfig& c) {
    io::write_u32(os, c.backgrounds);
    io::write_u32(os, c.lesions);
    io::write_u32(os, c.regions);
    io::write_u32(os, c.raw_dim);
    io::write_f64(os, c.noise_sigma);
    io::write_f64(os, c.train_bias);
    io::write_f64(os, c.ood_bias);
    io::write_u32(os, c.pairing_offset);
    io::write_u32(os, c.n_train);
    io::write_u32(os, c.n_iid_test);
    io::write_u32(os, c.n_ood_test);
    io::write_u64(os, c.seed);
  }

  static GeneratorConfig read_config(std::istream& is) {
    GeneratorConfig c;
    c.backgrounds = io::read_u32(is);
    c.lesions = io::read_u32(is);
    c.regions = io::read_u32(is);
    c.raw_dim = io::read_u32(is);
    c.noise_sigma = io::read_f64(is);
    c.train_bias = io::read_f64(is);
    c.ood_bias = io::read_f64(is);
    c.pairing_offset = io::read_u32(is);
    c.n_train = io::read_u32(is);
    c.n_iid_test = io::read_u32(is);
    c.n_ood_test = io::read_u32(is);
    c.seed = io::read_u64(is);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw DataError(std::string("dataset header: ") + e.what());
    }
    return c;
  }

  GeneratorConfig config_;
  Split split_ = Split::kTrain;
  std::vector<VqaInstance> instances_;
};

inline Dataset generate_split(const GeneratorConfig& cfg, const Prototypes& protos, Split split) {
  std::vector<VqaInstance> out;
  const std::uint32_t n = cfg.count(split);
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(sample_instance(cfg, protos, split, i));
  return Dataset(cfg, split, std::move(out));
}

struct SplitSet {
  Dataset train;
  Dataset iid_test;
  Dataset ood_test;
  std::string manifest;  // key=value text
};

inline std::string generator_manifest(const GeneratorConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "backgrounds=" << c.backgrounds << "\n"
     << "lesions=" << c.lesions << "\n"
     << "regions=" << c.regions << "\n"
     << "raw_dim=" << c.raw_dim << "\n"
     << "noise_sigma=" << c.noise_sigma << "\n"
     << "train_bias=" << c.train_bias << "\n"
     << "ood_bias=" << c.ood_bias << "\n"
     << "pairing_offset=" << c.pairing_offset << "\n"
     << "n_train=" << c.n_train << "\n"
     << "n_iid_test=" << c.n_iid_test << "\n"
     << "n_ood_test=" << c.n_ood_test << "\n"
     << "seed=" << c.seed << "\n";
  return os.str();
}

inline SplitSet build_splits(const GeneratorConfig& cfg) {
  cfg.validate();
  const Prototypes protos = make_prototypes(cfg);
  SplitSet s{generate_split(cfg, protos, Split::kTrain), generate_split(cfg, protos, Split::kIidTest),
             generate_split(cfg, protos, Split::kOodTest), {}};
  std::ostringstream os;
  os.precision(6);
  os << "# synthetic confounded VQA splits\n" << generator_manifest(cfg);
  for (const Dataset* d : {&s.train, &s.iid_test, &s.ood_test}) {
    std::size_t paired = 0;
    for (std::size_t i = 0; i < d->size(); ++i)
      paired += d->meta(i).background_id == cfg.paired_background(d->meta(i).lesion_id) ? 1 : 0;
    os << "# " << split_name(d->split()) << ": instances=" << d->size()
       << " configured_paired_prior=" << cfg.bias(d->split()) << " empirical_paired_prior="
       << (d->empty() ? 0.0 : static_cast<double>(paired) / static_cast<double>(d->size())) << "\n";
  }
  s.manifest = os.str();
  return s;
}

/// Majority answer per (background, question) fitted on a split. Reads meta
/// only; it measures how much the background alone gives away.
class BackgroundOracle {
 public:
  static BackgroundOracle fit(const Dataset& train) {
    BackgroundOracle o;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::map<std::uint32_t, std::size_t>> counts;
    for (std::size_t i = 0; i < train.size(); ++i)
      ++counts[{train.meta(i).background_id, train.question(i)}][train.answer(i)];
    for (const auto& [key, hist] : counts) {
      std::uint32_t best = 0;
      std::size_t best_n = 0;
      for (const auto& [ans, n] : hist) {
        if (n > best_n) {
          best_n = n;
          best = ans;
        }
      }
      o.table_[key] = best;
    }
    o.fallback_ = answer_group(train.config(), kQuestionLesionType).front();
    return o;
  }

  std::uint32_t predict(std::uint32_t background_id, std::uint32_t question_id) const {
    auto it = table_.find({background_id, question_id});
    return it == table_.end() ? fallback_ : it->second;
  }

 private:
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> table_;
  std::uint32_t fallback_ = 0;
};

}  // namespace lct
