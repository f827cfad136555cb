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

// Flat key=value experiment configuration.
//
// One key per line, '#' starts a comment, blank lines are ignored. Unknown
// keys and malformed values are errors that name the key. A single `seed`
// drives the generator, model initialisation and batch order.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lct/synthgen.hpp"
#include "lct/trainer.hpp"

namespace lct {

struct ExperimentConfig {
  GeneratorConfig data;
  TrainConfig train;
  std::uint32_t ablation_seeds = 5;

  std::uint64_t seed() const noexcept { return data.seed; }
  void set_seed(std::uint64_t s) {
    data.seed = s;
    train.seed = s;
  }

  void validate() const {
    data.validate();
    train.validate();
    if (ablation_seeds == 0) throw ConfigError("ablation_seeds must be >= 1");
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_uint(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || out > std::numeric_limits<T>::max()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return static_cast<T>(out);
}

inline double parse_double(const std::string& key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + std::string(v) + "'");
}

/// Shortest text that parses back to exactly `v`.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::function<void(const std::string&, std::string_view)> set;
  std::function<std::string()> get;
};

inline std::vector<std::pair<std::string, Field>> fields(ExperimentConfig& c) {
  auto u32 = [](std::uint32_t& r) {
    return Field{[&r](const std::string& k, std::string_view v) { r = parse_uint<std::uint32_t>(k, v); },
                 [&r] { return std::to_string(r); }};
  };
  auto f64 = [](double& r) {
    return Field{[&r](const std::string& k, std::string_view v) { r = parse_double(k, v); },
                 [&r] { return fmt_double(r); }};
  };
  auto flag = [](bool& r) {
    return Field{[&r](const std::string& k, std::string_view v) { r = parse_bool(k, v); },
                 [&r] { return std::string(r ? "true" : "false"); }};
  };
  Field seed{[&c](const std::string& k, std::string_view v) { c.set_seed(parse_uint<std::uint64_t>(k, v)); },
             [&c] { return std::to_string(c.seed()); }};
  Field ckpt_dir{[&c](const std::string&, std::string_view v) { c.train.checkpoint_dir = std::string(v); },
                 [&c] { return c.train.checkpoint_dir; }};
  return {
      {"seed", seed},
      {"backgrounds", u32(c.data.backgrounds)},
      {"lesions", u32(c.data.lesions)},
      {"regions", u32(c.data.regions)},
      {"raw_dim", u32(c.data.raw_dim)},
      {"noise_sigma", f64(c.data.noise_sigma)},
      {"train_bias", f64(c.data.train_bias)},
      {"ood_bias", f64(c.data.ood_bias)},
      {"pairing_offset", u32(c.data.pairing_offset)},
      {"n_train", u32(c.data.n_train)},
      {"n_iid_test", u32(c.data.n_iid_test)},
      {"n_ood_test", u32(c.data.n_ood_test)},
      {"epochs", u32(c.train.epochs)},
      {"batch_size", u32(c.train.batch_size)},
      {"lr", f64(c.train.lr)},
      {"lambda", f64(c.train.lambda)},
      {"beta1", f64(c.train.beta1)},
      {"beta2", f64(c.train.beta2)},
      {"eps", f64(c.train.eps)},
      {"weight_decay", f64(c.train.weight_decay)},
      {"bank_size", u32(c.train.bank_size)},
      {"momentum", f64(c.train.momentum)},
      {"tau", f64(c.train.tau)},
      {"feature_dim", u32(c.train.feature_dim)},
      {"hidden", u32(c.train.hidden)},
      {"use_dafb", flag(c.train.use_dafb)},
      {"use_ct", flag(c.train.use_ct)},
      {"checkpoint_every", u32(c.train.checkpoint_every)},
      {"checkpoint_dir", ckpt_dir},
      {"ablation_seeds", u32(c.ablation_seeds)},
  };
}

}  // namespace config_detail

/// Every recognised key, in file order.
inline std::vector<std::string> config_keys() {
  ExperimentConfig c;
  std::vector<std::string> keys;
  for (const auto& [k, f] : config_detail::fields(c)) keys.push_back(k);
  return keys;
}

/// Applies `text` on top of `base`. Throws ConfigError naming the key (and
/// line) on any problem. Does not validate ranges.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  auto table = config_detail::fields(base);
  std::map<std::string, config_detail::Field*> index;
  for (auto& [k, f] : table) index[k] = &f;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
    }
    const std::string key(config_detail::trim(line.substr(0, eq)));
    const std::string_view value = config_detail::trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(line_no) + ")");
    it->second->set(key, value);
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

/// Every key with its resolved value; parse_config(format_config(c)) == c.
inline std::string format_config(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::ostringstream os;
  for (const auto& [k, f] : config_detail::fields(copy)) os << k << " = " << f.get() << "\n";
  return os.str();
}

}  // namespace lct
