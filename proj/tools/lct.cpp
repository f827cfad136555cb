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

// lct: command-line driver.
//
//   lct gen-data  --config C --out DIR
//   lct train     --config C --data DIR --out DIR
//   lct eval      --ckpt M --data DIR [--out FILE.json]
//   lct ablate    --config C --data DIR --out DIR
//   lct gradcheck [--config C]
//   lct dump-mask --ckpt M --data DIR --instance I [--split S] [--out PREFIX]
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lct/config.hpp"
#include "lct/diagnostics.hpp"
#include "lct/model.hpp"
#include "lct/synthgen.hpp"
#include "lct/trainer.hpp"
#include "lct/version.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string ckpt;
  std::string split = "ood_test";
  std::optional<std::uint64_t> seed;
  std::size_t instance = 0;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

lct::ExperimentConfig resolve_config(const Options& o) {
  lct::ExperimentConfig cfg = o.config.empty() ? lct::ExperimentConfig{} : lct::load_config(o.config);
  if (o.seed) cfg.set_seed(*o.seed);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

/// Run manifest: the resolved config as a loadable config file, with run
/// metadata in comments. `lct <command> --config manifest.cfg` reruns it.
fs::path write_manifest(const fs::path& dir, const std::string& command, const Options& o,
                        const lct::ExperimentConfig& cfg, const std::string& extra = {}) {
  fs::create_directories(dir);
  std::ostringstream os;
  os << "# tool = " << lct::kToolName << " " << lct::kVersion << "\n"
     << "# command = " << command << "\n"
     << "# seed = " << cfg.seed() << "\n";
  if (!o.config.empty()) os << "# config = " << o.config << "\n";
  if (!o.data.empty()) os << "# data = " << o.data << "\n";
  os << "# out = " << o.out << "\n"
     << "# started = " << utc_now() << "\n";
  std::istringstream extra_lines(extra);
  for (std::string line; std::getline(extra_lines, line);)
    os << (line.rfind('#', 0) == 0 ? "" : "# ") << line << "\n";
  os << lct::format_config(cfg);
  const fs::path path = dir / "manifest.cfg";
  write_text(path, os.str());
  return path;
}

void finish_manifest(const fs::path& path) {
  std::ofstream os(path, std::ios::app);
  os << "# finished = " << utc_now() << "\n";
}

struct LoadedSplits {
  lct::Dataset train, iid_test, ood_test;
  lct::TrainData view() const { return {&train, &iid_test, &ood_test}; }
};

fs::path split_file(const fs::path& dir, lct::Split s) {
  return dir / (std::string(lct::split_name(s)) + ".lctd");
}

LoadedSplits load_splits(const std::string& dir) {
  if (dir.empty()) throw lct::ConfigError("--data is required");
  LoadedSplits s;
  s.train = lct::Dataset::load_file(split_file(dir, lct::Split::kTrain).string());
  s.iid_test = lct::Dataset::load_file(split_file(dir, lct::Split::kIidTest).string());
  s.ood_test = lct::Dataset::load_file(split_file(dir, lct::Split::kOodTest).string());
  return s;
}

void warn_if_data_differs(const lct::ExperimentConfig& cfg, const lct::Dataset& train) {
  if (!(cfg.data == train.config())) {
    std::cerr << "warning: generator keys in the config differ from the ones stored in the data files; "
                 "the data files win\n";
  }
}

std::string metrics_block(const std::vector<lct::SplitMetrics>& ms) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << std::left << std::setw(10) << "split" << std::right << std::setw(8)
     << "Open" << std::setw(8) << "Closed" << std::setw(9) << "Overall" << std::setw(8) << "n" << "\n";
  for (const auto& m : ms) {
    os << std::left << std::setw(10) << m.split << std::right << std::setw(8) << m.open() << std::setw(8)
       << m.closed() << std::setw(9) << m.overall() << std::setw(8) << m.total << "\n";
  }
  return os.str();
}

int cmd_gen_data(const Options& o) {
  const lct::ExperimentConfig cfg = resolve_config(o);
  if (o.out.empty()) throw lct::ConfigError("--out is required");
  const fs::path out(o.out);
  const lct::SplitSet s = lct::build_splits(cfg.data);
  const fs::path manifest = write_manifest(out, "gen-data", o, cfg, s.manifest);
  for (const lct::Dataset* d : {&s.train, &s.iid_test, &s.ood_test}) {
    d->save_file(split_file(out, d->split()).string());
    std::cout << lct::split_name(d->split()) << ": " << d->size() << " instances -> "
              << split_file(out, d->split()).string() << "\n";
  }
  finish_manifest(manifest);
  return 0;
}

int cmd_train(const Options& o) {
  lct::ExperimentConfig cfg = resolve_config(o);
  if (o.out.empty()) throw lct::ConfigError("--out is required");
  const LoadedSplits data = load_splits(o.data);
  warn_if_data_differs(cfg, data.train);
  const fs::path out(o.out);
  const fs::path manifest = write_manifest(out, "train", o, cfg);
  if (cfg.train.checkpoint_every > 0 && cfg.train.checkpoint_dir.empty()) {
    cfg.train.checkpoint_dir = (out / "checkpoints").string();
  }

  lct::LctModel model(cfg.train.model(data.train.config()));
  const lct::TrainReport report = lct::train(model, data.view(), cfg.train, [&](const lct::EpochLog& e) {
    std::cerr << "epoch " << e.epoch << "/" << cfg.train.epochs << " l_vqa=" << e.l_vqa << " l_orth=" << e.l_orth
              << " l_total=" << e.l_total << " drift=" << e.bank_drift << "\n";
  });
  model.save_file((out / "model.lctm").string());
  write_text(out / "report.json", lct::report_json(report).dump(2) + "\n");
  std::ostringstream csv;
  csv << "epoch,l_vqa,l_orth,l_total,bank_drift\n";
  lct::write_loss_csv(csv, report);
  write_text(out / "loss.csv", csv.str());
  const std::string block = metrics_block(report.final.empty() ? report.initial : report.final);
  write_text(out / "metrics.txt", block);
  std::cout << block;
  finish_manifest(manifest);
  if (report.aborted) {
    std::cerr << "error: training aborted: " << report.abort_reason << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.ckpt.empty()) throw lct::ConfigError("--ckpt is required");
  const lct::LctModel model = lct::LctModel::load_file(o.ckpt);
  const LoadedSplits data = load_splits(o.data);
  std::vector<lct::SplitMetrics> ms;
  for (const lct::Dataset* d : {&data.train, &data.iid_test, &data.ood_test}) ms.push_back(lct::evaluate(model, *d));
  std::cout << metrics_block(ms);
  if (!o.out.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : ms) j.push_back(lct::metrics_json(m));
    write_text(o.out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const lct::ExperimentConfig cfg = resolve_config(o);
  if (o.out.empty()) throw lct::ConfigError("--out is required");
  const LoadedSplits data = load_splits(o.data);
  warn_if_data_differs(cfg, data.train);
  const fs::path out(o.out);
  const fs::path manifest = write_manifest(out, "ablate", o, cfg);
  const auto seeds = lct::ablation_seeds(cfg.seed(), cfg.ablation_seeds);
  const lct::AblationReport rep =
      lct::run_ablation(data.view(), cfg.train, seeds, [](const std::string& line) { std::cerr << line << "\n"; });
  const std::string table = lct::format_ablation_table(rep);
  write_text(out / "ablation.txt", table);
  write_text(out / "ablation.json", lct::ablation_json(rep).dump(2) + "\n");
  std::ostringstream csv;
  csv << "arm,seed,epoch,l_vqa,l_orth,l_total,bank_drift\n";
  for (const auto& a : rep.arms)
    for (std::size_t k = 0; k < a.runs.size(); ++k)
      lct::write_loss_csv(csv, a.runs[k], a.arm.name + "," + std::to_string(a.seeds[k]));
  write_text(out / "loss_curves.csv", csv.str());
  std::cout << table;
  finish_manifest(manifest);
  for (const auto& a : rep.arms)
    for (const auto& r : a.runs)
      if (r.aborted) return kExitRuntime;
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const lct::ExperimentConfig cfg = resolve_config(o);
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  for (const lct::ArmSpec& arm : lct::ablation_arms()) {
    lct::GradcheckShape shape;
    shape.tau = cfg.train.tau;
    shape.lambda = cfg.train.lambda;
    shape.seed = cfg.seed();
    shape.use_dafb = arm.use_dafb;
    shape.use_ct = arm.use_ct;
    const lct::GradcheckReport r = lct::model_gradcheck(shape);
    const bool pass = r.passed(kTolerance);
    ok = ok && pass;
    std::cout << "[" << arm.name << "] " << (pass ? "PASS" : "FAIL") << " max_rel_err=" << r.max_rel_error
              << " (tolerance " << kTolerance << ")\n"
              << r.to_string();
  }
  return ok ? 0 : kExitRuntime;
}

int cmd_dump_mask(const Options& o) {
  if (o.ckpt.empty()) throw lct::ConfigError("--ckpt is required");
  if (o.data.empty()) throw lct::ConfigError("--data is required");
  const lct::LctModel model = lct::LctModel::load_file(o.ckpt);
  std::optional<lct::Split> split;
  for (lct::Split s : {lct::Split::kTrain, lct::Split::kIidTest, lct::Split::kOodTest})
    if (o.split == lct::split_name(s)) split = s;
  if (!split) throw lct::ConfigError("split must be one of train, iid_test, ood_test; got '" + o.split + "'");
  const lct::Dataset data = lct::Dataset::load_file(split_file(o.data, *split).string());
  const lct::MaskDump d = lct::dump_mask(model, data, o.instance);
  const std::string grid = lct::mask_grid_text(d);
  std::cout << grid;
  if (!o.out.empty()) {
    const fs::path prefix(o.out);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    write_text(prefix.string() + ".txt", grid);
    std::ofstream pgm(prefix.string() + ".pgm", std::ios::binary);
    lct::write_mask_pgm(pgm, d);
    if (!pgm) throw std::runtime_error("failed writing " + prefix.string() + ".pgm");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable causal trimming on a synthetic confounded VQA benchmark"};
  app.set_version_flag("--version", std::string(lct::kToolName) + " " + lct::kVersion);
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Override the config seed"); };

  auto* gen = app.add_subcommand("gen-data", "Generate train/iid_test/ood_test splits");
  gen->add_option("--config", o.config, "Config file (key=value)");
  gen->add_option("--out", o.out, "Output directory")->required();
  add_seed(gen);

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", o.config, "Config file (key=value)");
  tr->add_option("--data", o.data, "Directory written by gen-data")->required();
  tr->add_option("--out", o.out, "Output directory")->required();
  add_seed(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on every split");
  ev->add_option("--ckpt", o.ckpt, "Model checkpoint")->required();
  ev->add_option("--data", o.data, "Directory written by gen-data")->required();
  ev->add_option("--out", o.out, "Optional JSON metrics file");

  auto* ab = app.add_subcommand("ablate", "Train the four ablation arms over several seeds");
  ab->add_option("--config", o.config, "Config file (key=value)");
  ab->add_option("--data", o.data, "Directory written by gen-data")->required();
  ab->add_option("--out", o.out, "Output directory")->required();
  add_seed(ab);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full loss on toy shapes");
  gc->add_option("--config", o.config, "Config file (key=value)");
  add_seed(gc);

  auto* dm = app.add_subcommand("dump-mask", "Print and save the trimming mask of one instance");
  dm->add_option("--ckpt", o.ckpt, "Model checkpoint")->required();
  dm->add_option("--data", o.data, "Directory written by gen-data")->required();
  dm->add_option("--instance", o.instance, "Instance index")->required();
  dm->add_option("--split", o.split, "train, iid_test or ood_test")->capture_default_str();
  dm->add_option("--out", o.out, "Write PREFIX.txt and PREFIX.pgm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*ab) return cmd_ablate(o);
    if (*gc) return cmd_gradcheck(o);
    if (*dm) return cmd_dump_mask(o);
  } catch (const lct::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
