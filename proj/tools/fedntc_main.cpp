// Copyright 2026 The FedNTC Authors. All Rights Reserved.
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

// fedntc: experiment runner.
//
// Exit codes: 0 ok, 1 gradient check failure or internal error,
// 2 configuration or usage error, 3 training divergence, 4 I/O or format error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedntc/binary_io.hpp"
#include "fedntc/checkpoint.hpp"
#include "fedntc/error.hpp"
#include "fedntc/experiment.hpp"
#include "fedntc/federation.hpp"
#include "fedntc/gradsuite.hpp"
#include "fedntc/oracle.hpp"
#include "fedntc/sources.hpp"

namespace fs = std::filesystem;
using namespace fedntc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitIo = 4;

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Options shared by subcommands that read an experiment config.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string regime;
  std::string output;
  std::size_t rounds = 0;
  std::vector<double> lambdas;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd, bool config_required = true) {
    auto* config = cmd->add_option("-c,--config", path, "experiment INI file");
    if (config_required) config->required();
    cmd->add_option("--set", overrides, "override, section.key=value (repeatable)");
    cmd->add_option("--regime", regime, "local | fed | fedavg");
    cmd->add_option("--output", output, "output directory");
    cmd->add_option("--rounds", rounds, "communication rounds");
    cmd->add_option("--lambda", lambdas, "rate-distortion trade-off (repeatable)");
    cmd->add_option("--seed", seed, "master seed");
  }

  ExperimentConfig load(const fs::path& fallback = {}) const {
    std::vector<std::string> all = overrides;
    if (!regime.empty()) all.push_back("experiment.regime=" + regime);
    if (!output.empty()) all.push_back("experiment.output_dir=" + output);
    if (rounds != 0) all.push_back("training.rounds=" + std::to_string(rounds));
    if (!lambdas.empty()) {
      std::string list;
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        list += (i ? "," : "") + fmt(lambdas[i], 17);
      }
      all.push_back("training.lambdas=" + list);
    }
    if (seed) all.push_back("seeds.master=" + std::to_string(*seed));
    return load_config(path.empty() ? fallback : fs::path(path), all);
  }
};

int cmd_train(const ConfigArgs& args, const std::string& run_name, std::size_t threads,
              bool verbose) {
  const ExperimentConfig config = args.load();
  RunOptions options;
  options.run_name = run_name;
  options.threads = threads;
  options.quiet = !verbose;
  const RunSummary summary = run_experiment(config, options);
  std::cout << "run directory: " << summary.directory.string() << "\n";
  std::cout << "regime  lambda      rep  R(bits/sample)  D(mse)        loss          oracle(bits/dim)\n";
  for (const auto& r : summary.results) {
    std::cout << std::left << std::setw(8) << to_string(r.regime) << std::setw(12)
              << fmt(r.lambda) << std::setw(5) << r.replicate << std::setw(16)
              << fmt(r.point.rate) << std::setw(14) << fmt(r.point.distortion) << std::setw(14)
              << fmt(r.point.loss) << (r.oracle_rate ? fmt(*r.oracle_rate) : "-") << "\n";
  }
  return kExitOk;
}

int cmd_eval(const ConfigArgs& args, const fs::path& point_dir) {
  // Default to the config.ini the run directory was written with.
  const ExperimentConfig config = args.load(point_dir.parent_path() / "config.ini");
  const auto final_json = nlohmann::json::parse(read_text(point_dir / "final.json"));
  const double lambda = final_json.at("lambda").get<double>();
  const std::size_t replicate = final_json.at("replicate").get<std::size_t>();
  if (final_json.at("regime").get<std::string>() != to_string(config.regime)) {
    throw ConfigError("eval: run was trained with regime " +
                      final_json.at("regime").get<std::string>() + ", config says " +
                      to_string(config.regime));
  }
  const std::uint64_t seed = replicate_seed(config.master_seed, replicate);
  const ClientData data = build_client_data(config.source, seed);
  TrainingConfig training = config.training;
  training.lambda = lambda;
  Setup setup = make_setup(config.regime, config.model, training, data.train, data.eval, seed);
  load_server_checkpoint(load_checkpoint(point_dir / "checkpoints" / "global.fntc"),
                         setup.server);
  for (auto& c : setup.clients) {
    load_client_checkpoint(
        load_checkpoint(point_dir / "checkpoints" / ("client-" + std::to_string(c.id) + ".fntc")),
        c, config.regime);
  }
  setup.server.round = final_json.at("round").get<std::size_t>();
  const RoundRecord record = evaluate(setup.server, setup.clients);
  std::cout << to_json_line(record) << "\n";
  return kExitOk;
}

std::vector<std::vector<double>> parse_variances(const std::string& text) {
  // "1,4;1,1" -> two clients
  std::vector<std::vector<double>> out;
  std::stringstream clients(text);
  std::string client;
  while (std::getline(clients, client, ';')) {
    std::vector<double> v;
    std::stringstream items(client);
    std::string item;
    while (std::getline(items, item, ',')) {
      try {
        std::size_t pos = 0;
        v.push_back(std::stod(item, &pos));
        while (pos < item.size() && std::isspace(static_cast<unsigned char>(item[pos]))) ++pos;
        if (pos != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("--variances: bad number '" + item + "'");
      }
    }
    if (v.empty()) throw ConfigError("--variances: empty client");
    out.push_back(std::move(v));
  }
  if (out.empty()) throw ConfigError("--variances: no clients");
  return out;
}

int cmd_oracle(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& variances, double d_min, double d_max, std::size_t points,
               const std::string& output) {
  std::vector<std::vector<double>> client_variances;
  if (!variances.empty()) {
    client_variances = parse_variances(variances);
  } else if (!config_path.empty()) {
    const ExperimentConfig config = load_config(config_path, overrides);
    if (config.source.kind != SourceKind::synthetic) {
      throw ConfigError("oracle: needs a synthetic source");
    }
    client_variances = synthetic_spec(config.source, config.master_seed).variances();
  } else {
    throw ConfigError("oracle: pass --config or --variances");
  }
  double mean = 0.0;
  std::size_t count = 0;
  for (const auto& c : client_variances) {
    for (double v : c) {
      mean += v;
      ++count;
    }
  }
  mean /= static_cast<double>(count);
  if (d_max <= 0.0) d_max = mean;
  if (d_min <= 0.0) d_min = d_max * 1e-3;
  const RdCurve curve = fed_rd_curve(client_variances, log_grid(d_min, d_max, points));
  if (output.empty()) {
    std::cout << curve.to_csv();
  } else {
    write_text(output, curve.to_csv());
  }
  return kExitOk;
}

int cmd_partition(const std::string& dataset, const std::string& format, std::size_t n_labels,
                  std::size_t classes, std::size_t clients, std::size_t shards,
                  std::uint64_t seed, const std::string& dealing, bool trim,
                  const std::string& output) {
  std::vector<int> labels;
  if (!dataset.empty()) {
    labels = load_image_dataset(dataset, dataset_format_from_string(format)).labels;
    if (labels.empty()) throw ConfigError("partition: dataset has no labels");
  } else {
    if (n_labels == 0 || classes == 0) {
      throw ConfigError("partition: pass --dataset or --labels with --classes");
    }
    labels.resize(n_labels);
    for (std::size_t i = 0; i < n_labels; ++i) labels[i] = static_cast<int>(i % classes);
  }
  ShardDealing mode;
  if (dealing == "random") {
    mode = ShardDealing::random;
  } else if (dealing == "round_robin" || dealing == "round-robin") {
    mode = ShardDealing::round_robin;
  } else {
    throw ConfigError("partition: --dealing must be random or round_robin");
  }
  const PartitionPlan plan = partition_non_iid(labels, clients, shards, seed, mode, trim);
  nlohmann::ordered_json j;
  j["clients"] = clients;
  j["shards_per_client"] = plan.shards_per_client;
  j["samples_per_client"] = plan.samples_per_client;
  j["dropped"] = plan.dropped;
  auto classes_per_client = nlohmann::json::array();
  std::size_t max_classes = 0;
  for (const auto& a : plan.assignments) {
    std::set<int> seen;
    for (auto i : a) seen.insert(labels[i]);
    classes_per_client.push_back(seen.size());
    max_classes = std::max(max_classes, seen.size());
  }
  j["classes_per_client"] = classes_per_client;
  j["assignments"] = plan.assignments;
  std::cout << "clients " << clients << ", " << plan.samples_per_client
            << " samples each, at most " << max_classes << " classes per client, "
            << plan.dropped << " dropped\n";
  if (!output.empty()) write_text(output, j.dump() + "\n");
  return kExitOk;
}

int cmd_plot(const std::vector<std::string>& results, const std::string& oracle,
             const std::string& output) {
  std::vector<RunResult> rows;
  for (const auto& path : results) {
    auto part = parse_results_csv(read_text(path));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::optional<RdCurve> curve;
  if (!oracle.empty()) curve = parse_rd_csv(read_text(oracle));
  const Plot plot = plot_rd(rows, curve);
  write_text(output + ".svg", plot.svg);
  write_text(output + ".csv", plot.csv);
  std::cout << "wrote " << output << ".svg and " << output << ".csv\n";
  return kExitOk;
}

int cmd_gradcheck(const GradSuiteOptions& options, bool verbose) {
  const GradSuiteReport report = run_gradient_suite(options);
  std::map<std::string, double> worst_by_case;
  for (const auto& c : report.cases) {
    auto& w = worst_by_case[c.name];
    w = std::max(w, c.report.max_relative_error);
    if (verbose) {
      std::cout << c.name << " seed " << c.seed << " max_rel " << c.report.max_relative_error
                << (c.report.passed ? "" : "  FAILED") << "\n";
    }
  }
  for (const auto& [name, worst] : worst_by_case) {
    std::cout << std::left << std::setw(28) << name << " worst relative error " << worst
              << (worst < options.tolerance ? "" : "  FAILED") << "\n";
  }
  const bool ok = report.passed();
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (" << options.seeds
            << " seeds, tolerance " << options.tolerance << ")\n";
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated nonlinear transform coding testbed"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::string run_name;
  std::size_t threads = 0;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "run an experiment sweep (lambda x seed)");
  train_args.attach(train);
  train->add_option("--run-name", run_name, "run directory name (default: timestamp)");
  train->add_option("--threads", threads, "concurrent sweep points (default: FNTC_THREADS)");
  train->add_flag("-v,--verbose", verbose, "per-round progress on stderr");

  ConfigArgs eval_args;
  std::string point_dir;
  auto* eval = app.add_subcommand("eval", "re-evaluate a trained point from its checkpoints");
  eval_args.attach(eval, false);
  eval->add_option("--run", point_dir, "point directory (contains final.json)")->required();

  std::string oracle_config, oracle_variances, oracle_output;
  std::vector<std::string> oracle_overrides;
  double d_min = 0.0, d_max = 0.0;
  std::size_t oracle_points = 50;
  auto* oracle = app.add_subcommand("oracle", "emit the analytic R^fed(D) curve as CSV");
  oracle->add_option("-c,--config", oracle_config, "experiment INI file (synthetic source)");
  oracle->add_option("--set", oracle_overrides, "override, section.key=value");
  oracle->add_option("--variances", oracle_variances, "per-client variances, e.g. \"1,4;1,1\"");
  oracle->add_option("--d-min", d_min, "smallest distortion (default d_max / 1000)");
  oracle->add_option("--d-max", d_max, "largest distortion (default mean variance)");
  oracle->add_option("--points", oracle_points, "grid size")->check(CLI::Range(2, 100000));
  oracle->add_option("-o,--output", oracle_output, "CSV path (default stdout)");

  std::string part_dataset, part_format = "cifar10-binary", dealing = "random", part_output;
  std::size_t part_labels = 0, part_classes = 10, part_clients = 100, part_shards = 2;
  std::uint64_t part_seed = 0;
  bool part_trim = false;
  auto* partition = app.add_subcommand("partition", "label-sorted shard partition");
  partition->add_option("--dataset", part_dataset, "labelled dataset file");
  partition->add_option("--format", part_format, "cifar10-binary | raw-f64");
  partition->add_option("--labels", part_labels, "synthetic balanced label count");
  partition->add_option("--classes", part_classes, "classes of the synthetic label set");
  partition->add_option("-n,--clients", part_clients, "number of clients");
  partition->add_option("-S,--shards", part_shards, "shards per client");
  partition->add_option("--seed", part_seed, "dealing seed");
  partition->add_option("--dealing", dealing, "random | round_robin");
  partition->add_flag("--trim", part_trim, "drop the remainder instead of failing");
  partition->add_option("-o,--output", part_output, "JSON output path");

  std::vector<std::string> plot_results;
  std::string plot_oracle, plot_output = "rd";
  auto* plot = app.add_subcommand("plot", "RD plot (SVG + CSV) from results.csv files");
  plot->add_option("--results", plot_results, "results.csv files")->required();
  plot->add_option("--oracle", plot_oracle, "oracle CSV from the oracle subcommand");
  plot->add_option("-o,--output", plot_output, "output path prefix");

  GradSuiteOptions grad_options;
  bool grad_verbose = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seeds", grad_options.seeds, "number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", grad_options.tolerance, "relative tolerance");
  gradcheck->add_option("--step", grad_options.step, "central difference step");
  gradcheck->add_flag("-v,--verbose", grad_verbose, "one line per case and seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args, run_name, threads, verbose);
    if (*eval) return cmd_eval(eval_args, point_dir);
    if (*oracle) {
      return cmd_oracle(oracle_config, oracle_overrides, oracle_variances, d_min, d_max,
                        oracle_points, oracle_output);
    }
    if (*partition) {
      return cmd_partition(part_dataset, part_format, part_labels, part_classes, part_clients,
                           part_shards, part_seed, dealing, part_trim, part_output);
    }
    if (*plot) return cmd_plot(plot_results, plot_oracle, plot_output);
    if (*gradcheck) return cmd_gradcheck(grad_options, grad_verbose);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PartitionError& e) {
    std::cerr << "partition error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}
