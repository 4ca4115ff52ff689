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

// Experiment configuration, data setup, sweeps and RD plots.
//
// Configs are INI files:
//
//   [experiment]  regime, output_dir
//   [source]      kind = synthetic | dataset, plus the keys of SourceConfig
//   [model]       hidden, latent_dim, activation, filters, entropy_init_scale
//   [training]    rounds, entropy_steps, transform_steps, participation,
//                 optimizer, learning_rate, entropy_learning_rate, beta1,
//                 beta2, epsilon, lambdas, batch_size, fedavg_local_steps,
//                 local_steps_per_round, eval_window, table_precision,
//                 tail_mass, median_offsets, threads
//   [seeds]       master, replicates
//
// experiment.regime, source.kind and seeds.master are required. Unknown
// sections or keys are rejected with their key path.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedntc/federation.hpp"
#include "fedntc/oracle.hpp"
#include "fedntc/sources.hpp"

namespace fedntc {

enum class SourceKind { synthetic, dataset };

struct SourceConfig {
  SourceKind kind = SourceKind::synthetic;

  // synthetic
  std::size_t clients = 2;
  std::size_t latent_dim = 16;
  std::size_t ambient_dim = 16;
  std::size_t active_dims = 4;
  double sigma_high = 16.0;
  double sigma_low = 1.0;
  double separation = 1.0;
  MapKind map = MapKind::orthogonal_linear;
  std::vector<std::size_t> map_hidden{32};  // fixed-mlp only
  std::size_t samples_per_client = 50;
  std::size_t eval_samples = 500;  // held-out samples per client

  // dataset
  std::filesystem::path path;
  DatasetFormat format = DatasetFormat::cifar10_binary;
  std::size_t shards_per_client = 2;
  std::size_t patch = 0;  // 0 keeps whole images
  bool trim = true;
  double eval_fraction = 0.1;  // tail of each client's shard held out

  void validate() const;
  bool operator==(const SourceConfig&) const = default;
};

struct ExperimentConfig {
  Regime regime = Regime::fed;
  std::filesystem::path output_dir = "runs";
  SourceConfig source;
  ModelConfig model;
  TrainingConfig training;
  std::vector<double> lambdas{0.001, 0.01, 0.1, 1.0, 10.0};
  std::uint64_t master_seed = 0;
  std::size_t replicates = 1;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Parses INI text; `overrides` are "section.key=value" strings applied on
// top. Throws ConfigError naming the key path.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});
// Canonical INI rendering of every key; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

// Client data for one replicate.
struct ClientData {
  std::vector<std::shared_ptr<const Dataset>> train;
  std::vector<std::shared_ptr<const Dataset>> eval;
  // Per-client latent variances and the map, for synthetic sources.
  std::optional<SourceSpec> spec;
};

// Synthetic: map seed derive_seed(seed, {99}), training shards from
// derive_seed(seed, {1}) and held-out shards from derive_seed(seed, {2}).
ClientData build_client_data(const SourceConfig& source, std::uint64_t seed);
SourceSpec synthetic_spec(const SourceConfig& source, std::uint64_t seed);

// Seed of replicate k.
std::uint64_t replicate_seed(std::uint64_t master, std::size_t replicate);

struct RunResult {
  Regime regime = Regime::fed;
  double lambda = 0.0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  RDPoint point;
  double psnr = 0.0;
  std::size_t dims = 0;                // source dimension, for per-dimension rates
  std::optional<double> oracle_rate;   // R^fed(D) in bits per dimension, synthetic only
};

// Trains one (lambda, replicate) point. `on_round` sees every round record.
RunResult run_point(const ExperimentConfig& config, double lambda, std::size_t replicate,
                    const RoundCallback& on_round = {}, Setup* final_state = nullptr);

struct RunOptions {
  // Directory name under output_dir; empty picks run-<UTC timestamp>, with a
  // numeric suffix if it already exists.
  std::string run_name;
  // Concurrent sweep points; 0 reads FNTC_THREADS (default 1).
  std::size_t threads = 0;
  bool quiet = true;
};

struct RunSummary {
  std::filesystem::path directory;
  std::vector<RunResult> results;
};

// For each lambda x replicate: trains, writes <point>/trace.jsonl,
// <point>/checkpoints/{global,client-<id>}.fntc and <point>/final.json;
// then results.csv and config.ini in the run directory. Never overwrites an
// existing run directory.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::string point_directory_name(double lambda, std::size_t replicate);
std::string results_csv(const std::vector<RunResult>& results);
std::vector<RunResult> parse_results_csv(const std::string& text);

// Thread count from FNTC_THREADS; 1 when unset or invalid.
std::size_t threads_from_env();

// ---------------------------------------------------------------------------
// Plotting

struct PlotSeries {
  std::string name;
  std::vector<RdSample> points;  // rate in bits per dimension
  bool dashed = false;
};

struct Plot {
  std::vector<PlotSeries> series;
  std::string svg;
  std::string csv;  // series,D,R for every plotted point
};

// One series per regime, oracle overlay dashed. Throws ConfigError on empty
// input.
Plot plot_rd(const std::vector<RunResult>& results, const std::optional<RdCurve>& oracle = {});
RdCurve parse_rd_csv(const std::string& text);

}  // namespace fedntc
