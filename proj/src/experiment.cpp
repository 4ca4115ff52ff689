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

#include "fedntc/experiment.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fedntc/binary_io.hpp"
#include "fedntc/checkpoint.hpp"
#include "fedntc/error.hpp"

namespace fedntc {
namespace {

namespace fs = std::filesystem;
namespace bpt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"regime", "output_dir"}},
      {"source",
       {"kind", "clients", "latent_dim", "ambient_dim", "active_dims", "sigma_high", "sigma_low",
        "separation", "map", "map_hidden", "samples_per_client", "eval_samples", "path",
        "format", "shards_per_client", "patch", "trim", "eval_fraction"}},
      {"model", {"hidden", "latent_dim", "activation", "filters", "entropy_init_scale"}},
      {"training",
       {"rounds", "entropy_steps", "transform_steps", "participation", "optimizer",
        "learning_rate", "entropy_learning_rate", "beta1", "beta2", "epsilon", "lambdas",
        "batch_size", "fedavg_local_steps", "local_steps_per_round", "eval_window",
        "table_precision", "tail_mass", "median_offsets", "threads"}},
      {"seeds", {"master", "replicates"}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + v + "'");
  }
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(d)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  for (const auto& item : split(v, ',')) out.push_back(to_size(key, item));
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  for (const auto& item : split(v, ',')) out.push_back(to_double(key, item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_floating_point_v<T>) {
      os << fmt(items[i]);
    } else {
      os << items[i];
    }
  }
  return os.str();
}

MapKind map_from_string(const std::string& key, const std::string& v) {
  if (v == "orthogonal" || v == "orthogonal-linear" || v == "orthogonal_linear") {
    return MapKind::orthogonal_linear;
  }
  if (v == "mlp" || v == "fixed-mlp" || v == "fixed_mlp") return MapKind::fixed_mlp;
  throw ConfigError(key + ": unknown map '" + v + "' (orthogonal | mlp)");
}

std::string to_string(MapKind m) { return m == MapKind::orthogonal_linear ? "orthogonal" : "mlp"; }

std::string to_string(DatasetFormat f) {
  return f == DatasetFormat::cifar10_binary ? "cifar10-binary" : "raw-f64";
}

std::string to_string(SourceKind k) { return k == SourceKind::synthetic ? "synthetic" : "dataset"; }

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

void check_schema(const bpt::ptree& tree) {
  for (const auto& [section, sub] : tree) {
    const auto it = schema().find(section);
    if (sub.empty() && !sub.data().empty()) {
      throw ConfigError(section + ": key outside of any section");
    }
    if (it == schema().end()) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, value] : sub) {
      if (!it->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
    }
  }
}

void apply_override(bpt::ptree& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  const auto it = schema().find(section);
  if (it == schema().end()) throw ConfigError("unknown section [" + section + "]");
  if (!it->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
  tree.put(bpt::ptree::path_type(section + "/" + key, '/'), value);
}

ExperimentConfig from_tree(const bpt::ptree& tree) {
  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    const auto child = tree.get_child_optional(bpt::ptree::path_type(section + "/" + key, '/'));
    if (!child) return std::nullopt;
    return trim(child->data());
  };
  auto required = [&](const std::string& section, const std::string& key) {
    auto v = get(section, key);
    if (!v || v->empty()) throw ConfigError("missing required key " + section + "." + key);
    return *v;
  };

  ExperimentConfig c;
  try {
    c.regime = regime_from_string(required("experiment", "regime"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("experiment.regime: ") + e.what());
  }
  if (auto v = get("experiment", "output_dir")) c.output_dir = *v;

  auto& s = c.source;
  {
    const std::string kind = required("source", "kind");
    if (kind == "synthetic") {
      s.kind = SourceKind::synthetic;
    } else if (kind == "dataset") {
      s.kind = SourceKind::dataset;
    } else {
      throw ConfigError("source.kind: unknown kind '" + kind + "' (synthetic | dataset)");
    }
  }
  if (auto v = get("source", "clients")) s.clients = to_size("source.clients", *v);
  if (auto v = get("source", "latent_dim")) s.latent_dim = to_size("source.latent_dim", *v);
  if (auto v = get("source", "ambient_dim")) s.ambient_dim = to_size("source.ambient_dim", *v);
  if (auto v = get("source", "active_dims")) s.active_dims = to_size("source.active_dims", *v);
  if (auto v = get("source", "sigma_high")) s.sigma_high = to_double("source.sigma_high", *v);
  if (auto v = get("source", "sigma_low")) s.sigma_low = to_double("source.sigma_low", *v);
  if (auto v = get("source", "separation")) s.separation = to_double("source.separation", *v);
  if (auto v = get("source", "map")) s.map = map_from_string("source.map", *v);
  if (auto v = get("source", "map_hidden")) s.map_hidden = to_size_list("source.map_hidden", *v);
  if (auto v = get("source", "samples_per_client")) {
    s.samples_per_client = to_size("source.samples_per_client", *v);
  }
  if (auto v = get("source", "eval_samples")) s.eval_samples = to_size("source.eval_samples", *v);
  if (auto v = get("source", "path")) s.path = *v;
  if (auto v = get("source", "format")) {
    try {
      s.format = dataset_format_from_string(*v);
    } catch (const Error& e) {
      throw ConfigError(std::string("source.format: ") + e.what());
    }
  }
  if (auto v = get("source", "shards_per_client")) {
    s.shards_per_client = to_size("source.shards_per_client", *v);
  }
  if (auto v = get("source", "patch")) s.patch = to_size("source.patch", *v);
  if (auto v = get("source", "trim")) s.trim = to_bool("source.trim", *v);
  if (auto v = get("source", "eval_fraction")) {
    s.eval_fraction = to_double("source.eval_fraction", *v);
  }

  auto& m = c.model;
  if (auto v = get("model", "hidden")) m.hidden = to_size_list("model.hidden", *v);
  if (auto v = get("model", "latent_dim")) m.latent_dim = to_size("model.latent_dim", *v);
  if (auto v = get("model", "activation")) {
    try {
      m.activation = activation_from_string(*v);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.activation: ") + e.what());
    }
  }
  if (auto v = get("model", "filters")) m.entropy.filters = to_size_list("model.filters", *v);
  if (auto v = get("model", "entropy_init_scale")) {
    m.entropy.init_scale = to_double("model.entropy_init_scale", *v);
  }

  auto& t = c.training;
  if (auto v = get("training", "rounds")) t.rounds = to_size("training.rounds", *v);
  if (auto v = get("training", "entropy_steps")) {
    t.entropy_steps = to_size("training.entropy_steps", *v);
  }
  if (auto v = get("training", "transform_steps")) {
    t.transform_steps = to_size("training.transform_steps", *v);
  }
  if (auto v = get("training", "participation")) {
    t.participation = to_double("training.participation", *v);
  }
  if (auto v = get("training", "optimizer")) {
    if (*v == "adam") {
      t.optimizer.kind = OptimizerKind::adam;
    } else if (*v == "sgd") {
      t.optimizer.kind = OptimizerKind::sgd;
    } else {
      throw ConfigError("training.optimizer: unknown optimizer '" + *v + "' (sgd | adam)");
    }
  }
  if (auto v = get("training", "learning_rate")) {
    t.optimizer.learning_rate = to_double("training.learning_rate", *v);
  }
  if (auto v = get("training", "entropy_learning_rate")) {
    t.entropy_learning_rate = to_double("training.entropy_learning_rate", *v);
  }
  if (auto v = get("training", "beta1")) t.optimizer.beta1 = to_double("training.beta1", *v);
  if (auto v = get("training", "beta2")) t.optimizer.beta2 = to_double("training.beta2", *v);
  if (auto v = get("training", "epsilon")) t.optimizer.epsilon = to_double("training.epsilon", *v);
  if (auto v = get("training", "lambdas")) c.lambdas = to_double_list("training.lambdas", *v);
  if (auto v = get("training", "batch_size")) t.batch_size = to_size("training.batch_size", *v);
  if (auto v = get("training", "fedavg_local_steps")) {
    t.fedavg_local_steps = to_size("training.fedavg_local_steps", *v);
  }
  if (auto v = get("training", "local_steps_per_round")) {
    t.local_steps_per_round = to_size("training.local_steps_per_round", *v);
  }
  if (auto v = get("training", "eval_window")) t.eval_window = to_size("training.eval_window", *v);
  if (auto v = get("training", "table_precision")) {
    t.table_precision = static_cast<unsigned>(to_size("training.table_precision", *v));
  }
  if (auto v = get("training", "tail_mass")) t.tail_mass = to_double("training.tail_mass", *v);
  if (auto v = get("training", "median_offsets")) {
    t.median_offsets = to_bool("training.median_offsets", *v);
  }
  if (auto v = get("training", "threads")) t.threads = to_size("training.threads", *v);

  c.master_seed = to_u64("seeds.master", required("seeds", "master"));
  if (auto v = get("seeds", "replicates")) c.replicates = to_size("seeds.replicates", *v);
  return c;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_directory(const fs::path& root, const std::string& name) {
  fs::path dir;
  if (!name.empty()) {
    dir = root / name;
    if (fs::exists(dir)) throw IoError("run directory " + dir.string() + " already exists");
  } else {
    const std::string base = "run-" + utc_stamp();
    dir = root / base;
    for (int k = 2; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

void SourceConfig::validate() const {
  if (clients == 0) throw ConfigError("source.clients must be >= 1");
  if (kind == SourceKind::synthetic) {
    if (latent_dim == 0) throw ConfigError("source.latent_dim must be >= 1");
    if (ambient_dim < latent_dim) throw ConfigError("source.ambient_dim must be >= latent_dim");
    if (active_dims == 0 || active_dims > latent_dim) {
      throw ConfigError("source.active_dims must be in [1, latent_dim]");
    }
    if (!(sigma_high > 0.0)) throw ConfigError("source.sigma_high must be positive");
    if (!(sigma_low > 0.0)) throw ConfigError("source.sigma_low must be positive");
    if (!(separation >= 0.0 && separation <= 1.0)) {
      throw ConfigError("source.separation must be in [0, 1]");
    }
    if (map == MapKind::fixed_mlp) {
      for (auto w : map_hidden) {
        if (w == 0) throw ConfigError("source.map_hidden widths must be >= 1");
      }
    }
    if (samples_per_client == 0) throw ConfigError("source.samples_per_client must be >= 1");
    if (eval_samples == 0) throw ConfigError("source.eval_samples must be >= 1");
  } else {
    if (path.empty()) throw ConfigError("source.path is required for kind = dataset");
    if (shards_per_client == 0) throw ConfigError("source.shards_per_client must be >= 1");
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
      throw ConfigError("source.eval_fraction must be in [0, 1)");
    }
    if (patch != 0 && 32 % patch != 0) throw ConfigError("source.patch must divide 32");
  }
}

void ExperimentConfig::validate() const {
  source.validate();
  model.validate();
  training.validate(source.clients);
  training.participants(source.clients);
  if (lambdas.empty()) throw ConfigError("training.lambdas must list at least one value");
  for (double l : lambdas) {
    if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("training.lambdas must be positive");
  }
  if (replicates == 0) throw ConfigError("seeds.replicates must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  bpt::ptree tree;
  std::istringstream in(text);
  try {
    bpt::read_ini(in, tree);
  } catch (const bpt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  check_schema(tree);
  for (const auto& o : overrides) apply_override(tree, o);
  ExperimentConfig config = from_tree(tree);
  config.validate();
  return config;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), overrides);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto& s = c.source;
  const auto& m = c.model;
  const auto& t = c.training;
  os << "[experiment]\n"
     << "regime = " << to_string(c.regime) << "\n"
     << "output_dir = " << c.output_dir.string() << "\n\n"
     << "[source]\n"
     << "kind = " << to_string(s.kind) << "\n"
     << "clients = " << s.clients << "\n"
     << "latent_dim = " << s.latent_dim << "\n"
     << "ambient_dim = " << s.ambient_dim << "\n"
     << "active_dims = " << s.active_dims << "\n"
     << "sigma_high = " << fmt(s.sigma_high) << "\n"
     << "sigma_low = " << fmt(s.sigma_low) << "\n"
     << "separation = " << fmt(s.separation) << "\n"
     << "map = " << to_string(s.map) << "\n"
     << "map_hidden = " << join(s.map_hidden) << "\n"
     << "samples_per_client = " << s.samples_per_client << "\n"
     << "eval_samples = " << s.eval_samples << "\n"
     << "path = " << s.path.string() << "\n"
     << "format = " << to_string(s.format) << "\n"
     << "shards_per_client = " << s.shards_per_client << "\n"
     << "patch = " << s.patch << "\n"
     << "trim = " << (s.trim ? "true" : "false") << "\n"
     << "eval_fraction = " << fmt(s.eval_fraction) << "\n\n"
     << "[model]\n"
     << "hidden = " << join(m.hidden) << "\n"
     << "latent_dim = " << m.latent_dim << "\n"
     << "activation = " << to_string(m.activation) << "\n"
     << "filters = " << join(m.entropy.filters) << "\n"
     << "entropy_init_scale = " << fmt(m.entropy.init_scale) << "\n\n"
     << "[training]\n"
     << "rounds = " << t.rounds << "\n"
     << "entropy_steps = " << t.entropy_steps << "\n"
     << "transform_steps = " << t.transform_steps << "\n"
     << "participation = " << fmt(t.participation) << "\n"
     << "optimizer = " << to_string(t.optimizer.kind) << "\n"
     << "learning_rate = " << fmt(t.optimizer.learning_rate) << "\n"
     << "entropy_learning_rate = " << fmt(t.entropy_learning_rate) << "\n"
     << "beta1 = " << fmt(t.optimizer.beta1) << "\n"
     << "beta2 = " << fmt(t.optimizer.beta2) << "\n"
     << "epsilon = " << fmt(t.optimizer.epsilon) << "\n"
     << "lambdas = " << join(c.lambdas) << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "fedavg_local_steps = " << t.fedavg_local_steps << "\n"
     << "local_steps_per_round = " << t.local_steps_per_round << "\n"
     << "eval_window = " << t.eval_window << "\n"
     << "table_precision = " << t.table_precision << "\n"
     << "tail_mass = " << fmt(t.tail_mass) << "\n"
     << "median_offsets = " << (t.median_offsets ? "true" : "false") << "\n"
     << "threads = " << t.threads << "\n\n"
     << "[seeds]\n"
     << "master = " << c.master_seed << "\n"
     << "replicates = " << c.replicates << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

SourceSpec synthetic_spec(const SourceConfig& source, std::uint64_t seed) {
  SourceSpec spec;
  spec.latent_dim = source.latent_dim;
  spec.ambient_dim = source.ambient_dim;
  spec.sigmas = block_variance_profiles(source.clients, source.latent_dim, source.active_dims,
                                        source.sigma_high, source.sigma_low, source.separation);
  const std::uint64_t map_seed = derive_seed(seed, {99});
  spec.map = source.map == MapKind::orthogonal_linear
                 ? GenerativeMap::orthogonal(source.latent_dim, source.ambient_dim, map_seed)
                 : GenerativeMap::mlp(source.latent_dim, source.ambient_dim, source.map_hidden,
                                      map_seed);
  spec.validate();
  return spec;
}

ClientData build_client_data(const SourceConfig& source, std::uint64_t seed) {
  source.validate();
  ClientData out;
  if (source.kind == SourceKind::synthetic) {
    SourceSpec spec = synthetic_spec(source, seed);
    for (auto& shard : gen_synthetic(spec, source.samples_per_client, derive_seed(seed, {1}))) {
      out.train.push_back(std::make_shared<const Dataset>(std::move(shard.data)));
    }
    for (auto& shard : gen_synthetic(spec, source.eval_samples, derive_seed(seed, {2}))) {
      out.eval.push_back(std::make_shared<const Dataset>(std::move(shard.data)));
    }
    out.spec = std::move(spec);
    return out;
  }

  Dataset all = load_image_dataset(source.path, source.format);
  if (source.patch != 0) {
    if (all.dim() != kCifarImageBytes) {
      throw ConfigError("source.patch needs 3x32x32 images, dataset has dimension " +
                        std::to_string(all.dim()));
    }
    all = extract_patches(all, 32, 3, source.patch);
  }
  if (all.labels.empty()) throw ConfigError("source.path: dataset has no labels to partition");
  const PartitionPlan plan = partition_non_iid(all.labels, source.clients,
                                               source.shards_per_client, derive_seed(seed, {3}),
                                               ShardDealing::random, source.trim);
  for (std::size_t i = 0; i < plan.assignments.size(); ++i) {
    std::vector<std::size_t> idx = plan.assignments[i];
    Rng rng(derive_seed(seed, {4, i}));
    rng.shuffle(idx);
    const auto held = static_cast<std::size_t>(
        std::floor(source.eval_fraction * static_cast<double>(idx.size())));
    if (held == 0 || held >= idx.size()) {
      auto shard = std::make_shared<const Dataset>(subset(all, idx));
      out.train.push_back(shard);
      out.eval.push_back(shard);
      continue;
    }
    const std::vector<std::size_t> train_idx(idx.begin(), idx.end() - static_cast<long>(held));
    const std::vector<std::size_t> eval_idx(idx.end() - static_cast<long>(held), idx.end());
    out.train.push_back(std::make_shared<const Dataset>(subset(all, train_idx)));
    out.eval.push_back(std::make_shared<const Dataset>(subset(all, eval_idx)));
  }
  return out;
}

std::uint64_t replicate_seed(std::uint64_t master, std::size_t replicate) {
  return derive_seed(master, {static_cast<std::uint64_t>(replicate)});
}

RunResult run_point(const ExperimentConfig& config, double lambda, std::size_t replicate,
                    const RoundCallback& on_round, Setup* final_state) {
  config.validate();
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
  const std::uint64_t seed = replicate_seed(config.master_seed, replicate);
  const ClientData data = build_client_data(config.source, seed);
  TrainingConfig training = config.training;
  training.lambda = lambda;
  Setup setup = make_setup(config.regime, config.model, training, data.train, data.eval, seed);
  const TrainingTrace trace = train(setup.server, setup.clients, on_round);

  RunResult r;
  r.regime = config.regime;
  r.lambda = lambda;
  r.replicate = replicate;
  r.seed = seed;
  r.point = trace.final_point(training.eval_window);
  r.psnr = 10.0 * std::log10(1.0 / std::max(r.point.distortion, 1e-300));
  r.dims = data.train.front()->dim();
  if (data.spec && data.spec->map.kind() == MapKind::orthogonal_linear &&
      data.spec->latent_dim == data.spec->ambient_dim && r.point.distortion > 0.0) {
    r.oracle_rate = fed_rd(data.spec->variances(), r.point.distortion);
  }
  if (final_state != nullptr) *final_state = std::move(setup);
  return r;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("FNTC_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

std::string point_directory_name(double lambda, std::size_t replicate) {
  std::ostringstream os;
  os << "lambda-" << lambda << "_rep-" << replicate;
  return os.str();
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunSummary summary;
  summary.directory = make_run_directory(config.output_dir, options.run_name);

  std::vector<std::pair<double, std::size_t>> points;
  for (double lambda : config.lambdas) {
    for (std::size_t k = 0; k < config.replicates; ++k) points.emplace_back(lambda, k);
  }
  summary.results.resize(points.size());
  const std::size_t threads = options.threads != 0 ? options.threads : threads_from_env();
  std::mutex log_mutex;

  parallel_for(points.size(), threads, [&](std::size_t p) {
    const auto [lambda, k] = points[p];
    const fs::path dir = summary.directory / point_directory_name(lambda, k);
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream trace(dir / "trace.jsonl");
    if (!trace) throw IoError("cannot open " + (dir / "trace.jsonl").string());

    Setup final_state;
    summary.results[p] = run_point(
        config, lambda, k,
        [&](const RoundRecord& record) {
          trace << to_json_line(record) << '\n';
          trace.flush();
          if (!trace) throw IoError("error writing " + (dir / "trace.jsonl").string());
          if (!options.quiet) {
            std::lock_guard lock(log_mutex);
            std::cerr << "lambda " << lambda << " rep " << k << " round " << record.round << "/"
                      << config.training.rounds << " loss " << record.loss << "\n";
          }
        },
        &final_state);

    save_checkpoint(dir / "checkpoints" / "global.fntc", server_checkpoint(final_state.server));
    for (const auto& c : final_state.clients) {
      save_checkpoint(dir / "checkpoints" / ("client-" + std::to_string(c.id) + ".fntc"),
                      client_checkpoint(c, config.regime));
    }
    const RunResult& r = summary.results[p];
    nlohmann::ordered_json j;
    j["regime"] = to_string(r.regime);
    j["lambda"] = r.lambda;
    j["replicate"] = r.replicate;
    j["seed"] = r.seed;
    j["round"] = r.point.round;
    j["R_n"] = r.point.rate;
    j["D_n"] = r.point.distortion;
    j["loss"] = r.point.loss;
    j["psnr"] = r.psnr;
    j["window"] = config.training.eval_window;
    if (r.oracle_rate) j["oracle_rate_bits_per_dim"] = *r.oracle_rate;
    write_text(dir / "final.json", j.dump(2) + "\n");
  });

  write_text(summary.directory / "results.csv", results_csv(summary.results));
  write_text(summary.directory / "config.ini", to_ini(config));
  return summary;
}

namespace {
constexpr const char* kResultsHeader =
    "regime,lambda,replicate,seed,round,rate_bits_per_sample,rate_bits_per_dim,distortion,loss,"
    "psnr,dims,oracle_rate_bits_per_dim";
}

std::string results_csv(const std::vector<RunResult>& results) {
  std::ostringstream os;
  os << kResultsHeader << "\n" << std::setprecision(17);
  for (const auto& r : results) {
    const double per_dim = r.dims ? r.point.rate / static_cast<double>(r.dims) : 0.0;
    os << to_string(r.regime) << ',' << r.lambda << ',' << r.replicate << ',' << r.seed << ','
       << r.point.round << ',' << r.point.rate << ',' << per_dim << ',' << r.point.distortion
       << ',' << r.point.loss << ',' << r.psnr << ',' << r.dims << ',';
    if (r.oracle_rate) os << *r.oracle_rate;
    os << '\n';
  }
  return os.str();
}

std::vector<RunResult> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kResultsHeader) {
    throw FormatError("results.csv: unexpected header");
  }
  std::vector<RunResult> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 12) {
      throw FormatError("results.csv line " + std::to_string(line_no) + ": expected 12 fields");
    }
    try {
      RunResult r;
      r.regime = regime_from_string(f[0]);
      r.lambda = to_double("lambda", f[1]);
      r.replicate = to_size("replicate", f[2]);
      r.seed = to_u64("seed", f[3]);
      r.point.round = to_size("round", f[4]);
      r.point.rate = to_double("rate", f[5]);
      r.point.distortion = to_double("distortion", f[7]);
      r.point.loss = to_double("loss", f[8]);
      r.psnr = to_double("psnr", f[9]);
      r.dims = to_size("dims", f[10]);
      if (!f[11].empty()) r.oracle_rate = to_double("oracle", f[11]);
      r.point.lambda = r.lambda;
      r.point.regime = r.regime;
      out.push_back(r);
    } catch (const ConfigError& e) {
      throw FormatError("results.csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

RdCurve parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "D,R,provenance") {
    throw FormatError("RD curve CSV: expected header D,R,provenance");
  }
  RdCurve curve;
  bool first = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 3) {
      throw FormatError("RD curve CSV line " + std::to_string(line_no) + ": expected 3 fields");
    }
    Provenance p;
    if (f[2] == "analytic") {
      p = Provenance::analytic;
    } else if (f[2] == "empirical") {
      p = Provenance::empirical;
    } else if (f[2] == "trained") {
      p = Provenance::trained;
    } else {
      throw FormatError("RD curve CSV line " + std::to_string(line_no) + ": bad provenance");
    }
    if (first) curve.provenance = p;
    first = false;
    try {
      curve.points.push_back({to_double("D", f[0]), to_double("R", f[1])});
    } catch (const ConfigError& e) {
      throw FormatError("RD curve CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return curve;
}

Plot plot_rd(const std::vector<RunResult>& results, const std::optional<RdCurve>& oracle) {
  if (results.empty()) throw ConfigError("plot: no result rows");
  Plot plot;
  for (Regime regime : {Regime::local, Regime::fed, Regime::fedavg}) {
    PlotSeries s;
    s.name = to_string(regime);
    for (const auto& r : results) {
      if (r.regime != regime) continue;
      const double dims = r.dims ? static_cast<double>(r.dims) : 1.0;
      s.points.push_back({r.point.distortion, r.point.rate / dims});
    }
    if (s.points.empty()) continue;
    std::sort(s.points.begin(), s.points.end(),
              [](const RdSample& a, const RdSample& b) { return a.distortion < b.distortion; });
    plot.series.push_back(std::move(s));
  }
  if (oracle && !oracle->points.empty()) {
    PlotSeries s;
    s.name = "oracle";
    s.dashed = true;
    s.points = oracle->points;
    std::sort(s.points.begin(), s.points.end(),
              [](const RdSample& a, const RdSample& b) { return a.distortion < b.distortion; });
    plot.series.push_back(std::move(s));
  }

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : plot.series) {
    for (const auto& p : s.points) {
      x0 = std::min(x0, p.distortion);
      x1 = std::max(x1, p.distortion);
      y0 = std::min(y0, p.rate);
      y1 = std::max(y1, p.rate);
    }
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double margin = span > 0.0 ? 0.05 * span : std::max(std::abs(lo) * 0.1, 0.5);
    lo -= margin;
    hi += margin;
  };
  pad(x0, x1);
  pad(y0, y1);

  constexpr double W = 720, H = 480, L = 72, R = 150, T = 30, B = 56;
  const double pw = W - L - R, ph = H - T - B;
  auto sx = [&](double d) { return L + (d - x0) / (x1 - x0) * pw; };
  auto sy = [&](double r) { return T + ph - (r - y0) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#444444"};

  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<line x1=\"" << sx(xv) << "\" y1=\"" << T + ph << "\" x2=\"" << sx(xv) << "\" y2=\""
        << T + ph + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << sx(xv) << "\" y=\"" << T + ph + 19
        << "\" text-anchor=\"middle\">" << std::setprecision(3) << xv << std::setprecision(6)
        << "</text>\n"
        << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << L << "\" y2=\""
        << sy(yv) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(3) << yv << std::setprecision(6) << "</text>\n";
  }
  svg << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\">distortion (MSE)</text>\n"
      << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << T + ph / 2 << ")\">rate (bits per dimension)</text>\n";

  std::ostringstream csv;
  csv << "series,D,R\n" << std::setprecision(17);
  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const auto& s = plot.series[i];
    const char* color = s.dashed ? colors[3] : colors[i % 3];
    if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
      if (s.dashed) svg << " stroke-dasharray=\"6 4\"";
      svg << " points=\"";
      for (const auto& p : s.points) svg << sx(p.distortion) << ',' << sy(p.rate) << ' ';
      svg << "\"/>\n";
    }
    for (const auto& p : s.points) {
      if (!s.dashed || s.points.size() == 1) {
        svg << "<circle cx=\"" << sx(p.distortion) << "\" cy=\"" << sy(p.rate)
            << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
      }
      csv << s.name << ',' << p.distortion << ',' << p.rate << '\n';
    }
    const double ly = T + 14 + 18 * static_cast<double>(i);
    svg << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 36
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"";
    if (s.dashed) svg << " stroke-dasharray=\"6 4\"";
    svg << "/>\n<text x=\"" << L + pw + 42 << "\" y=\"" << ly << "\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";
  plot.svg = svg.str();
  plot.csv = csv.str();
  return plot;
}

}  // namespace fedntc
