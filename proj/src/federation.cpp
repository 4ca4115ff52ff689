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

#include "fedntc/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <json.hpp>
#include <numeric>
#include <thread>

#include "fedntc/codec.hpp"
#include "fedntc/error.hpp"

namespace fedntc {

namespace {

// Stream tags mixed into derive_seed.
constexpr std::uint64_t kTransformInitTag = 0x7a11;
constexpr std::uint64_t kEntropyInitTag = 0xe417;
constexpr std::uint64_t kParticipationTag = 0x9a27;
constexpr std::uint64_t kLocalTag = 1;
constexpr std::uint64_t kFedTag = 2;
constexpr std::uint64_t kFedAvgTag = 3;

bool has(ParamGroup groups, ParamGroup g) {
  return (static_cast<unsigned>(groups) & static_cast<unsigned>(g)) != 0;
}

Tensor sample_batch(const Dataset& data, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = rng.index(data.size());
  return gather_rows(data.samples, rows);
}

Tensor uniform_noise(const Shape& shape, Rng& rng) {
  Tensor noise(shape);
  for (auto& v : noise.data()) v = rng.uniform() - 0.5;
  return noise;
}

std::vector<ParamRef> transform_refs(TransformParams& g_a, TransformParams& g_s) {
  std::vector<ParamRef> refs;
  for (auto& p : g_a.parameters()) refs.push_back({"g_a/" + p.name, p.tensor});
  for (auto& p : g_s.parameters()) refs.push_back({"g_s/" + p.name, p.tensor});
  return refs;
}

std::vector<ConstParamRef> transform_refs(const TransformParams& g_a, const TransformParams& g_s) {
  std::vector<ConstParamRef> refs;
  for (const auto& p : g_a.parameters()) refs.push_back({"g_a/" + p.name, p.tensor});
  for (const auto& p : g_s.parameters()) refs.push_back({"g_s/" + p.name, p.tensor});
  return refs;
}

std::vector<ParamRef> entropy_refs(FactorizedEntropyModel& m) {
  std::vector<ParamRef> refs;
  for (auto& p : m.parameters()) refs.push_back({"entropy/" + p.name, p.tensor});
  return refs;
}

std::vector<ConstParamRef> entropy_refs(const FactorizedEntropyModel& m) {
  std::vector<ConstParamRef> refs;
  for (const auto& p : m.parameters()) refs.push_back({"entropy/" + p.name, p.tensor});
  return refs;
}

void step_entropy(ClientState& c, const ObjectiveGrad& g) {
  const auto params = entropy_refs(c.entropy);
  const auto grads = entropy_refs(g.entropy);
  c.entropy_opt.step(params, grads);
}

void step_transforms(ClientState& c, const ObjectiveGrad& g) {
  const auto params = transform_refs(c.g_a, c.g_s);
  const auto grads = transform_refs(g.g_a, g.g_s);
  c.transform_opt.step(params, grads);
}

// Joint step on the client's own g_a, g_s and entropy model.
void joint_step(ClientState& c, const TrainingConfig& cfg, Rng& rng) {
  const Tensor x = sample_batch(*c.train, cfg.batch_size, rng);
  const Tensor noise = uniform_noise({x.rows(), c.g_a.output_dim()}, rng);
  const auto g = client_objective_grad(x, c.g_a, c.g_s, c.entropy, cfg.lambda, noise);
  step_entropy(c, g);
  step_transforms(c, g);
}

// Entropy-model-only step against the given transforms.
void entropy_step(ClientState& c, const TransformParams& g_a, const TransformParams& g_s,
                  const TrainingConfig& cfg, Rng& rng) {
  const Tensor x = sample_batch(*c.train, cfg.batch_size, rng);
  const Tensor noise = uniform_noise({x.rows(), g_a.output_dim()}, rng);
  const auto g =
      client_objective_grad(x, g_a, g_s, c.entropy, cfg.lambda, noise, ParamGroup::entropy);
  step_entropy(c, g);
}

// Transform-only step on the client's scratch transforms.
void transform_step(ClientState& c, const TrainingConfig& cfg, Rng& rng) {
  const Tensor x = sample_batch(*c.train, cfg.batch_size, rng);
  const Tensor noise = uniform_noise({x.rows(), c.g_a.output_dim()}, rng);
  const auto g =
      client_objective_grad(x, c.g_a, c.g_s, c.entropy, cfg.lambda, noise, ParamGroup::transforms);
  step_transforms(c, g);
}

template <typename Fn>
void with_client_context(const ClientState& c, Fn&& fn) {
  try {
    fn();
  } catch (const TrainingError& e) {
    throw TrainingError("client " + std::to_string(c.id) + ": " + e.what());
  }
}

void check_clients(const std::vector<ClientState>& clients) {
  if (clients.empty()) throw ConfigError("no clients");
  for (const auto& c : clients) {
    if (!c.train || c.train->size() == 0) {
      throw ConfigError("client " + std::to_string(c.id) + " has an empty training shard");
    }
  }
}

template <typename Model>
void average_params(std::vector<ConstParamRef> (*refs)(const Model&),
                    const std::vector<const Model*>& items, Model& out) {
  const std::size_t k = items.size();
  std::vector<std::vector<ConstParamRef>> sources;
  sources.reserve(k);
  for (const auto* item : items) sources.push_back(refs(*item));
  auto dest = out.parameters();
  std::vector<double> column(k);
  for (std::size_t p = 0; p < dest.size(); ++p) {
    for (std::size_t i = 0; i < k; ++i) {
      if (sources[i].size() != dest.size() ||
          sources[i][p].tensor->shape() != dest[p].tensor->shape()) {
        throw DimensionError("average: parameter sets do not share one architecture");
      }
    }
    auto target = dest[p].tensor->data();
    for (std::size_t e = 0; e < target.size(); ++e) {
      for (std::size_t i = 0; i < k; ++i) column[i] = (*sources[i][p].tensor)[e];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      target[e] = sum / static_cast<double>(k);
    }
  }
}

std::vector<ConstParamRef> const_transform_refs(const TransformParams& t) {
  return t.parameters();
}

std::vector<ConstParamRef> const_entropy_refs(const FactorizedEntropyModel& m) {
  return m.parameters();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Regime r) {
  switch (r) {
    case Regime::local: return "local";
    case Regime::fed: return "fed";
    case Regime::fedavg: return "fedavg";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& name) {
  if (name == "local") return Regime::local;
  if (name == "fed") return Regime::fed;
  if (name == "fedavg") return Regime::fedavg;
  throw ConfigError("unknown regime '" + name + "' (expected local, fed or fedavg)");
}

void ModelConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("model.latent_dim must be >= 1");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("model.hidden widths must be >= 1");
  }
  if (entropy.filters.empty()) throw ConfigError("model.filters must be non-empty");
  for (auto f : entropy.filters) {
    if (f == 0 || f > kMaxFilterWidth) {
      throw ConfigError("model.filters entries must be in [1, " +
                        std::to_string(kMaxFilterWidth) + "]");
    }
  }
  if (!(entropy.init_scale > 0.0) || !std::isfinite(entropy.init_scale)) {
    throw ConfigError("model.entropy_init_scale must be positive");
  }
}

void TrainingConfig::validate(std::size_t clients) const {
  if (clients == 0) throw ConfigError("training: no clients");
  if (rounds == 0) throw ConfigError("training.rounds must be >= 1");
  if (entropy_steps == 0) throw ConfigError("training.entropy_steps must be >= 1");
  if (transform_steps == 0) throw ConfigError("training.transform_steps must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ConfigError("training.participation must be in (0, 1]");
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("training.lambda must be positive");
  }
  if (!(optimizer.learning_rate > 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("training.learning_rate must be positive");
  }
  if (entropy_learning_rate < 0.0 || !std::isfinite(entropy_learning_rate)) {
    throw ConfigError("training.entropy_learning_rate must be positive (or 0 to inherit)");
  }
  if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  if (fedavg_local_steps == 0) throw ConfigError("training.fedavg_local_steps must be >= 1");
  if (eval_window == 0) throw ConfigError("training.eval_window must be >= 1");
  if (table_precision < 8 || table_precision > 24) {
    throw ConfigError("training.table_precision must be in [8, 24]");
  }
  if (!(tail_mass > 0.0 && tail_mass < 0.01)) {
    throw ConfigError("training.tail_mass must be in (0, 0.01)");
  }
  if (threads == 0) throw ConfigError("training.threads must be >= 1");
}

std::size_t TrainingConfig::participants(std::size_t clients) const {
  const auto k = static_cast<std::size_t>(std::llround(participation * static_cast<double>(clients)));
  if (k == 0) {
    throw ConfigError("training.participation " + std::to_string(participation) + " with " +
                      std::to_string(clients) + " clients selects nobody");
  }
  return std::min(k, clients);
}

OptimizerConfig TrainingConfig::entropy_optimizer() const {
  OptimizerConfig c = optimizer;
  if (entropy_learning_rate != 0.0) c.learning_rate = entropy_learning_rate;
  return c;
}

std::size_t TrainingConfig::local_steps() const {
  return local_steps_per_round != 0 ? local_steps_per_round : entropy_steps + transform_steps;
}

Setup make_setup(Regime regime, const ModelConfig& model, const TrainingConfig& config,
                 std::vector<std::shared_ptr<const Dataset>> train,
                 std::vector<std::shared_ptr<const Dataset>> eval, std::uint64_t seed) {
  model.validate();
  config.validate(train.size());
  if (regime != Regime::local) config.participants(train.size());
  if (!eval.empty() && eval.size() != train.size()) {
    throw ConfigError("eval shard count does not match client count");
  }
  const std::size_t d_x = train.front() ? train.front()->dim() : 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i] || train[i]->size() == 0) {
      throw ConfigError("client " + std::to_string(i) + " has an empty training shard");
    }
    if (train[i]->dim() != d_x || (!eval.empty() && eval[i] && eval[i]->dim() != d_x)) {
      throw DimensionError("client " + std::to_string(i) + " data dimension differs");
    }
  }

  Setup s;
  s.server.regime = regime;
  s.server.seed = seed;
  s.server.config = config;
  Rng init(derive_seed(seed, {kTransformInitTag}));
  std::vector<std::size_t> dims{d_x};
  dims.insert(dims.end(), model.hidden.begin(), model.hidden.end());
  dims.push_back(model.latent_dim);
  s.server.g_a = make_transform(TransformRole::analysis, dims, model.activation, init);
  std::reverse(dims.begin(), dims.end());
  s.server.g_s = make_transform(TransformRole::synthesis, dims, model.activation, init);
  if (regime == Regime::fedavg) {
    Rng er(derive_seed(seed, {kEntropyInitTag}));
    s.server.entropy = FactorizedEntropyModel(model.latent_dim, model.entropy, er);
  }

  s.clients.resize(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto& c = s.clients[i];
    c.id = i;
    c.seed = derive_seed(seed, {i});
    c.train = train[i];
    c.eval = (!eval.empty() && eval[i]) ? eval[i] : train[i];
    c.g_a = s.server.g_a;
    c.g_s = s.server.g_s;
    if (regime == Regime::fedavg) {
      c.entropy = *s.server.entropy;
    } else {
      Rng er(derive_seed(c.seed, {kEntropyInitTag}));
      c.entropy = FactorizedEntropyModel(model.latent_dim, model.entropy, er);
    }
    c.entropy_opt = OptimizerState(config.entropy_optimizer());
    c.transform_opt = OptimizerState(config.optimizer);
  }
  return s;
}

// ---------------------------------------------------------------------------

ObjectiveTerms client_objective(const Tensor& x, const TransformParams& g_a,
                                const TransformParams& g_s, const FactorizedEntropyModel& model,
                                double lambda, Rng& rng) {
  const Tensor y = forward(g_a, x);
  return client_objective(x, g_a, g_s, model, lambda, uniform_noise(y.shape(), rng));
}

ObjectiveTerms client_objective(const Tensor& x, const TransformParams& g_a,
                                const TransformParams& g_s, const FactorizedEntropyModel& model,
                                double lambda, const Tensor& noise) {
  Tensor y = forward(g_a, x);
  if (noise.shape() != y.shape()) {
    throw DimensionError("client_objective: noise " + shape_to_string(noise.shape()) +
                         " does not match latents " + shape_to_string(y.shape()));
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += noise[i];
  ObjectiveTerms t;
  t.rate = rate_loss(model, y);
  t.distortion = mean_squared_error(x, forward(g_s, y));
  t.loss = t.rate + lambda * t.distortion;
  if (!std::isfinite(t.loss)) throw TrainingError("objective is not finite");
  return t;
}

ObjectiveGrad client_objective_grad(const Tensor& x, const TransformParams& g_a,
                                    const TransformParams& g_s,
                                    const FactorizedEntropyModel& model, double lambda,
                                    const Tensor& noise, ParamGroup groups) {
  const bool want_entropy = has(groups, ParamGroup::entropy);
  const bool want_transforms = has(groups, ParamGroup::transforms);
  const ForwardCache cache_a = forward_cached(g_a, x);
  if (noise.shape() != cache_a.output.shape()) {
    throw DimensionError("client_objective: noise " + shape_to_string(noise.shape()) +
                         " does not match latents " + shape_to_string(cache_a.output.shape()));
  }
  Tensor y = cache_a.output;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += noise[i];
  const ForwardCache cache_s = forward_cached(g_s, y);
  const Tensor& x_hat = cache_s.output;

  const RateGrad rg = rate_loss_grad(model, y, want_entropy, want_transforms);
  ObjectiveGrad out;
  out.terms.rate = rg.bits;
  out.terms.distortion = mean_squared_error(x, x_hat);
  out.terms.loss = out.terms.rate + lambda * out.terms.distortion;
  if (!std::isfinite(out.terms.loss)) throw TrainingError("objective is not finite");

  if (want_transforms) {
    Tensor upstream(x_hat.shape());
    const double scale = 2.0 * lambda / static_cast<double>(x_hat.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] = scale * (x_hat[i] - x[i]);
    TransformGrad gs = backward(g_s, cache_s, upstream);
    Tensor dy = rg.input;
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += gs.input[i];
    TransformGrad ga = backward(g_a, cache_a, dy);
    out.g_a = std::move(ga.params);
    out.g_s = std::move(gs.params);
  }
  if (want_entropy) out.entropy = rg.model;
  return out;
}

// ---------------------------------------------------------------------------

namespace {
struct CodingModel {
  CdfTable table;
  std::vector<double> offsets;
};

CodingModel coding_model(const FactorizedEntropyModel& entropy, const TrainingConfig& config) {
  CodingModel cm;
  if (config.median_offsets) cm.offsets = medians(entropy);
  cm.table = build_cdf_table(entropy, config.table_precision, config.tail_mass, cm.offsets);
  return cm;
}

ClientEval evaluate_with(const ClientState& client, const TransformParams& g_a,
                         const TransformParams& g_s, const CodingModel& cm) {
  const Dataset& data = client.eval ? *client.eval : *client.train;
  const RateMeasurement m = measure_rate(data.samples, g_a, g_s, cm.table, cm.offsets);
  return {client.id, m.bits_per_sample, m.distortion};
}
}  // namespace

ClientEval evaluate_client(const ClientState& client, const TransformParams& g_a,
                           const TransformParams& g_s, const FactorizedEntropyModel& entropy,
                           const TrainingConfig& config) {
  return evaluate_with(client, g_a, g_s, coding_model(entropy, config));
}

RoundRecord evaluate(const ServerState& server, const std::vector<ClientState>& clients) {
  check_clients(clients);
  const auto& cfg = server.config;
  RoundRecord rec;
  rec.round = server.round;
  rec.regime = server.regime;
  rec.lambda = cfg.lambda;
  rec.per_client.resize(clients.size());

  std::optional<CodingModel> shared;
  if (server.regime == Regime::fedavg) shared = coding_model(*server.entropy, cfg);
  parallel_for(clients.size(), cfg.threads, [&](std::size_t i) {
    const auto& c = clients[i];
    switch (server.regime) {
      case Regime::local:
        rec.per_client[i] = evaluate_client(c, c.g_a, c.g_s, c.entropy, cfg);
        break;
      case Regime::fed:
        rec.per_client[i] = evaluate_client(c, server.g_a, server.g_s, c.entropy, cfg);
        break;
      case Regime::fedavg:
        rec.per_client[i] = evaluate_with(c, server.g_a, server.g_s, *shared);
        break;
    }
  });
  for (const auto& e : rec.per_client) {
    rec.rate += e.bits_per_sample;
    rec.distortion += e.mse;
  }
  rec.rate /= static_cast<double>(clients.size());
  rec.distortion /= static_cast<double>(clients.size());
  rec.loss = rec.rate + cfg.lambda * rec.distortion;
  rec.psnr = 10.0 * std::log10(1.0 / std::max(rec.distortion, 1e-300));
  return rec;
}

std::string to_json_line(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["regime"] = to_string(r.regime);
  j["lambda"] = r.lambda;
  auto per = nlohmann::ordered_json::array();
  for (const auto& c : r.per_client) {
    nlohmann::ordered_json e;
    e["id"] = c.id;
    e["bits_per_sample"] = c.bits_per_sample;
    e["mse"] = c.mse;
    per.push_back(std::move(e));
  }
  j["per_client"] = std::move(per);
  j["participants"] = r.participants;
  j["R_n"] = r.rate;
  j["D_n"] = r.distortion;
  j["loss"] = r.loss;
  j["psnr"] = r.psnr;
  return j.dump();
}

RDPoint TrainingTrace::final_point(std::size_t window) const {
  if (rounds.empty()) throw ConfigError("final_point: empty trace");
  if (window == 0) throw ConfigError("final_point: window must be >= 1");
  const std::size_t w = std::min(window, rounds.size());
  RDPoint p;
  p.lambda = rounds.back().lambda;
  p.regime = rounds.back().regime;
  p.round = rounds.back().round;
  for (std::size_t i = rounds.size() - w; i < rounds.size(); ++i) {
    p.rate += rounds[i].rate;
    p.distortion += rounds[i].distortion;
    p.loss += rounds[i].loss;
  }
  p.rate /= static_cast<double>(w);
  p.distortion /= static_cast<double>(w);
  p.loss /= static_cast<double>(w);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> select_participants(std::size_t clients, std::size_t count,
                                             std::uint64_t seed, std::size_t round) {
  if (count == 0 || count > clients) throw ConfigError("participant count out of range");
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, {kParticipationTag, round}));
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) std::swap(ids[i], ids[i + rng.index(clients - i)]);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void local_round(ServerState& server, std::vector<ClientState>& clients) {
  check_clients(clients);
  const auto& cfg = server.config;
  const std::size_t t = server.round + 1;
  parallel_for(clients.size(), cfg.threads, [&](std::size_t i) {
    auto& c = clients[i];
    with_client_context(c, [&] {
      Rng rng(derive_seed(c.seed, {kLocalTag, t}));
      for (std::size_t s = 0; s < cfg.local_steps(); ++s) joint_step(c, cfg, rng);
    });
  });
  server.round = t;
}

std::vector<std::size_t> fed_ntc_round(ServerState& server, std::vector<ClientState>& clients) {
  check_clients(clients);
  const auto& cfg = server.config;
  const std::size_t t = server.round + 1;
  const auto ids =
      select_participants(clients.size(), cfg.participants(clients.size()), server.seed, t);
  parallel_for(ids.size(), cfg.threads, [&](std::size_t k) {
    auto& c = clients[ids[k]];
    with_client_context(c, [&] {
      Rng rng(derive_seed(c.seed, {kFedTag, t}));
      for (std::size_t s = 0; s < cfg.entropy_steps; ++s) {
        entropy_step(c, server.g_a, server.g_s, cfg, rng);
      }
      c.g_a = server.g_a;
      c.g_s = server.g_s;
      for (std::size_t s = 0; s < cfg.transform_steps; ++s) transform_step(c, cfg, rng);
    });
  });
  std::vector<const TransformParams*> ga, gs;
  for (auto id : ids) {
    ga.push_back(&clients[id].g_a);
    gs.push_back(&clients[id].g_s);
  }
  server.g_a = average(ga);
  server.g_s = average(gs);
  server.round = t;
  return ids;
}

std::vector<std::size_t> fedavg_round(ServerState& server, std::vector<ClientState>& clients) {
  check_clients(clients);
  if (!server.entropy) throw ConfigError("fedavg server has no entropy model");
  const auto& cfg = server.config;
  const std::size_t t = server.round + 1;
  const auto ids =
      select_participants(clients.size(), cfg.participants(clients.size()), server.seed, t);
  parallel_for(ids.size(), cfg.threads, [&](std::size_t k) {
    auto& c = clients[ids[k]];
    with_client_context(c, [&] {
      Rng rng(derive_seed(c.seed, {kFedAvgTag, t}));
      c.g_a = server.g_a;
      c.g_s = server.g_s;
      c.entropy = *server.entropy;
      for (std::size_t s = 0; s < cfg.fedavg_local_steps; ++s) joint_step(c, cfg, rng);
    });
  });
  std::vector<const TransformParams*> ga, gs;
  std::vector<const FactorizedEntropyModel*> em;
  for (auto id : ids) {
    ga.push_back(&clients[id].g_a);
    gs.push_back(&clients[id].g_s);
    em.push_back(&clients[id].entropy);
  }
  server.g_a = average(ga);
  server.g_s = average(gs);
  server.entropy = average(em);
  server.round = t;
  return ids;
}

namespace {
template <typename RoundFn>
TrainingTrace run_rounds(ServerState& server, std::vector<ClientState>& clients,
                         const RoundCallback& on_round, RoundFn&& round_fn) {
  server.config.validate(clients.size());
  TrainingTrace trace;
  for (std::size_t r = 0; r < server.config.rounds; ++r) {
    auto ids = round_fn();
    RoundRecord rec = evaluate(server, clients);
    rec.participants = std::move(ids);
    if (on_round) on_round(rec);
    trace.rounds.push_back(std::move(rec));
  }
  return trace;
}
}  // namespace

TrainingTrace train_local_ntc(ServerState& server, std::vector<ClientState>& clients,
                              const RoundCallback& on_round) {
  return run_rounds(server, clients, on_round, [&] {
    local_round(server, clients);
    std::vector<std::size_t> all(clients.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  });
}

TrainingTrace train_fed_ntc(ServerState& server, std::vector<ClientState>& clients,
                            const RoundCallback& on_round) {
  return run_rounds(server, clients, on_round, [&] { return fed_ntc_round(server, clients); });
}

TrainingTrace train_fedavg(ServerState& server, std::vector<ClientState>& clients,
                           const RoundCallback& on_round) {
  return run_rounds(server, clients, on_round, [&] { return fedavg_round(server, clients); });
}

TrainingTrace train(ServerState& server, std::vector<ClientState>& clients,
                    const RoundCallback& on_round) {
  switch (server.regime) {
    case Regime::local: return train_local_ntc(server, clients, on_round);
    case Regime::fed: return train_fed_ntc(server, clients, on_round);
    case Regime::fedavg: return train_fedavg(server, clients, on_round);
  }
  throw ConfigError("unknown regime");
}

// ---------------------------------------------------------------------------

TransformParams average(const std::vector<const TransformParams*>& items) {
  if (items.empty()) throw ConfigError("average: nothing to average");
  TransformParams out = *items.front();
  average_params<TransformParams>(&const_transform_refs, items, out);
  return out;
}

FactorizedEntropyModel average(const std::vector<const FactorizedEntropyModel*>& items) {
  if (items.empty()) throw ConfigError("average: nothing to average");
  FactorizedEntropyModel out = *items.front();
  average_params<FactorizedEntropyModel>(&const_entropy_refs, items, out);
  return out;
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(threads, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace fedntc
