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

// Training regimes as round-based state machines:
//
//   local   every client trains its own g_a, g_s and entropy model
//   fed     shared g_a, g_s averaged by the server, entropy models stay local
//   fedavg  one global model (transforms and entropy model) averaged per round
//
// Randomness is derived from (client seed, round, phase), so client updates
// are independent of execution order and parallel runs match sequential ones.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedntc/entropy.hpp"
#include "fedntc/nn.hpp"
#include "fedntc/sources.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

enum class Regime { local, fed, fedavg };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& name);

struct ModelConfig {
  std::vector<std::size_t> hidden;  // analysis hidden widths; synthesis mirrors them
  std::size_t latent_dim = 16;
  Activation activation = Activation::leaky_relu;
  EntropyModelConfig entropy{};

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainingConfig {
  std::size_t rounds = 100;
  std::size_t entropy_steps = 10;    // T_p
  std::size_t transform_steps = 10;  // T_g
  double participation = 0.1;        // r
  OptimizerConfig optimizer{};
  // Step size for entropy-model parameters; 0 means optimizer.learning_rate.
  double entropy_learning_rate = 0.0;
  double lambda = 1.0;
  std::size_t batch_size = 32;
  std::size_t fedavg_local_steps = 10;
  // Joint steps per client per local round; 0 means T_p + T_g.
  std::size_t local_steps_per_round = 0;
  std::size_t eval_window = 10;
  unsigned table_precision = 16;
  double tail_mass = kDefaultTailMass;
  // Quantise each latent channel around its entropy model's median instead
  // of the integer grid.
  bool median_offsets = true;
  std::size_t threads = 1;  // 1 runs clients sequentially

  // Throws ConfigError naming the offending field.
  void validate(std::size_t clients) const;
  // round(r * n); throws ConfigError if that is zero.
  std::size_t participants(std::size_t clients) const;
  std::size_t local_steps() const;
  OptimizerConfig entropy_optimizer() const;

  bool operator==(const TrainingConfig&) const = default;
};

struct ClientState {
  std::size_t id = 0;
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> eval;
  TransformParams g_a;  // owned (local, fedavg) or scratch copy of the globals (fed)
  TransformParams g_s;
  FactorizedEntropyModel entropy;
  OptimizerState entropy_opt;
  OptimizerState transform_opt;
  std::uint64_t seed = 0;

  bool operator==(const ClientState&) const = default;
};

struct ServerState {
  Regime regime = Regime::fed;
  TransformParams g_a;
  TransformParams g_s;
  // Only the fedavg regime has a server-side entropy model.
  std::optional<FactorizedEntropyModel> entropy;
  std::size_t round = 0;
  std::uint64_t seed = 0;
  TrainingConfig config{};

  bool operator==(const ServerState&) const = default;
};

// Initial transforms and entropy models. All regimes start every client from
// the same transform initialisation (derived from `seed`); entropy models are
// initialised from each client's own seed derive_seed(seed, {id}).
struct Setup {
  ServerState server;
  std::vector<ClientState> clients;
};
Setup make_setup(Regime regime, const ModelConfig& model, const TrainingConfig& config,
                 std::vector<std::shared_ptr<const Dataset>> train,
                 std::vector<std::shared_ptr<const Dataset>> eval, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Objective

struct ObjectiveTerms {
  double loss = 0.0;
  double rate = 0.0;        // bits per sample
  double distortion = 0.0;  // mean squared error per entry
};

// y~ = g_a(x) + u; loss = rate_loss(model, y~) + lambda * MSE(x, g_s(y~)).
ObjectiveTerms client_objective(const Tensor& x, const TransformParams& g_a,
                                const TransformParams& g_s, const FactorizedEntropyModel& model,
                                double lambda, Rng& rng);
// Same with the noise tensor supplied explicitly (shape of g_a(x)).
ObjectiveTerms client_objective(const Tensor& x, const TransformParams& g_a,
                                const TransformParams& g_s, const FactorizedEntropyModel& model,
                                double lambda, const Tensor& noise);

enum class ParamGroup : unsigned { entropy = 1, transforms = 2, all = 3 };

struct ObjectiveGrad {
  ObjectiveTerms terms;
  TransformParams g_a;             // empty unless transforms requested
  TransformParams g_s;
  FactorizedEntropyModel entropy;  // empty unless entropy requested
};

ObjectiveGrad client_objective_grad(const Tensor& x, const TransformParams& g_a,
                                    const TransformParams& g_s,
                                    const FactorizedEntropyModel& model, double lambda,
                                    const Tensor& noise, ParamGroup groups = ParamGroup::all);

// ---------------------------------------------------------------------------
// Evaluation

struct ClientEval {
  std::size_t id = 0;
  double bits_per_sample = 0.0;
  double mse = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  Regime regime = Regime::fed;
  double lambda = 0.0;
  std::vector<ClientEval> per_client;
  std::vector<std::size_t> participants;
  double rate = 0.0;        // R_n: mean bits per sample over clients
  double distortion = 0.0;  // D_n: mean MSE over clients
  double loss = 0.0;        // R_n + lambda * D_n
  double psnr = 0.0;        // 10 log10(1 / D_n), peak 1
};

struct RDPoint {
  double lambda = 0.0;
  double rate = 0.0;        // bits per sample
  double distortion = 0.0;  // MSE
  double loss = 0.0;
  std::size_t round = 0;    // last round in the averaging window
  Regime regime = Regime::fed;
};

struct TrainingTrace {
  std::vector<RoundRecord> rounds;
  // Mean of R_n, D_n and loss over the last `window` rounds.
  RDPoint final_point(std::size_t window) const;
};

// Hard-quantised, entropy-coded evaluation of one client's held-out shard.
ClientEval evaluate_client(const ClientState& client, const TransformParams& g_a,
                           const TransformParams& g_s, const FactorizedEntropyModel& entropy,
                           const TrainingConfig& config);
// Evaluates every client with the regime's model and fills R_n, D_n.
RoundRecord evaluate(const ServerState& server, const std::vector<ClientState>& clients);

std::string to_json_line(const RoundRecord& record);

using RoundCallback = std::function<void(const RoundRecord&)>;

// ---------------------------------------------------------------------------
// Regimes

// Clients selected for a round: round(r * n) ids, uniformly without
// replacement, from a stream derived from (seed, round). Sorted ascending.
std::vector<std::size_t> select_participants(std::size_t clients, std::size_t count,
                                             std::uint64_t seed, std::size_t round);

// One local round: every client takes local_steps() joint steps.
void local_round(ServerState& server, std::vector<ClientState>& clients);
TrainingTrace train_local_ntc(ServerState& server, std::vector<ClientState>& clients,
                              const RoundCallback& on_round = {});

// Participants take T_p entropy-only steps against the received globals,
// copy the globals into scratch transforms, take T_g transform-only steps,
// and the server replaces the globals with the mean of the scratch copies.
// Returns the participant ids.
std::vector<std::size_t> fed_ntc_round(ServerState& server, std::vector<ClientState>& clients);
TrainingTrace train_fed_ntc(ServerState& server, std::vector<ClientState>& clients,
                            const RoundCallback& on_round = {});

std::vector<std::size_t> fedavg_round(ServerState& server, std::vector<ClientState>& clients);
TrainingTrace train_fedavg(ServerState& server, std::vector<ClientState>& clients,
                           const RoundCallback& on_round = {});

// Dispatches on server.regime.
TrainingTrace train(ServerState& server, std::vector<ClientState>& clients,
                    const RoundCallback& on_round = {});

// ---------------------------------------------------------------------------
// Averaging

// Entrywise mean with weight 1/k. Values are summed in sorted order, so the
// result does not depend on the order of the inputs.
TransformParams average(const std::vector<const TransformParams*>& items);
FactorizedEntropyModel average(const std::vector<const FactorizedEntropyModel*>& items);

// Runs fn(0..count-1) on up to `threads` threads. The first exception by
// index is rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fedntc
