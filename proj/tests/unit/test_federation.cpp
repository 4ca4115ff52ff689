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

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <json.hpp>
#include <set>

#include "fedntc/error.hpp"
#include "fedntc/federation.hpp"
#include "fedntc/sources.hpp"

using namespace fedntc;

namespace {

using Shards = std::vector<std::shared_ptr<const Dataset>>;

struct Toy {
  Shards train, eval;
};

Toy gaussian_toy(std::size_t clients, std::size_t samples, std::uint64_t seed,
                 double separation = 1.0, std::size_t dim = 8) {
  SourceSpec spec;
  spec.latent_dim = dim;
  spec.ambient_dim = dim;
  spec.sigmas = block_variance_profiles(clients, dim, 2, 4.0, 1.0, separation);
  spec.map = GenerativeMap::orthogonal(dim, dim, derive_seed(seed, {99}));
  Toy toy;
  for (auto& s : gen_synthetic(spec, samples, derive_seed(seed, {1}))) {
    toy.train.push_back(std::make_shared<Dataset>(std::move(s.data)));
  }
  for (auto& s : gen_synthetic(spec, 200, derive_seed(seed, {2}))) {
    toy.eval.push_back(std::make_shared<Dataset>(std::move(s.data)));
  }
  return toy;
}

ModelConfig small_model(std::size_t latent = 8) {
  ModelConfig m;
  m.latent_dim = latent;
  return m;
}

TrainingConfig short_training(std::size_t rounds = 3) {
  TrainingConfig t;
  t.rounds = rounds;
  t.entropy_steps = 2;
  t.transform_steps = 2;
  t.participation = 1.0;
  t.fedavg_local_steps = 3;
  t.batch_size = 8;
  t.optimizer.learning_rate = 1e-2;
  return t;
}

TransformParams identity(std::size_t d) {
  TransformParams p;
  Tensor w({d, d});
  for (std::size_t i = 0; i < d; ++i) w(i, i) = 1.0;
  p.layers.push_back({w, Tensor({d}), Activation::none});
  return p;
}

Tensor sample_rows(const Dataset& d, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = rng.index(d.size());
  return gather_rows(d.samples, rows);
}

Tensor noise_like(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor n({rows, cols});
  for (auto& v : n.data()) v = rng.uniform() - 0.5;
  return n;
}

void apply_step(OptimizerState& opt, std::vector<ParamRef> params,
                std::vector<ConstParamRef> grads) {
  opt.step(params, grads);
}

std::vector<ParamRef> with_prefix(const std::string& prefix, std::vector<ParamRef> refs) {
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

std::vector<ConstParamRef> with_prefix(const std::string& prefix, std::vector<ConstParamRef> refs) {
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

template <typename T>
std::vector<T> concat(std::vector<T> a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("objective: composition, zero lambda and the identity pipeline") {
  Rng rng(1);
  const std::array<std::size_t, 3> a_dims{5, 6, 3}, s_dims{3, 6, 5};
  const auto g_a = make_transform(TransformRole::analysis, a_dims, Activation::leaky_relu, rng);
  const auto g_s = make_transform(TransformRole::synthesis, s_dims, Activation::leaky_relu, rng);
  FactorizedEntropyModel m(3, EntropyModelConfig{}, rng);
  Tensor x({7, 5});
  for (auto& v : x.data()) v = rng.normal();
  const Tensor u = noise_like(7, 3, rng);

  Tensor y = forward(g_a, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += u[i];
  const double rate = rate_loss(m, y);
  const double mse = mean_squared_error(x, forward(g_s, y));
  const auto t = client_objective(x, g_a, g_s, m, 0.7, u);
  CHECK(t.rate == doctest::Approx(rate).epsilon(1e-12));
  CHECK(t.distortion == doctest::Approx(mse).epsilon(1e-12));
  CHECK(t.loss == doctest::Approx(rate + 0.7 * mse).epsilon(1e-12));
  CHECK(client_objective(x, g_a, g_s, m, 0.0, u).loss == doctest::Approx(rate).epsilon(1e-12));

  FactorizedEntropyModel m5(5, EntropyModelConfig{}, rng);
  const auto id = client_objective(x, identity(5), identity(5), m5, 1.0, Tensor({7, 5}));
  CHECK(id.distortion == 0.0);
  CHECK(id.loss == id.rate);
}

TEST_CASE("objective gradient groups are selective") {
  Rng rng(2);
  const std::array<std::size_t, 2> a_dims{4, 2}, s_dims{2, 4};
  const auto g_a = make_transform(TransformRole::analysis, a_dims, Activation::none, rng);
  const auto g_s = make_transform(TransformRole::synthesis, s_dims, Activation::none, rng);
  FactorizedEntropyModel m(2, EntropyModelConfig{}, rng);
  Tensor x({3, 4}, 0.5);
  const Tensor u({3, 2});
  const auto e = client_objective_grad(x, g_a, g_s, m, 1.0, u, ParamGroup::entropy);
  CHECK(e.g_a.layers.empty());
  CHECK(e.entropy.channels() == 2);
  const auto t = client_objective_grad(x, g_a, g_s, m, 1.0, u, ParamGroup::transforms);
  CHECK(t.entropy.channels() == 0);
  CHECK(t.g_a.layers.size() == 1);
}

TEST_CASE("local: one client equals a hand-written centralised loop") {
  const Toy toy = gaussian_toy(1, 40, 5);
  TrainingConfig cfg = short_training(3);
  cfg.local_steps_per_round = 4;
  Setup s = make_setup(Regime::local, small_model(), cfg, toy.train, toy.eval, 5);
  ClientState ref = s.clients[0];
  train(s.server, s.clients);

  // Round t draws its batches and noise from derive_seed(client seed, {1, t}).
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    Rng rng(derive_seed(ref.seed, {1, t}));
    for (std::size_t k = 0; k < cfg.local_steps(); ++k) {
      const Tensor x = sample_rows(*ref.train, cfg.batch_size, rng);
      const Tensor u = noise_like(x.rows(), ref.g_a.output_dim(), rng);
      const auto g = client_objective_grad(x, ref.g_a, ref.g_s, ref.entropy, cfg.lambda, u);
      apply_step(ref.entropy_opt, with_prefix("entropy/", ref.entropy.parameters()),
                 with_prefix("entropy/", g.entropy.parameters()));
      apply_step(ref.transform_opt,
                 concat(with_prefix("g_a/", ref.g_a.parameters()),
                        with_prefix("g_s/", ref.g_s.parameters())),
                 concat(with_prefix("g_a/", g.g_a.parameters()),
                        with_prefix("g_s/", g.g_s.parameters())));
    }
  }
  CHECK(s.clients[0] == ref);
}

TEST_CASE("fed: r = 1, n = 1 is T_p entropy steps then T_g transform steps") {
  const Toy toy = gaussian_toy(1, 40, 6);
  const TrainingConfig cfg = short_training(2);
  Setup s = make_setup(Regime::fed, small_model(), cfg, toy.train, toy.eval, 6);
  ClientState ref = s.clients[0];
  TransformParams ga = s.server.g_a, gs = s.server.g_s;
  train(s.server, s.clients);

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    Rng rng(derive_seed(ref.seed, {2, t}));
    for (std::size_t k = 0; k < cfg.entropy_steps; ++k) {
      const Tensor x = sample_rows(*ref.train, cfg.batch_size, rng);
      const Tensor u = noise_like(x.rows(), ga.output_dim(), rng);
      const auto g =
          client_objective_grad(x, ga, gs, ref.entropy, cfg.lambda, u, ParamGroup::entropy);
      apply_step(ref.entropy_opt, with_prefix("entropy/", ref.entropy.parameters()),
                 with_prefix("entropy/", g.entropy.parameters()));
    }
    ref.g_a = ga;
    ref.g_s = gs;
    for (std::size_t k = 0; k < cfg.transform_steps; ++k) {
      const Tensor x = sample_rows(*ref.train, cfg.batch_size, rng);
      const Tensor u = noise_like(x.rows(), ref.g_a.output_dim(), rng);
      const auto g = client_objective_grad(x, ref.g_a, ref.g_s, ref.entropy, cfg.lambda, u,
                                           ParamGroup::transforms);
      apply_step(ref.transform_opt,
                 concat(with_prefix("g_a/", ref.g_a.parameters()),
                        with_prefix("g_s/", ref.g_s.parameters())),
                 concat(with_prefix("g_a/", g.g_a.parameters()),
                        with_prefix("g_s/", g.g_s.parameters())));
    }
    ga = ref.g_a;
    gs = ref.g_s;
  }
  CHECK(s.clients[0] == ref);
  CHECK(s.server.g_a == ga);
  CHECK(s.server.g_s == gs);
}

TEST_CASE("fedavg: n = 1, r = 1 equals batched centralised steps") {
  const Toy toy = gaussian_toy(1, 40, 7);
  const TrainingConfig cfg = short_training(2);
  Setup s = make_setup(Regime::fedavg, small_model(), cfg, toy.train, toy.eval, 7);
  ClientState ref = s.clients[0];
  train(s.server, s.clients);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    Rng rng(derive_seed(ref.seed, {3, t}));
    for (std::size_t k = 0; k < cfg.fedavg_local_steps; ++k) {
      const Tensor x = sample_rows(*ref.train, cfg.batch_size, rng);
      const Tensor u = noise_like(x.rows(), ref.g_a.output_dim(), rng);
      const auto g = client_objective_grad(x, ref.g_a, ref.g_s, ref.entropy, cfg.lambda, u);
      apply_step(ref.entropy_opt, with_prefix("entropy/", ref.entropy.parameters()),
                 with_prefix("entropy/", g.entropy.parameters()));
      apply_step(ref.transform_opt,
                 concat(with_prefix("g_a/", ref.g_a.parameters()),
                        with_prefix("g_s/", ref.g_s.parameters())),
                 concat(with_prefix("g_a/", g.g_a.parameters()),
                        with_prefix("g_s/", g.g_s.parameters())));
    }
  }
  CHECK(s.server.g_a == ref.g_a);
  CHECK(s.server.g_s == ref.g_s);
  CHECK(*s.server.entropy == ref.entropy);
}

TEST_CASE("local: identical shards, seeds and inits give identical parameters") {
  const Toy toy = gaussian_toy(1, 30, 8);
  const Shards train{toy.train[0], toy.train[0]}, eval{toy.eval[0], toy.eval[0]};
  Setup s = make_setup(Regime::local, small_model(), short_training(3), train, eval, 8);
  s.clients[1].seed = s.clients[0].seed;
  s.clients[1].entropy = s.clients[0].entropy;
  train_local_ntc(s.server, s.clients);
  CHECK(s.clients[0].g_a == s.clients[1].g_a);
  CHECK(s.clients[0].g_s == s.clients[1].g_s);
  CHECK(s.clients[0].entropy == s.clients[1].entropy);
}

TEST_CASE("fed: identical-data clients keep identical entropy models") {
  const Toy toy = gaussian_toy(1, 30, 9);
  const Shards train{toy.train[0], toy.train[0], toy.train[0]};
  const Shards eval{toy.eval[0], toy.eval[0], toy.eval[0]};
  Setup s = make_setup(Regime::fed, small_model(), short_training(1), train, eval, 9);
  for (auto& c : s.clients) {
    c.seed = s.clients[0].seed;
    c.entropy = s.clients[0].entropy;
  }
  for (int r = 0; r < 4; ++r) {
    fed_ntc_round(s.server, s.clients);
    CHECK(s.clients[1].entropy == s.clients[0].entropy);
    CHECK(s.clients[2].entropy == s.clients[0].entropy);
  }
}

TEST_CASE("local loss decreases over the first 100 iterations") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Toy toy = gaussian_toy(2, 50, seed);
    TrainingConfig cfg = short_training(10);
    cfg.local_steps_per_round = 10;
    cfg.optimizer.learning_rate = 1e-3;
    cfg.lambda = 1.0;
    Setup s = make_setup(Regime::local, small_model(), cfg, toy.train, toy.eval, seed);
    const RoundRecord before = evaluate(s.server, s.clients);
    const auto trace = train(s.server, s.clients);
    INFO("seed " << seed << ": " << before.loss << " -> " << trace.rounds.back().loss);
    CHECK(trace.rounds.size() == 10);
    CHECK(trace.rounds.back().loss < before.loss);
  }
}

TEST_CASE("averaging") {
  Rng rng(3);
  const std::array<std::size_t, 2> dims{2, 2};
  const auto p = make_transform(TransformRole::analysis, dims, Activation::none, rng);
  using Items = std::vector<const TransformParams*>;
  CHECK(average(Items{&p, &p, &p}) == p);

  TransformParams a = p.zeros_like(), b = p.zeros_like();
  a.layers[0].weight = Tensor::matrix(2, 2, {1, 2, 3, 4});
  b.layers[0].weight = Tensor::matrix(2, 2, {3, -2, 0, 8});
  a.layers[0].bias = Tensor::vector({1, 1});
  b.layers[0].bias = Tensor::vector({0, 2});
  const auto m = average(Items{&a, &b});
  CHECK(m.layers[0].weight == Tensor::matrix(2, 2, {2, 0, 1.5, 6}));
  CHECK(m.layers[0].bias == Tensor::vector({0.5, 1.5}));
  CHECK(average(Items{&b, &a}) == m);
  CHECK_THROWS_AS(average(Items{}), ConfigError);
}

TEST_CASE("participant selection") {
  for (std::size_t round = 1; round <= 20; ++round) {
    const auto ids = select_participants(100, 10, 4, round);
    CHECK(ids.size() == 10);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(std::set<std::size_t>(ids.begin(), ids.end()).size() == 10);
    CHECK(ids.back() < 100);
    CHECK(ids == select_participants(100, 10, 4, round));
  }
  CHECK(select_participants(100, 10, 4, 1) != select_participants(100, 10, 4, 2));
  TrainingConfig cfg;
  cfg.participation = 0.001;
  CHECK_THROWS_AS(cfg.participants(100), ConfigError);
}

TEST_CASE("n = 100, r = 0.1 runs ten participants per round") {
  const Toy toy = gaussian_toy(100, 4, 10, 1.0, 4);
  TrainingConfig cfg = short_training(3);
  cfg.participation = 0.1;
  cfg.entropy_steps = 1;
  cfg.transform_steps = 1;
  cfg.batch_size = 2;
  Setup s = make_setup(Regime::fed, small_model(4), cfg, toy.train, {}, 10);
  const auto trace = train(s.server, s.clients);
  CHECK(trace.rounds.size() == 3);
  for (const auto& r : trace.rounds) CHECK(r.participants.size() == 10);
}

TEST_CASE("parallel clients reproduce the sequential run") {
  const Toy toy = gaussian_toy(4, 30, 11);
  for (Regime regime : {Regime::local, Regime::fed, Regime::fedavg}) {
    TrainingConfig cfg = short_training(2);
    Setup a = make_setup(regime, small_model(), cfg, toy.train, toy.eval, 11);
    cfg.threads = 3;
    Setup b = make_setup(regime, small_model(), cfg, toy.train, toy.eval, 11);
    const auto ta = train(a.server, a.clients);
    const auto tb = train(b.server, b.clients);
    CHECK(a.clients == b.clients);
    CHECK(a.server.g_a == b.server.g_a);
    CHECK(to_json_line(ta.rounds.back()) == to_json_line(tb.rounds.back()));
  }
}

TEST_CASE("parallel_for rethrows the first failing index") {
  std::atomic<int> ran{0};
  try {
    parallel_for(8, 4, [&](std::size_t i) {
      ++ran;
      if (i == 3 || i == 6) throw TrainingError("boom " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()) == "boom 3");
  }
  CHECK(ran == 8);
}

TEST_CASE("round records: json line and final window") {
  const Toy toy = gaussian_toy(2, 30, 12);
  Setup s = make_setup(Regime::fed, small_model(), short_training(4), toy.train, toy.eval, 12);
  const auto trace = train(s.server, s.clients);
  const auto j = nlohmann::json::parse(to_json_line(trace.rounds[1]));
  CHECK(j.at("round") == 2);
  CHECK(j.at("regime") == "fed");
  CHECK(j.at("per_client").size() == 2);
  CHECK(j.at("R_n").get<double>() == doctest::Approx(trace.rounds[1].rate));
  const auto p = trace.final_point(2);
  CHECK(p.round == 4);
  CHECK(p.loss == doctest::Approx((trace.rounds[2].loss + trace.rounds[3].loss) / 2.0));
  for (const auto& r : trace.rounds) {
    CHECK(r.loss == doctest::Approx(r.rate + r.lambda * r.distortion));
    CHECK(r.psnr == doctest::Approx(10.0 * std::log10(1.0 / r.distortion)));
  }
}

TEST_CASE("setup validation") {
  const Toy toy = gaussian_toy(2, 10, 13);
  TrainingConfig cfg = short_training();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(make_setup(Regime::fed, small_model(), cfg, toy.train, toy.eval, 1),
                  ConfigError);
  ModelConfig bad = small_model();
  bad.latent_dim = 0;
  CHECK_THROWS_AS(make_setup(Regime::fed, bad, short_training(), toy.train, toy.eval, 1),
                  ConfigError);
  CHECK_THROWS_AS(regime_from_string("centralised"), ConfigError);
  CHECK(regime_from_string(to_string(Regime::fedavg)) == Regime::fedavg);
}

TEST_CASE("divergence surfaces as a training error naming the client") {
  const Toy toy = gaussian_toy(2, 20, 14);
  TrainingConfig cfg = short_training(1);
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.learning_rate = 1e300;
  Setup s = make_setup(Regime::local, small_model(), cfg, toy.train, toy.eval, 14);
  try {
    train(s.server, s.clients);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("client") != std::string::npos);
  }
}

}  // TEST_SUITE
