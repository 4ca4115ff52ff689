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

#include <array>
#include <cmath>
#include <limits>
#include <utility>

#include "fedntc/error.hpp"
#include "fedntc/gradsuite.hpp"
#include "fedntc/nn.hpp"

using namespace fedntc;

namespace {

TransformParams single_layer(Tensor weight, Tensor bias, Activation act) {
  TransformParams p;
  p.layers.push_back({std::move(weight), std::move(bias), act});
  return p;
}

// Scalar reference: y_o = act(sum_i W[o][i] x_i + b_o), layer by layer.
std::vector<double> reference_forward(const TransformParams& p, std::vector<double> x) {
  for (const auto& layer : p.layers) {
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < y.size(); ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < x.size(); ++i) s += layer.weight(o, i) * x[i];
      if (layer.activation == Activation::leaky_relu && s < 0.0) s *= 0.2;
      y[o] = s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("identity layer passes inputs through") {
  const auto p = single_layer(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0}),
                              Activation::none);
  const Tensor y = forward(p, Tensor::matrix(1, 2, {1, 2}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 2.0);
}

TEST_CASE("zero weights return the bias for any input") {
  const auto p = single_layer(Tensor({2, 2}), Tensor::vector({3, 3}), Activation::leaky_relu);
  const Tensor y = forward(p, Tensor::matrix(2, 2, {-7, 4, 1e6, -1e6}));
  for (double v : y.data()) CHECK(v == 3.0);
}

TEST_CASE("two-layer net matches a scalar reference loop") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::array<std::size_t, 3> dims{4, 6, 3};
    TransformParams p = make_transform(TransformRole::analysis, dims, Activation::leaky_relu, rng);
    for (auto& layer : p.layers) {
      for (auto& b : layer.bias.data()) b = rng.normal();
    }
    Tensor x({5, 4});
    for (auto& v : x.data()) v = rng.normal();
    const Tensor y = forward(p, x);
    for (std::size_t r = 0; r < 5; ++r) {
      const auto row = x.row(r);
      const auto ref = reference_forward(p, {row.begin(), row.end()});
      for (std::size_t c = 0; c < 3; ++c) CHECK(y(r, c) == doctest::Approx(ref[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("initialisation is uniform in the Glorot range with zero biases") {
  Rng rng(3);
  const std::array<std::size_t, 3> dims{10, 20, 5};
  const auto p = make_transform(TransformRole::synthesis, dims, Activation::leaky_relu, rng);
  REQUIRE(p.layers.size() == 2);
  CHECK(p.layers[0].activation == Activation::leaky_relu);
  CHECK(p.layers[1].activation == Activation::none);
  for (const auto& layer : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
    for (double w : layer.weight.data()) CHECK(std::abs(w) <= limit);
    for (double b : layer.bias.data()) CHECK(b == 0.0);
  }
}

TEST_CASE("mismatched layer chain is rejected") {
  TransformParams p;
  p.layers.push_back({Tensor({3, 2}), Tensor({3}), Activation::none});
  p.layers.push_back({Tensor({2, 4}), Tensor({2}), Activation::none});
  CHECK_THROWS_AS(p.validate(), DimensionError);
  const auto q = single_layer(Tensor({2, 3}), Tensor({2}), Activation::none);
  CHECK_THROWS_AS(forward(q, Tensor({1, 2})), DimensionError);
}

TEST_CASE("zero upstream gives zero gradients") {
  Rng rng(1);
  const std::array<std::size_t, 3> dims{3, 5, 2};
  const auto p = make_transform(TransformRole::analysis, dims, Activation::leaky_relu, rng);
  Tensor x({4, 3});
  for (auto& v : x.data()) v = rng.normal();
  const auto g = backward(p, x, Tensor({4, 2}));
  for (const auto& layer : g.params.layers) {
    for (double v : layer.weight.data()) CHECK(v == 0.0);
    for (double v : layer.bias.data()) CHECK(v == 0.0);
  }
  for (double v : g.input.data()) CHECK(v == 0.0);
}

TEST_CASE("linear layer weight gradient is upstream^T x summed over the batch") {
  Rng rng(2);
  Tensor w({3, 4}), x({5, 4}), up({5, 3});
  for (auto* t : {&w, &x, &up}) {
    for (auto& v : t->data()) v = rng.normal();
  }
  const auto p = single_layer(w, Tensor({3}), Activation::none);
  const auto g = backward(p, x, up);
  for (std::size_t o = 0; o < 3; ++o) {
    double bias_sum = 0.0;
    for (std::size_t r = 0; r < 5; ++r) bias_sum += up(r, o);
    CHECK(g.params.layers[0].bias[o] == doctest::Approx(bias_sum).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < 5; ++r) s += up(r, o) * x(r, i);
      CHECK(g.params.layers[0].weight(o, i) == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("layer and rate-loss gradients agree with central differences over 10 seeds") {
  // The full objective is covered by the acceptance gradient suite.
  const GradSuiteReport report = run_gradient_suite();
  std::size_t checked = 0;
  for (const auto& c : report.cases) {
    if (c.name == "objective") continue;
    INFO(c.name << " seed " << c.seed << " rel " << c.report.max_relative_error);
    CHECK(c.report.passed);
    ++checked;
  }
  CHECK(checked == 10 * 8);
}

TEST_CASE("sgd step") {
  Tensor p = Tensor::vector({1.0});
  const Tensor g = Tensor::vector({0.5});
  OptimizerState state({OptimizerKind::sgd, 0.1});
  const std::vector<ParamRef> params{{"p", &p}};
  const std::vector<ConstParamRef> grads{{"p", &g}};
  state.step(params, grads);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(state.steps() == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Tensor p = Tensor::vector({1.5, -2.0});
    const Tensor g({2});
    OptimizerState state({kind, 0.1});
    const std::vector<ParamRef> params{{"p", &p}};
    const std::vector<ConstParamRef> grads{{"p", &g}};
    for (int i = 0; i < 3; ++i) state.step(params, grads);
    CHECK(p == Tensor::vector({1.5, -2.0}));
  }
}

TEST_CASE("adam first step moves each entry by about the step size") {
  // t = 1: m_hat = g, v_hat = g^2, so delta = lr * g / (|g| + eps).
  const double lr = 1e-3, eps = 1e-8;
  Tensor p = Tensor::vector({0.0, 1.0, -3.0});
  const Tensor g = Tensor::vector({0.3, -2.0, 1e-3});
  OptimizerState state({OptimizerKind::adam, lr, 0.9, 0.999, eps});
  const std::vector<ParamRef> params{{"p", &p}};
  const std::vector<ConstParamRef> grads{{"p", &g}};
  state.step(params, grads);
  const std::array<double, 3> start{0.0, 1.0, -3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = -lr * g[i] / (std::abs(g[i]) + eps);
    CHECK(p[i] - start[i] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(p[i] - start[i]) == doctest::Approx(lr).epsilon(1e-4));
  }
}

TEST_CASE("non-finite gradient names the parameter and changes nothing") {
  Tensor a = Tensor::vector({1.0}), b = Tensor::vector({2.0});
  const Tensor ga = Tensor::vector({0.1});
  const Tensor gb = Tensor::vector({std::numeric_limits<double>::quiet_NaN()});
  OptimizerState state({OptimizerKind::adam, 0.1});
  const std::vector<ParamRef> params{{"first", &a}, {"second", &b}};
  const std::vector<ConstParamRef> grads{{"first", &ga}, {"second", &gb}};
  try {
    state.step(params, grads);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("second") != std::string::npos);
  }
  CHECK(a[0] == 1.0);
  CHECK(b[0] == 2.0);
  CHECK(state.steps() == 0);
}

TEST_CASE("grad_check: half squared norm") {
  const Tensor x = Tensor::vector({0.3, -1.2, 2.5});
  const auto report = grad_check(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += 0.5 * v * v;
        return s;
      },
      [](const Tensor& t) { return t; }, x, 1e-4);
  CHECK(report.passed);
  CHECK(report.max_relative_error < 1e-9);
  CHECK(report.coordinates == 3);
}

TEST_CASE("grad_check: corrupted gradient is reported") {
  const Tensor x = Tensor::vector({0.3, -1.2, 2.5});
  const auto report = grad_check(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += 0.5 * v * v;
        return s;
      },
      [](const Tensor& t) {
        Tensor g = t;
        g[1] *= 1.01;
        return g;
      },
      x, 1e-4);
  CHECK_FALSE(report.passed);
  CHECK(report.worst_index == 1);
}

TEST_CASE("affine-only stack is an affine map") {
  Rng rng(4);
  const std::array<std::size_t, 4> dims{3, 5, 4, 2};
  TransformParams p = make_transform(TransformRole::analysis, dims, Activation::none, rng);
  for (auto& layer : p.layers) {
    for (auto& b : layer.bias.data()) b = rng.normal();
  }
  const Tensor y0 = forward(p, Tensor({1, 3}));
  std::vector<Tensor> columns;
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor e({1, 3});
    e[i] = 1.0;
    columns.push_back(forward(p, e));
  }
  Tensor x({1, 3});
  for (auto& v : x.data()) v = rng.normal();
  const Tensor y = forward(p, x);
  for (std::size_t o = 0; o < 2; ++o) {
    double expected = y0[o];
    for (std::size_t i = 0; i < 3; ++i) expected += x[i] * (columns[i][o] - y0[o]);
    CHECK(y[o] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("pack and unpack round-trip") {
  Rng rng(5);
  const std::array<std::size_t, 3> dims{3, 4, 2};
  TransformParams p = make_transform(TransformRole::analysis, dims, Activation::leaky_relu, rng);
  const Tensor flat = pack(std::as_const(p).parameters());
  TransformParams q = p.zeros_like();
  unpack(flat, q.parameters());
  CHECK(q == p);
  CHECK_THROWS_AS(unpack(Tensor({flat.size() + 1}), q.parameters()), DimensionError);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

}  // TEST_SUITE
