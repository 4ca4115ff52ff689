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

#include "fedntc/gradsuite.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "fedntc/entropy.hpp"
#include "fedntc/error.hpp"
#include "fedntc/federation.hpp"

namespace fedntc {
namespace {

constexpr int kMaxRedraws = 200;

Tensor normal_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

Tensor uniform_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform() - 0.5;
  return t;
}

bool clear_of_kinks(const TransformParams& params, const Tensor& x, double margin) {
  const ForwardCache cache = forward_cached(params, x);
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    if (params.layers[k].activation != Activation::leaky_relu) continue;
    for (double z : cache.preacts[k].data()) {
      if (std::abs(z) < margin) return false;
    }
  }
  return true;
}

double weighted_sum(const Tensor& a, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

GradCheckOptions check_options(const GradSuiteOptions& o) { return {o.step, o.floor}; }

Tensor pack_of(const TransformParams& p) { return pack(p.parameters()); }
Tensor pack_of(const FactorizedEntropyModel& m) { return pack(m.parameters()); }

// <upstream, forward(params, x)> against backward, w.r.t. parameters and input.
std::array<GradCheckReport, 2> check_transform(const TransformParams& params, const Tensor& x,
                                               const Tensor& upstream,
                                               const GradSuiteOptions& o) {
  const Tensor theta = pack_of(params);
  auto with_theta = [&](const Tensor& t) {
    TransformParams p = params;
    unpack(t, p.parameters());
    return p;
  };
  const auto param_report = grad_check(
      [&](const Tensor& t) { return weighted_sum(forward(with_theta(t), x), upstream); },
      [&](const Tensor& t) {
        const TransformParams p = with_theta(t);
        return pack_of(backward(p, x, upstream).params);
      },
      theta, o.tolerance, check_options(o));
  const auto input_report = grad_check(
      [&](const Tensor& in) { return weighted_sum(forward(params, in), upstream); },
      [&](const Tensor& in) { return backward(params, in, upstream).input; }, x, o.tolerance,
      check_options(o));
  return {param_report, input_report};
}

struct Case {
  std::string name;
  std::function<std::vector<GradCheckReport>(Rng&, const GradSuiteOptions&)> run;
};

std::vector<GradCheckReport> dense_case(Rng& rng, const GradSuiteOptions& o, Activation act) {
  const std::size_t in = 5, out = 4, batch = 6;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const std::array<std::size_t, 2> dims{in, out};
    TransformParams p = make_transform(TransformRole::analysis, dims, act, rng);
    p.layers[0].activation = act;
    for (auto& b : p.layers[0].bias.data()) b = 0.3 * rng.normal();
    const Tensor x = normal_tensor({batch, in}, rng);
    if (!clear_of_kinks(p, x, o.kink_margin)) continue;
    const Tensor up = normal_tensor({batch, out}, rng);
    const auto r = check_transform(p, x, up, o);
    return {r[0], r[1]};
  }
  throw DomainError("gradient suite: no kink-free test point found");
}

std::vector<GradCheckReport> mlp_case(Rng& rng, const GradSuiteOptions& o) {
  const std::size_t batch = 6;
  const std::array<std::size_t, 3> dims{6, 8, 3};
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const TransformParams p =
        make_transform(TransformRole::analysis, dims, Activation::leaky_relu, rng);
    const Tensor x = normal_tensor({batch, dims[0]}, rng);
    if (!clear_of_kinks(p, x, o.kink_margin)) continue;
    const Tensor up = normal_tensor({batch, dims[2]}, rng);
    const auto r = check_transform(p, x, up, o);
    return {r[0], r[1]};
  }
  throw DomainError("gradient suite: no kink-free test point found");
}

std::vector<GradCheckReport> rate_case(Rng& rng, const GradSuiteOptions& o) {
  const std::size_t channels = 3, batch = 6;
  FactorizedEntropyModel model(channels, EntropyModelConfig{}, rng);
  // Perturb away from the symmetric initialisation so every parameter matters.
  for (auto& p : model.parameters()) {
    for (auto& v : p.tensor->data()) v += 0.2 * rng.normal();
  }
  const Tensor v = normal_tensor({batch, channels}, rng, 1.5);
  const Tensor theta = pack_of(model);
  auto with_theta = [&](const Tensor& t) {
    FactorizedEntropyModel m = model;
    unpack(t, m.parameters());
    return m;
  };
  const auto model_report = grad_check(
      [&](const Tensor& t) { return rate_loss(with_theta(t), v); },
      [&](const Tensor& t) {
        const auto g = rate_loss_grad(with_theta(t), v, true, false);
        return pack_of(g.model);
      },
      theta, o.tolerance, check_options(o));
  const auto input_report = grad_check(
      [&](const Tensor& in) { return rate_loss(model, in); },
      [&](const Tensor& in) { return rate_loss_grad(model, in, false, true).input; }, v,
      o.tolerance, check_options(o));
  return {model_report, input_report};
}

std::vector<GradCheckReport> objective_case(Rng& rng, const GradSuiteOptions& o) {
  const std::size_t d_x = 5, hidden = 7, d_y = 3, batch = 6;
  const double lambda = 0.7;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const std::array<std::size_t, 3> a_dims{d_x, hidden, d_y};
    const std::array<std::size_t, 3> s_dims{d_y, hidden, d_x};
    const TransformParams g_a =
        make_transform(TransformRole::analysis, a_dims, Activation::leaky_relu, rng);
    const TransformParams g_s =
        make_transform(TransformRole::synthesis, s_dims, Activation::leaky_relu, rng);
    FactorizedEntropyModel model(d_y, EntropyModelConfig{}, rng);
    for (auto& p : model.parameters()) {
      for (auto& v : p.tensor->data()) v += 0.2 * rng.normal();
    }
    const Tensor x = normal_tensor({batch, d_x}, rng, 2.0);
    const Tensor noise = uniform_tensor({batch, d_y}, rng);
    if (!clear_of_kinks(g_a, x, o.kink_margin)) continue;
    Tensor y_tilde = forward(g_a, x);
    for (std::size_t i = 0; i < y_tilde.size(); ++i) y_tilde[i] += noise[i];
    if (!clear_of_kinks(g_s, y_tilde, o.kink_margin)) continue;

    struct Bundle {
      TransformParams g_a, g_s;
      FactorizedEntropyModel model;
      std::vector<ParamRef> refs() {
        std::vector<ParamRef> r;
        for (auto& p : g_a.parameters()) r.push_back(p);
        for (auto& p : g_s.parameters()) r.push_back(p);
        for (auto& p : model.parameters()) r.push_back(p);
        return r;
      }
    };
    Bundle base{g_a, g_s, model};
    const auto base_refs = base.refs();
    const Tensor theta = pack(fedntc::as_const(base_refs));
    auto with_theta = [&](const Tensor& t) {
      Bundle b = base;
      unpack(t, b.refs());
      return b;
    };
    const auto report = grad_check(
        [&](const Tensor& t) {
          const Bundle b = with_theta(t);
          return client_objective(x, b.g_a, b.g_s, b.model, lambda, noise).loss;
        },
        [&](const Tensor& t) {
          const Bundle b = with_theta(t);
          auto g = client_objective_grad(x, b.g_a, b.g_s, b.model, lambda, noise);
          Bundle gb{std::move(g.g_a), std::move(g.g_s), std::move(g.entropy)};
          const auto grad_refs = gb.refs();
          return pack(fedntc::as_const(grad_refs));
        },
        theta, o.tolerance, check_options(o));
    return {report};
  }
  throw DomainError("gradient suite: no kink-free test point found");
}

const std::vector<Case>& cases() {
  static const std::vector<Case> all{
      {"dense/none", [](Rng& r, const GradSuiteOptions& o) { return dense_case(r, o, Activation::none); }},
      {"dense/leaky_relu",
       [](Rng& r, const GradSuiteOptions& o) { return dense_case(r, o, Activation::leaky_relu); }},
      {"transform/two_layer", mlp_case},
      {"rate_loss", rate_case},
      {"objective", objective_case},
  };
  return all;
}

}  // namespace

bool GradSuiteReport::passed() const {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.report.passed; });
}

double GradSuiteReport::worst_relative_error() const {
  const auto* w = worst();
  return w ? w->report.max_relative_error : 0.0;
}

const GradSuiteCase* GradSuiteReport::worst() const {
  const GradSuiteCase* w = nullptr;
  for (const auto& c : cases) {
    if (w == nullptr || c.report.max_relative_error > w->report.max_relative_error) w = &c;
  }
  return w;
}

std::vector<std::string> gradient_suite_case_names() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  return names;
}

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options) {
  if (options.seeds == 0) throw DomainError("gradient suite: seeds must be >= 1");
  GradSuiteReport out;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    for (std::size_t k = 0; k < cases().size(); ++k) {
      Rng rng(derive_seed(options.base_seed, {s, k}));
      const auto reports = cases()[k].run(rng, options);
      const char* parts[] = {"params", "input"};
      for (std::size_t i = 0; i < reports.size(); ++i) {
        std::string name = cases()[k].name;
        if (reports.size() > 1) name += std::string("/") + parts[i];
        out.cases.push_back({name, s, reports[i]});
      }
    }
  }
  return out;
}

}  // namespace fedntc
