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

#include "fedntc/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fedntc/error.hpp"

namespace fedntc {

std::string to_string(Activation a) {
  return a == Activation::none ? "none" : "leaky_relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "none" || name == "linear") return Activation::none;
  if (name == "leaky_relu" || name == "leaky-relu") return Activation::leaky_relu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t TransformParams::input_dim() const {
  return layers.empty() ? 0 : layers.front().in_dim();
}

std::size_t TransformParams::output_dim() const {
  return layers.empty() ? 0 : layers.back().out_dim();
}

void TransformParams::validate() const {
  if (layers.empty()) throw DimensionError("transform has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(0)) {
      throw DimensionError("layer " + std::to_string(k) + ": weight " +
                           shape_to_string(l.weight.shape()) + " and bias " +
                           shape_to_string(l.bias.shape()) + " are inconsistent");
    }
    if (k > 0 && layers[k - 1].out_dim() != l.in_dim()) {
      throw DimensionError("layer " + std::to_string(k) + " expects input dim " +
                           std::to_string(l.in_dim()) + " but layer " + std::to_string(k - 1) +
                           " produces " + std::to_string(layers[k - 1].out_dim()));
    }
  }
}

std::vector<ParamRef> TransformParams::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    out.push_back({"layer" + std::to_string(k) + ".weight", &layers[k].weight});
    out.push_back({"layer" + std::to_string(k) + ".bias", &layers[k].bias});
  }
  return out;
}

std::vector<ConstParamRef> TransformParams::parameters() const {
  std::vector<ConstParamRef> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    out.push_back({"layer" + std::to_string(k) + ".weight", &layers[k].weight});
    out.push_back({"layer" + std::to_string(k) + ".bias", &layers[k].bias});
  }
  return out;
}

TransformParams TransformParams::zeros_like() const {
  TransformParams z = *this;
  for (auto& l : z.layers) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
  return z;
}

TransformParams make_transform(TransformRole role, std::span<const std::size_t> dims,
                               Activation hidden, Rng& rng) {
  if (dims.size() < 2) throw DimensionError("make_transform: need at least input and output dims");
  TransformParams params;
  params.role = role;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const std::size_t in = dims[k];
    const std::size_t out = dims[k + 1];
    if (in == 0 || out == 0) throw DimensionError("make_transform: zero width");
    DenseLayer layer;
    layer.weight = Tensor({out, in});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    layer.bias = Tensor({out});
    layer.activation = (k + 2 == dims.size()) ? Activation::none : hidden;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

void check_input(const TransformParams& params, const Tensor& x) {
  if (params.layers.empty()) throw DimensionError("transform has no layers");
  if (x.rank() != 2 || x.cols() != params.input_dim()) {
    throw DimensionError("layer 0: input " + shape_to_string(x.shape()) +
                         " does not match input dim " + std::to_string(params.input_dim()));
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using ConstVectorView = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatrixView view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

MatrixView view(Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Tensor affine(const DenseLayer& layer, const Tensor& x) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  Tensor y({batch, out});
  auto ym = view(y, batch, out);
  ym.noalias() = view(x, batch, in) * view(layer.weight, out, in).transpose();
  ym.rowwise() += ConstVectorView(layer.bias.data().data(), static_cast<Eigen::Index>(out));
  return y;
}

void activate(Activation a, Tensor& t) {
  if (a == Activation::none) return;
  for (auto& v : t.data()) v = v > 0.0 ? v : kLeakySlope * v;
}

}  // namespace

Tensor forward(const TransformParams& params, const Tensor& x) {
  check_input(params, x);
  Tensor h = x;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (h.cols() != layer.in_dim()) {
      throw DimensionError("layer " + std::to_string(k) + ": expected input dim " +
                           std::to_string(layer.in_dim()) + ", got " + std::to_string(h.cols()));
    }
    h = affine(layer, h);
    activate(layer.activation, h);
  }
  return h;
}

ForwardCache forward_cached(const TransformParams& params, const Tensor& x) {
  check_input(params, x);
  ForwardCache cache;
  Tensor h = x;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (h.cols() != layer.in_dim()) {
      throw DimensionError("layer " + std::to_string(k) + ": expected input dim " +
                           std::to_string(layer.in_dim()) + ", got " + std::to_string(h.cols()));
    }
    Tensor pre = affine(layer, h);
    cache.inputs.push_back(std::move(h));
    h = pre;
    activate(layer.activation, h);
    cache.preacts.push_back(std::move(pre));
  }
  cache.output = std::move(h);
  return cache;
}

TransformGrad backward(const TransformParams& params, const ForwardCache& cache,
                       const Tensor& upstream) {
  if (upstream.shape() != cache.output.shape()) {
    throw DimensionError("backward: upstream " + shape_to_string(upstream.shape()) +
                         " does not match output " + shape_to_string(cache.output.shape()));
  }
  TransformGrad grad;
  grad.params = params.zeros_like();
  Tensor delta = upstream;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& layer = params.layers[k];
    const Tensor& pre = cache.preacts[k];
    const Tensor& in = cache.inputs[k];
    if (layer.activation == Activation::leaky_relu) {
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (pre[i] <= 0.0) delta[i] *= kLeakySlope;
      }
    }
    const std::size_t batch = in.rows();
    const std::size_t n_in = layer.in_dim();
    const std::size_t n_out = layer.out_dim();
    const auto d = view(delta, batch, n_out);
    view(grad.params.layers[k].weight, n_out, n_in).noalias() = d.transpose() * view(in, batch, n_in);
    auto gb = grad.params.layers[k].bias.data();
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = 0.0;
      for (std::size_t r = 0; r < batch; ++r) acc += delta(r, o);
      gb[o] = acc;
    }
    Tensor next({batch, n_in});
    view(next, batch, n_in).noalias() = d * view(layer.weight, n_out, n_in);
    delta = std::move(next);
  }
  grad.input = std::move(delta);
  return grad;
}

TransformGrad backward(const TransformParams& params, const Tensor& x, const Tensor& upstream) {
  return backward(params, forward_cached(params, x), upstream);
}

// ---------------------------------------------------------------------------

void OptimizerState::step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor->shape() != grads[i].tensor->shape()) {
      throw DimensionError("optimizer: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].tensor->all_finite()) {
      throw TrainingError("non-finite gradient for parameter " + params[i].name);
    }
  }
  if (config_.kind == OptimizerKind::adam) {
    if (first_moment_.empty()) {
      for (const auto& p : params) {
        first_moment_.emplace_back(p.tensor->shape());
        second_moment_.emplace_back(p.tensor->shape());
      }
    } else if (first_moment_.size() != params.size()) {
      throw DimensionError("optimizer: parameter count changed between steps");
    }
  }
  ++step_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].tensor->data();
      auto g = grads[i].tensor->data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
    return;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor->data();
    auto g = grads[i].tensor->data();
    auto m = first_moment_[i].data();
    auto v = second_moment_[i].data();
    if (m.size() != p.size()) {
      throw DimensionError("optimizer: moment buffer shape mismatch for " + params[i].name);
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void optimizer_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
                    OptimizerState& state) {
  state.step(params, grads);
}

Tensor pack(std::span<const ConstParamRef> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  std::vector<double> flat;
  flat.reserve(n);
  for (const auto& p : params) {
    auto d = p.tensor->data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  return Tensor({n}, std::move(flat));
}

void unpack(const Tensor& flat, std::span<const ParamRef> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  if (n != flat.size()) {
    throw DimensionError("unpack: " + std::to_string(flat.size()) + " values for " +
                         std::to_string(n) + " parameters");
  }
  std::size_t offset = 0;
  for (const auto& p : params) {
    auto d = p.tensor->data();
    std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
}

std::vector<ConstParamRef> as_const(std::span<const ParamRef> params) {
  std::vector<ConstParamRef> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor});
  return out;
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ScalarFn& fn, const GradientFn& gradient, const Tensor& point,
                           double tolerance, GradCheckOptions options) {
  if (!(tolerance > 0.0)) throw DomainError("grad_check: tolerance must be positive");
  const Tensor analytic = gradient(point);
  if (analytic.size() != point.size()) {
    throw DimensionError("grad_check: gradient has " + std::to_string(analytic.size()) +
                         " entries for a point of size " + std::to_string(point.size()));
  }
  GradCheckReport report;
  report.coordinates = point.size();
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + options.step;
    const double f_plus = fn(probe);
    probe[i] = x0 - options.step;
    const double f_minus = fn(probe);
    probe[i] = x0;
    const double numeric = (f_plus - f_minus) / (2.0 * options.step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    const double rel = std::abs(a - numeric) / denom;
    if (!(rel <= report.max_relative_error)) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace fedntc
