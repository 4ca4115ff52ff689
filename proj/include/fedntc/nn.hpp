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

// Minimal dense-network core: layered transforms, exact reverse-mode
// gradients, first-order optimisers and a central-difference checker.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedntc/tensor.hpp"

namespace fedntc {

enum class Activation { none, leaky_relu };
inline constexpr double kLeakySlope = 0.2;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  Activation activation = Activation::none;

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
  bool operator==(const DenseLayer&) const = default;
};

enum class TransformRole { analysis, synthesis };

struct TransformParams {
  TransformRole role = TransformRole::analysis;
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;

  // Throws DimensionError if consecutive layers do not chain.
  void validate() const;

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;

  // Same architecture, all parameters zero.
  TransformParams zeros_like() const;

  bool operator==(const TransformParams&) const = default;
};

// `dims` lists every width including input and output, e.g. {16, 32, 16}.
// Hidden layers use `hidden`, the final layer is affine.
TransformParams make_transform(TransformRole role, std::span<const std::size_t> dims,
                               Activation hidden, Rng& rng);

Tensor forward(const TransformParams& params, const Tensor& x);

struct ForwardCache {
  std::vector<Tensor> inputs;   // input to each layer
  std::vector<Tensor> preacts;  // affine output of each layer
  Tensor output;
};

ForwardCache forward_cached(const TransformParams& params, const Tensor& x);

struct TransformGrad {
  TransformParams params;  // gradient w.r.t. every weight and bias
  Tensor input;            // gradient w.r.t. the batch input
};

TransformGrad backward(const TransformParams& params, const ForwardCache& cache,
                       const Tensor& upstream);
TransformGrad backward(const TransformParams& params, const Tensor& x, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Optimisers

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(OptimizerConfig config) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }

  // p <- p - lr * g (sgd) or the bias-corrected Adam update. Throws
  // TrainingError naming the parameter if any gradient entry is non-finite;
  // nothing is modified in that case.
  void step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads);

  bool operator==(const OptimizerState&) const = default;

 private:
  OptimizerConfig config_{};
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

void optimizer_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
                    OptimizerState& state);

// Flattening helpers for gradient checks and averaging.
Tensor pack(std::span<const ConstParamRef> params);
void unpack(const Tensor& flat, std::span<const ParamRef> params);
std::vector<ConstParamRef> as_const(std::span<const ParamRef> params);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-3;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

using ScalarFn = std::function<double(const Tensor&)>;
using GradientFn = std::function<Tensor(const Tensor&)>;

GradCheckReport grad_check(const ScalarFn& fn, const GradientFn& gradient, const Tensor& point,
                           double tolerance, GradCheckOptions options = {});

}  // namespace fedntc
