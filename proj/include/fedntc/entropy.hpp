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

// Factorized (per-channel) learned entropy model.
//
// Each latent channel owns a univariate cumulative function
//
//   c(x) = sigmoid(f_K(... f_1(x)))
//   f_k(u) = g_k(softplus(H_k) u + b_k),   g_k(u) = u + tanh(a_k) * tanh(u)   (k < K)
//
// which is strictly increasing because softplus(H_k) > 0 and tanh(a_k) > -1.
// The likelihood of a (noisy or integer) latent v is c(v + 1/2) - c(v - 1/2).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedntc/nn.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr std::size_t kMaxFilterWidth = 16;

struct EntropyModelConfig {
  std::vector<std::size_t> filters{3, 3, 3};
  // Initial density is roughly a logistic of this scale.
  double init_scale = 1.0;

  bool operator==(const EntropyModelConfig&) const = default;
};

class FactorizedEntropyModel {
 public:
  FactorizedEntropyModel() = default;
  FactorizedEntropyModel(std::size_t channels, const EntropyModelConfig& config, Rng& rng);

  std::size_t channels() const { return channels_; }
  std::size_t depth() const { return matrices_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }  // 1, f_1, ..., 1

  // Raw (unconstrained) parameters, channel-major.
  //   matrices[k]: [C x w_{k+1} x w_k], biases[k]: [C x w_{k+1}],
  //   factors[k]:  [C x w_{k+1}] for k < depth - 1.
  const std::vector<Tensor>& matrices() const { return matrices_; }
  const std::vector<Tensor>& biases() const { return biases_; }
  const std::vector<Tensor>& factors() const { return factors_; }

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;

  FactorizedEntropyModel zeros_like() const;

  // Pre-sigmoid value f_K(...f_1(x)) for one channel.
  double logit(std::size_t channel, double x) const;

  bool operator==(const FactorizedEntropyModel&) const = default;

 private:
  friend struct RateGrad rate_loss_grad(const FactorizedEntropyModel&, const Tensor&, bool, bool);

  std::size_t channels_ = 0;
  std::vector<std::size_t> widths_;
  std::vector<Tensor> matrices_;
  std::vector<Tensor> biases_;
  std::vector<Tensor> factors_;
};

double cumulative(const FactorizedEntropyModel& model, std::size_t channel, double x);
Tensor cumulative(const FactorizedEntropyModel& model, std::size_t channel, const Tensor& x);

double likelihood(const FactorizedEntropyModel& model, std::size_t channel, double v);

// v is [batch x channels]; returns entrywise c(v + 1/2) - c(v - 1/2).
Tensor likelihood(const FactorizedEntropyModel& model, const Tensor& v);

// Mean over the batch of sum over channels of -log2 max(p, 1e-9).
double rate_loss(const FactorizedEntropyModel& model, const Tensor& v);

struct RateGrad {
  double bits = 0.0;
  FactorizedEntropyModel model;  // d bits / d raw parameters
  Tensor input;                  // d bits / d v
};

// The likelihood floor passes gradients through unchanged (the loss always
// prefers a larger likelihood), so floored entries still receive signal.
RateGrad rate_loss_grad(const FactorizedEntropyModel& model, const Tensor& v,
                        bool want_model_grad = true, bool want_input_grad = true);

// ---------------------------------------------------------------------------
// Integer CDF tables for entropy coding

struct ChannelTable {
  std::int32_t min_symbol = 0;
  std::int32_t max_symbol = -1;
  // cumulative[0] = 0, cumulative[j + 1] - cumulative[j] is the count of
  // symbol min_symbol + j; the final slot is the escape symbol. The last
  // entry equals 2^precision.
  std::vector<std::uint32_t> cumulative;

  std::size_t support_size() const {
    return static_cast<std::size_t>(max_symbol - min_symbol + 1);
  }
  std::size_t escape_index() const { return support_size(); }
  std::uint32_t count(std::size_t index) const { return cumulative[index + 1] - cumulative[index]; }
  std::uint32_t escape_count() const { return count(escape_index()); }

  bool operator==(const ChannelTable&) const = default;
};

struct CdfTable {
  unsigned precision = 16;
  std::vector<ChannelTable> channels;

  std::uint32_t total() const { return 1u << precision; }
  // Throws TableError if any channel violates the table invariants.
  void validate() const;

  bool operator==(const CdfTable&) const = default;
};

inline constexpr double kDefaultTailMass = 1.0 / 256.0;

// With `offsets`, symbol k of channel c stands for the value k + offsets[c].
CdfTable build_cdf_table(const FactorizedEntropyModel& model, unsigned precision = 16,
                         double tail_mass = kDefaultTailMass,
                         std::span<const double> offsets = {});

// Per-channel point where the cumulative equals 1/2.
std::vector<double> medians(const FactorizedEntropyModel& model);

// Quantise a probability vector (support symbols followed by escape) into
// counts summing to 2^precision with every entry >= 1.
std::vector<std::uint32_t> quantize_pmf(const std::vector<double>& pmf, unsigned precision);

ChannelTable channel_table_from_counts(std::int32_t min_symbol,
                                       const std::vector<std::uint32_t>& support_counts,
                                       std::uint32_t escape_count);

}  // namespace fedntc
