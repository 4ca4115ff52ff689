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

#include "fedntc/entropy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedntc/error.hpp"

namespace fedntc {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

using Lane = std::array<double, kMaxFilterWidth>;

// Constrained parameters of one channel, evaluated once per call.
struct Chain {
  std::vector<std::size_t> widths;
  std::vector<std::vector<double>> matrix;      // softplus(H_raw), [out x in]
  std::vector<std::vector<double>> matrix_jac;  // sigmoid(H_raw) = d softplus
  std::vector<std::vector<double>> bias;
  std::vector<std::vector<double>> gate;        // tanh(a_raw)
  std::vector<std::vector<double>> gate_jac;    // 1 - tanh(a_raw)^2

  std::size_t depth() const { return matrix.size(); }
};

struct ChainTrace {
  std::vector<Lane> input;  // input to each layer
  std::vector<Lane> act;    // tanh(z) for gated layers
};

Chain make_chain(const FactorizedEntropyModel& model, std::size_t channel) {
  Chain chain;
  chain.widths = model.widths();
  const std::size_t depth = model.depth();
  chain.matrix.resize(depth);
  chain.matrix_jac.resize(depth);
  chain.bias.resize(depth);
  chain.gate.resize(depth);
  chain.gate_jac.resize(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t in = chain.widths[k];
    const std::size_t out = chain.widths[k + 1];
    const double* h = model.matrices()[k].data().data() + channel * out * in;
    const double* b = model.biases()[k].data().data() + channel * out;
    chain.matrix[k].resize(out * in);
    chain.matrix_jac[k].resize(out * in);
    for (std::size_t j = 0; j < out * in; ++j) {
      chain.matrix[k][j] = softplus(h[j]);
      chain.matrix_jac[k][j] = sigmoid(h[j]);
    }
    chain.bias[k].assign(b, b + out);
    if (k + 1 < depth) {
      const double* a = model.factors()[k].data().data() + channel * out;
      chain.gate[k].resize(out);
      chain.gate_jac[k].resize(out);
      for (std::size_t o = 0; o < out; ++o) {
        chain.gate[k][o] = std::tanh(a[o]);
        chain.gate_jac[k][o] = 1.0 - chain.gate[k][o] * chain.gate[k][o];
      }
    }
  }
  return chain;
}

double chain_logit(const Chain& chain, double x, ChainTrace* trace) {
  Lane h{};
  h[0] = x;
  const std::size_t depth = chain.depth();
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t in = chain.widths[k];
    const std::size_t out = chain.widths[k + 1];
    if (trace) trace->input[k] = h;
    Lane z{};
    const double* m = chain.matrix[k].data();
    for (std::size_t o = 0; o < out; ++o) {
      double acc = chain.bias[k][o];
      for (std::size_t i = 0; i < in; ++i) acc += m[o * in + i] * h[i];
      z[o] = acc;
    }
    if (k + 1 < depth) {
      for (std::size_t o = 0; o < out; ++o) {
        const double t = std::tanh(z[o]);
        if (trace) trace->act[k][o] = t;
        z[o] += chain.gate[k][o] * t;
      }
    }
    h = z;
  }
  return h[0];
}

// Gradient accumulators in raw-parameter space for one channel.
struct ChainGrad {
  std::vector<std::vector<double>> matrix, bias, gate;
  explicit ChainGrad(const Chain& chain) {
    const std::size_t depth = chain.depth();
    matrix.resize(depth);
    bias.resize(depth);
    gate.resize(depth);
    for (std::size_t k = 0; k < depth; ++k) {
      matrix[k].assign(chain.matrix[k].size(), 0.0);
      bias[k].assign(chain.bias[k].size(), 0.0);
      gate[k].assign(chain.gate[k].size(), 0.0);
    }
  }
};

// Back-propagates d loss / d logit = g through one traced evaluation; returns
// d loss / d x.
double chain_backward(const Chain& chain, const ChainTrace& trace, double g, ChainGrad* acc) {
  Lane dh{};
  dh[0] = g;
  for (std::size_t k = chain.depth(); k-- > 0;) {
    const std::size_t in = chain.widths[k];
    const std::size_t out = chain.widths[k + 1];
    Lane dz{};
    if (k + 1 < chain.depth()) {
      for (std::size_t o = 0; o < out; ++o) {
        const double t = trace.act[k][o];
        dz[o] = dh[o] * (1.0 + chain.gate[k][o] * (1.0 - t * t));
        if (acc) acc->gate[k][o] += dh[o] * t * chain.gate_jac[k][o];
      }
    } else {
      for (std::size_t o = 0; o < out; ++o) dz[o] = dh[o];
    }
    Lane din{};
    const double* m = chain.matrix[k].data();
    const Lane& x = trace.input[k];
    for (std::size_t o = 0; o < out; ++o) {
      if (acc) acc->bias[k][o] += dz[o];
      for (std::size_t i = 0; i < in; ++i) {
        if (acc) acc->matrix[k][o * in + i] += dz[o] * x[i] * chain.matrix_jac[k][o * in + i];
        din[i] += m[o * in + i] * dz[o];
      }
    }
    dh = din;
  }
  return dh[0];
}

void check_batch(const FactorizedEntropyModel& model, const Tensor& v) {
  if (v.rank() != 2 || v.cols() != model.channels()) {
    throw DimensionError("entropy model with " + std::to_string(model.channels()) +
                         " channels got input " + shape_to_string(v.shape()));
  }
}

}  // namespace

FactorizedEntropyModel::FactorizedEntropyModel(std::size_t channels,
                                               const EntropyModelConfig& config, Rng& rng)
    : channels_(channels) {
  if (channels == 0) throw DimensionError("entropy model needs at least one channel");
  if (!(config.init_scale > 0.0)) throw DomainError("entropy model init_scale must be positive");
  widths_.push_back(1);
  for (auto f : config.filters) {
    if (f == 0 || f > kMaxFilterWidth) {
      throw DimensionError("entropy model filter width must be in [1, " +
                           std::to_string(kMaxFilterWidth) + "]");
    }
    widths_.push_back(f);
  }
  widths_.push_back(1);
  const std::size_t depth = widths_.size() - 1;
  // Each layer scales by 1 / (scale * fan_out) and sums fan_in terms, so the
  // composed slope is 1 / init_scale.
  const double scale = std::pow(config.init_scale, 1.0 / static_cast<double>(depth));
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t in = widths_[k];
    const std::size_t out = widths_[k + 1];
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(out)));
    matrices_.emplace_back(Shape{channels, out, in}, init);
    Tensor bias({channels, out});
    for (auto& b : bias.data()) b = rng.uniform(-0.5, 0.5);
    biases_.push_back(std::move(bias));
    if (k + 1 < depth) factors_.emplace_back(Shape{channels, out}, 0.0);
  }
}

std::vector<ParamRef> FactorizedEntropyModel::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t k = 0; k < matrices_.size(); ++k) {
    out.push_back({"matrix" + std::to_string(k), &matrices_[k]});
    out.push_back({"bias" + std::to_string(k), &biases_[k]});
    if (k < factors_.size()) out.push_back({"factor" + std::to_string(k), &factors_[k]});
  }
  return out;
}

std::vector<ConstParamRef> FactorizedEntropyModel::parameters() const {
  std::vector<ConstParamRef> out;
  for (std::size_t k = 0; k < matrices_.size(); ++k) {
    out.push_back({"matrix" + std::to_string(k), &matrices_[k]});
    out.push_back({"bias" + std::to_string(k), &biases_[k]});
    if (k < factors_.size()) out.push_back({"factor" + std::to_string(k), &factors_[k]});
  }
  return out;
}

FactorizedEntropyModel FactorizedEntropyModel::zeros_like() const {
  FactorizedEntropyModel z = *this;
  for (auto& p : z.parameters()) p.tensor->fill(0.0);
  return z;
}

double FactorizedEntropyModel::logit(std::size_t channel, double x) const {
  if (channel >= channels_) {
    throw DimensionError("channel " + std::to_string(channel) + " out of range for " +
                         std::to_string(channels_) + " channels");
  }
  return chain_logit(make_chain(*this, channel), x, nullptr);
}

double cumulative(const FactorizedEntropyModel& model, std::size_t channel, double x) {
  return sigmoid(model.logit(channel, x));
}

Tensor cumulative(const FactorizedEntropyModel& model, std::size_t channel, const Tensor& x) {
  if (channel >= model.channels()) {
    throw DimensionError("channel " + std::to_string(channel) + " out of range");
  }
  const Chain chain = make_chain(model, channel);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(chain_logit(chain, x[i], nullptr));
  return out;
}

double likelihood(const FactorizedEntropyModel& model, std::size_t channel, double v) {
  if (channel >= model.channels()) {
    throw DimensionError("channel " + std::to_string(channel) + " out of range");
  }
  const Chain chain = make_chain(model, channel);
  return sigmoid(chain_logit(chain, v + 0.5, nullptr)) -
         sigmoid(chain_logit(chain, v - 0.5, nullptr));
}

Tensor likelihood(const FactorizedEntropyModel& model, const Tensor& v) {
  check_batch(model, v);
  Tensor out(v.shape());
  const std::size_t batch = v.rows();
  const std::size_t channels = model.channels();
  for (std::size_t c = 0; c < channels; ++c) {
    const Chain chain = make_chain(model, c);
    for (std::size_t r = 0; r < batch; ++r) {
      const double x = v(r, c);
      out(r, c) = sigmoid(chain_logit(chain, x + 0.5, nullptr)) -
                  sigmoid(chain_logit(chain, x - 0.5, nullptr));
    }
  }
  return out;
}

double rate_loss(const FactorizedEntropyModel& model, const Tensor& v) {
  check_batch(model, v);
  if (v.rows() == 0) throw DimensionError("rate_loss: empty batch");
  const Tensor p = likelihood(model, v);
  double bits = 0.0;
  for (double x : p.data()) bits -= std::log2(std::max(x, kLikelihoodFloor));
  return bits / static_cast<double>(v.rows());
}

RateGrad rate_loss_grad(const FactorizedEntropyModel& model, const Tensor& v,
                        bool want_model_grad, bool want_input_grad) {
  check_batch(model, v);
  if (v.rows() == 0) throw DimensionError("rate_loss: empty batch");
  const std::size_t batch = v.rows();
  const std::size_t channels = model.channels();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  const double inv_ln2 = 1.0 / std::numbers::ln2;

  RateGrad out;
  if (want_model_grad) out.model = model.zeros_like();
  if (want_input_grad) out.input = Tensor(v.shape());

  ChainTrace upper_trace, lower_trace;
  upper_trace.input.resize(model.depth());
  upper_trace.act.resize(model.depth());
  lower_trace.input.resize(model.depth());
  lower_trace.act.resize(model.depth());

  double bits = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const Chain chain = make_chain(model, c);
    ChainGrad acc(chain);
    ChainGrad* acc_ptr = want_model_grad ? &acc : nullptr;
    for (std::size_t r = 0; r < batch; ++r) {
      const double x = v(r, c);
      const double upper_logit = chain_logit(chain, x + 0.5, &upper_trace);
      const double lower_logit = chain_logit(chain, x - 0.5, &lower_trace);
      const double cu = sigmoid(upper_logit);
      const double cl = sigmoid(lower_logit);
      const double p = cu - cl;
      const double floored = std::max(p, kLikelihoodFloor);
      bits -= std::log2(floored);
      // d(-log2 p)/dp, passed straight through the floor.
      const double dp = -inv_ln2 / floored * inv_batch;
      const double du = chain_backward(chain, upper_trace, dp * cu * (1.0 - cu), acc_ptr);
      const double dl = chain_backward(chain, lower_trace, -dp * cl * (1.0 - cl), acc_ptr);
      if (want_input_grad) out.input(r, c) = du + dl;
    }
    if (want_model_grad) {
      for (std::size_t k = 0; k < chain.depth(); ++k) {
        auto m = out.model.matrices_[k].data();
        const std::size_t mstride = acc.matrix[k].size();
        std::copy(acc.matrix[k].begin(), acc.matrix[k].end(), m.begin() + c * mstride);
        auto b = out.model.biases_[k].data();
        const std::size_t bstride = acc.bias[k].size();
        std::copy(acc.bias[k].begin(), acc.bias[k].end(), b.begin() + c * bstride);
        if (k + 1 < chain.depth()) {
          auto a = out.model.factors_[k].data();
          std::copy(acc.gate[k].begin(), acc.gate[k].end(), a.begin() + c * bstride);
        }
      }
    }
  }
  out.bits = bits * inv_batch;
  return out;
}

// ---------------------------------------------------------------------------

void CdfTable::validate() const {
  if (precision < 8 || precision > 24) {
    throw TableError("precision " + std::to_string(precision) + " outside [8, 24]");
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& t = channels[c];
    const std::string where = "channel " + std::to_string(c) + ": ";
    if (t.max_symbol < t.min_symbol) throw TableError(where + "empty support");
    if (t.cumulative.size() != t.support_size() + 2) {
      throw TableError(where + "cumulative table has wrong length");
    }
    if (t.support_size() + 1 >= total()) {
      throw TableError(where + "too many symbols for the precision");
    }
    if (t.cumulative.front() != 0 || t.cumulative.back() != total()) {
      throw TableError(where + "cumulative counts must run from 0 to 2^precision");
    }
    for (std::size_t j = 0; j + 1 < t.cumulative.size(); ++j) {
      if (t.cumulative[j + 1] < t.cumulative[j]) throw TableError(where + "decreasing counts");
      if (j < t.support_size() && t.cumulative[j + 1] == t.cumulative[j]) {
        throw TableError(where + "zero count for in-support symbol");
      }
    }
  }
}

std::vector<std::uint32_t> quantize_pmf(const std::vector<double>& pmf, unsigned precision) {
  const std::uint64_t total = 1ull << precision;
  if (pmf.empty() || pmf.size() >= total) {
    throw TableError("cannot quantize " + std::to_string(pmf.size()) + " symbols at precision " +
                     std::to_string(precision));
  }
  double mass = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw TableError("pmf entries must be finite and >= 0");
    mass += p;
  }
  if (!(mass > 0.0)) throw TableError("pmf has zero mass");

  const std::size_t n = pmf.size();
  std::vector<double> target(n);
  std::vector<std::uint32_t> counts(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = pmf[i] / mass * static_cast<double>(total);
    counts[i] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::floor(target[i])));
    assigned += counts[i];
  }
  // Largest-remainder correction; ties broken by index for determinism.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::int64_t diff = static_cast<std::int64_t>(total) - assigned;
  if (diff > 0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return target[a] - counts[a] > target[b] - counts[b];
    });
    for (std::size_t k = 0; diff > 0; k = (k + 1) % n, --diff) ++counts[order[k]];
  } else if (diff < 0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return target[a] - counts[a] < target[b] - counts[b];
    });
    std::size_t k = 0;
    while (diff < 0) {
      const std::size_t i = order[k];
      if (counts[i] > 1) {
        --counts[i];
        ++diff;
      }
      k = (k + 1) % n;
    }
  }
  return counts;
}

ChannelTable channel_table_from_counts(std::int32_t min_symbol,
                                       const std::vector<std::uint32_t>& support_counts,
                                       std::uint32_t escape_count) {
  if (support_counts.empty()) throw TableError("empty support");
  ChannelTable t;
  t.min_symbol = min_symbol;
  t.max_symbol = min_symbol + static_cast<std::int32_t>(support_counts.size()) - 1;
  t.cumulative.assign(1, 0);
  for (auto c : support_counts) t.cumulative.push_back(t.cumulative.back() + c);
  t.cumulative.push_back(t.cumulative.back() + escape_count);
  return t;
}

std::vector<double> medians(const FactorizedEntropyModel& model) {
  std::vector<double> out(model.channels());
  for (std::size_t c = 0; c < model.channels(); ++c) {
    const Chain chain = make_chain(model, c);
    double lo = -1.0, hi = 1.0;
    while (chain_logit(chain, lo, nullptr) > 0.0) lo *= 2.0;
    while (chain_logit(chain, hi, nullptr) < 0.0) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (chain_logit(chain, mid, nullptr) < 0.0 ? lo : hi) = mid;
    }
    out[c] = 0.5 * (lo + hi);
  }
  return out;
}

CdfTable build_cdf_table(const FactorizedEntropyModel& model, unsigned precision,
                         double tail_mass, std::span<const double> offsets) {
  if (!offsets.empty() && offsets.size() != model.channels()) {
    throw TableError("offset count does not match the channel count");
  }
  if (precision < 8 || precision > 24) {
    throw TableError("precision " + std::to_string(precision) + " outside [8, 24]");
  }
  if (!(tail_mass > 0.0 && tail_mass < 0.01)) throw TableError("tail_mass must be in (0, 0.01)");
  CdfTable table;
  table.precision = precision;
  const double half_tail = tail_mass / 2.0;
  constexpr std::int64_t kSearchLimit = std::int64_t{1} << 30;
  for (std::size_t c = 0; c < model.channels(); ++c) {
    const Chain chain = make_chain(model, c);
    const double shift = offsets.empty() ? 0.0 : offsets[c];
    auto cdf = [&](double x) { return sigmoid(chain_logit(chain, x + shift, nullptr)); };
    // Largest m with c(m - 1/2) <= tail/2.
    std::int64_t lo = -kSearchLimit, hi = kSearchLimit;
    if (!(cdf(lo - 0.5) <= half_tail) || cdf(hi - 0.5) <= half_tail) {
      throw TableError("channel " + std::to_string(c) + ": model mass is not localised");
    }
    while (hi - lo > 1) {
      const std::int64_t mid = lo + (hi - lo) / 2;
      (cdf(mid - 0.5) <= half_tail ? lo : hi) = mid;
    }
    const std::int64_t y_min = lo;
    // Smallest m with 1 - c(m + 1/2) <= tail/2.
    lo = -kSearchLimit;
    hi = kSearchLimit;
    if (1.0 - cdf(lo + 0.5) <= half_tail || !(1.0 - cdf(hi + 0.5) <= half_tail)) {
      throw TableError("channel " + std::to_string(c) + ": model mass is not localised");
    }
    while (hi - lo > 1) {
      const std::int64_t mid = lo + (hi - lo) / 2;
      (1.0 - cdf(mid + 0.5) <= half_tail ? hi : lo) = mid;
    }
    const std::int64_t y_max = hi;
    const std::int64_t support = y_max - y_min + 1;
    if (support + 1 >= (std::int64_t{1} << precision)) {
      throw TableError("channel " + std::to_string(c) + ": support of " +
                       std::to_string(support) + " symbols exceeds precision " +
                       std::to_string(precision));
    }
    std::vector<double> pmf;
    pmf.reserve(static_cast<std::size_t>(support) + 1);
    double previous = cdf(static_cast<double>(y_min) - 0.5);
    const double lower_tail = previous;
    for (std::int64_t s = y_min; s <= y_max; ++s) {
      const double next = cdf(static_cast<double>(s) + 0.5);
      pmf.push_back(std::max(next - previous, 0.0));
      previous = next;
    }
    pmf.push_back(lower_tail + (1.0 - previous));
    const auto counts = quantize_pmf(pmf, precision);
    std::vector<std::uint32_t> support_counts(counts.begin(), counts.end() - 1);
    table.channels.push_back(
        channel_table_from_counts(static_cast<std::int32_t>(y_min), support_counts, counts.back()));
  }
  return table;
}

}  // namespace fedntc
