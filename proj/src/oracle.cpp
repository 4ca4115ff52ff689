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

#include "fedntc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "fedntc/error.hpp"

namespace fedntc {

double gaussian_rd(double variance, double distortion) {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw DomainError("gaussian_rd: variance must be positive and finite");
  }
  if (!(distortion > 0.0) || !std::isfinite(distortion)) {
    throw DomainError("gaussian_rd: distortion must be positive and finite");
  }
  return std::max(0.0, 0.5 * std::log2(variance / distortion));
}

WaterfillResult reverse_waterfill(const std::vector<double>& variances, double distortion) {
  const std::vector<double> weights(variances.size(),
                                    variances.empty() ? 0.0 : 1.0 / variances.size());
  return reverse_waterfill(variances, weights, distortion);
}

WaterfillResult reverse_waterfill(const std::vector<double>& variances,
                                  const std::vector<double>& weights, double distortion) {
  if (variances.empty()) throw DomainError("reverse_waterfill: no components");
  if (weights.size() != variances.size()) {
    throw DomainError("reverse_waterfill: weight count does not match variance count");
  }
  if (!(distortion > 0.0) || !std::isfinite(distortion)) {
    throw DomainError("reverse_waterfill: distortion must be positive and finite");
  }
  double weight_sum = 0.0;
  for (std::size_t j = 0; j < variances.size(); ++j) {
    if (!(variances[j] > 0.0) || !std::isfinite(variances[j])) {
      throw DomainError("reverse_waterfill: variances must be positive and finite");
    }
    if (!(weights[j] > 0.0)) throw DomainError("reverse_waterfill: weights must be positive");
    weight_sum += weights[j];
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw DomainError("reverse_waterfill: weights must sum to 1");
  }

  std::vector<std::size_t> order(variances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return variances[a] < variances[b]; });

  WaterfillResult out;
  const double mean_variance =
      std::inner_product(variances.begin(), variances.end(), weights.begin(), 0.0);
  if (distortion >= mean_variance) {
    out.water_level = variances[order.back()];
    out.distortions = variances;
    out.rate = 0.0;
    return out;
  }
  // sum_j w_j min(theta, s_j) is piecewise linear and increasing in theta;
  // walk the breakpoints until the segment containing the target is found.
  double below = 0.0;         // sum of w_j s_j for components under the water
  double above_weight = 1.0;  // sum of w_j for components at the water level
  double theta = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t j = order[k];
    theta = (distortion - below) / above_weight;
    if (theta <= variances[j]) break;
    below += weights[j] * variances[j];
    above_weight -= weights[j];
  }
  out.water_level = theta;
  out.distortions.resize(variances.size());
  for (std::size_t j = 0; j < variances.size(); ++j) {
    out.distortions[j] = std::min(theta, variances[j]);
    out.rate += weights[j] * gaussian_rd(variances[j], out.distortions[j]);
  }
  return out;
}

WaterfillResult fed_rd_allocation(const std::vector<std::vector<double>>& client_variances,
                                  double distortion) {
  if (client_variances.empty()) throw DomainError("fed_rd: no clients");
  std::vector<double> variances;
  std::vector<double> weights;
  const double n = static_cast<double>(client_variances.size());
  for (const auto& client : client_variances) {
    if (client.empty()) throw DomainError("fed_rd: client with no components");
    for (double v : client) {
      variances.push_back(v);
      weights.push_back(1.0 / (n * static_cast<double>(client.size())));
    }
  }
  // Renormalise away the rounding in sum(weights).
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= total;
  return reverse_waterfill(variances, weights, distortion);
}

double fed_rd(const std::vector<std::vector<double>>& client_variances, double distortion) {
  return fed_rd_allocation(client_variances, distortion).rate;
}

double latent_distortion(const GenerativeMap& map, const Tensor& z, const Tensor& z_hat) {
  if (z.shape() != z_hat.shape()) {
    throw DimensionError("latent_distortion: shapes " + shape_to_string(z.shape()) + " and " +
                         shape_to_string(z_hat.shape()) + " differ");
  }
  return mean_squared_error(map.apply(z), map.apply(z_hat));
}

double empirical_discrete_entropy(const IntTensor& samples) {
  if (samples.shape.size() != 2 || samples.data.empty()) {
    throw DimensionError("empirical_discrete_entropy: expects a non-empty [n x d] tensor");
  }
  const std::size_t n = samples.shape[0];
  const std::size_t d = samples.shape[1];
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    std::map<std::int32_t, std::size_t> histogram;
    for (std::size_t r = 0; r < n; ++r) ++histogram[samples.data[r * d + j]];
    for (const auto& [symbol, count] : histogram) {
      const double p = static_cast<double>(count) / static_cast<double>(n);
      total -= p * std::log2(p);
    }
  }
  return total / static_cast<double>(d);
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::analytic: return "analytic";
    case Provenance::empirical: return "empirical";
    case Provenance::trained: return "trained";
  }
  return "unknown";
}

bool RdCurve::nonincreasing() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].distortion >= points[i - 1].distortion && points[i].rate > points[i - 1].rate) {
      return false;
    }
  }
  return true;
}

bool RdCurve::convex(double tolerance) const {
  for (std::size_t i = 2; i < points.size(); ++i) {
    const auto& a = points[i - 2];
    const auto& b = points[i - 1];
    const auto& c = points[i];
    const double span = c.distortion - a.distortion;
    if (span <= 0.0) continue;
    const double t = (b.distortion - a.distortion) / span;
    const double chord = (1.0 - t) * a.rate + t * c.rate;
    if (b.rate > chord + tolerance) return false;
  }
  return true;
}

std::string RdCurve::to_csv() const {
  std::ostringstream os;
  os << "D,R,provenance\n" << std::setprecision(17);
  for (const auto& p : points) {
    os << p.distortion << ',' << p.rate << ',' << to_string(provenance) << '\n';
  }
  return os.str();
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) {
    throw DomainError("log_grid: need 0 < lo < hi and count >= 2");
  }
  std::vector<double> grid(count);
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) grid[i] = lo * std::exp(step * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

RdCurve fed_rd_curve(const std::vector<std::vector<double>>& client_variances,
                     const std::vector<double>& distortions) {
  RdCurve curve;
  curve.provenance = Provenance::analytic;
  for (double d : distortions) curve.points.push_back({d, fed_rd(client_variances, d)});
  std::sort(curve.points.begin(), curve.points.end(),
            [](const RdSample& a, const RdSample& b) { return a.distortion < b.distortion; });
  return curve;
}

}  // namespace fedntc
