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

// Analytic rate-distortion ground truth for Gaussian sources.
//
// Rates are in bits per source dimension, distortions are per-dimension
// squared error.

#pragma once

#include <string>
#include <vector>

#include "fedntc/sources.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

// max(0, 1/2 log2(variance / D)). Throws DomainError unless both are > 0.
double gaussian_rd(double variance, double distortion);

struct WaterfillResult {
  double water_level = 0.0;          // theta
  std::vector<double> distortions;   // D_j = min(theta, sigma_j^2)
  double rate = 0.0;                 // weighted mean of per-component rates
};

// Reverse water-filling over independent Gaussian components with equal
// weight 1/d: mean D_j == distortion. Targets at or above the mean variance
// give rate 0. Throws DomainError for distortion <= 0 or bad variances.
WaterfillResult reverse_waterfill(const std::vector<double>& variances, double distortion);

// Weighted variant: sum_j w_j D_j == distortion, rate = sum_j w_j R_j.
// Weights must be positive and sum to 1.
WaterfillResult reverse_waterfill(const std::vector<double>& variances,
                                  const std::vector<double>& weights, double distortion);

// Minimum client-averaged rate (each client's rate in bits per dimension) at
// client-averaged distortion D, by joint water-filling over every client's
// components with weight 1 / (n * d_i).
WaterfillResult fed_rd_allocation(const std::vector<std::vector<double>>& client_variances,
                                  double distortion);
double fed_rd(const std::vector<std::vector<double>>& client_variances, double distortion);

// d_z(z, zhat) = MSE(f(z), f(zhat)).
double latent_distortion(const GenerativeMap& map, const Tensor& z, const Tensor& z_hat);

// Plug-in entropy of each column's histogram, averaged over columns.
double empirical_discrete_entropy(const IntTensor& samples);

enum class Provenance { analytic, empirical, trained };
std::string to_string(Provenance p);

struct RdSample {
  double distortion = 0.0;
  double rate = 0.0;
};

struct RdCurve {
  std::vector<RdSample> points;
  Provenance provenance = Provenance::analytic;

  bool nonincreasing() const;
  // Convexity on consecutive triples; points must be sorted by distortion.
  bool convex(double tolerance = 1e-12) const;
  // "D,R,provenance" header plus one row per point.
  std::string to_csv() const;
};

// Log-spaced distortion grid in [lo, hi].
std::vector<double> log_grid(double lo, double hi, std::size_t count);

RdCurve fed_rd_curve(const std::vector<std::vector<double>>& client_variances,
                     const std::vector<double>& distortions);

}  // namespace fedntc
