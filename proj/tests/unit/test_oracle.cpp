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
#include <cmath>
#include <limits>

#include "fedntc/codec.hpp"
#include "fedntc/error.hpp"
#include "fedntc/oracle.hpp"

using namespace fedntc;

namespace {

double r_of(double var, double d) { return d >= var ? 0.0 : 0.5 * std::log2(var / d); }

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double gaussian_bin_entropy() {
  double h = 0.0;
  for (int k = -40; k <= 40; ++k) {
    const double p = phi(k + 0.5) - phi(k - 0.5);
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("scalar Gaussian rate-distortion") {
  CHECK(gaussian_rd(1.0, 1.0) == 0.0);
  CHECK(gaussian_rd(1.0, 0.25) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(gaussian_rd(1.0, 2.0) == 0.0);
  CHECK_THROWS_AS(gaussian_rd(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(gaussian_rd(-1.0, 0.5), DomainError);
}

TEST_CASE("water-filling symmetry and the zero-rate regime") {
  const auto w = reverse_waterfill({2.0, 2.0, 2.0}, 0.7);
  for (double d : w.distortions) CHECK(d == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(reverse_waterfill({1.0, 4.0, 2.0}, 4.0).rate == 0.0);
  CHECK(reverse_waterfill({1.0, 4.0, 2.0}, 7.0 / 3.0).rate <= 1e-12);
  CHECK_THROWS_AS(reverse_waterfill({1.0}, 0.0), DomainError);
  CHECK_THROWS_AS(reverse_waterfill({1.0, 0.0}, 0.5), DomainError);
}

TEST_CASE("water-filling matches a brute-force grid: variances {1, 4}, D = 0.5") {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 1; i < 10000; ++i) {
    const double d1 = i * 1e-4, d2 = 1.0 - d1;
    best = std::min(best, 0.5 * (r_of(1.0, d1) + r_of(4.0, d2)));
  }
  const auto w = reverse_waterfill({1.0, 4.0}, 0.5);
  CHECK(std::abs(w.rate - best) <= 1e-3);
  CHECK(w.water_level == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("weighted water-filling") {
  const auto w = reverse_waterfill({1.0, 4.0}, {0.25, 0.75}, 0.5);
  double mean_d = 0.25 * w.distortions[0] + 0.75 * w.distortions[1];
  CHECK(mean_d == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.rate == doctest::Approx(0.25 * r_of(1.0, w.distortions[0]) +
                                  0.75 * r_of(4.0, w.distortions[1]))
                      .epsilon(1e-12));
  CHECK_THROWS_AS(reverse_waterfill({1.0, 4.0}, {0.5, 0.6}, 0.5), DomainError);
}

TEST_CASE("federated bound collapses to single-client water-filling") {
  const std::vector<double> v{0.5, 3.0, 9.0, 1.0};
  for (double d : {0.1, 0.5, 1.0, 2.0}) {
    const double single = reverse_waterfill(v, d).rate;
    CHECK(std::abs(fed_rd({v}, d) - single) <= 1e-9);
    CHECK(std::abs(fed_rd({v, v, v}, d) - single) <= 1e-9);
  }
}

TEST_CASE("federated bound matches a nested brute force: {1,1} and {4,4}, D = 0.5") {
  // Client-averaged distortion (D1 + D2) / 2 = 0.5; equal-variance clients
  // water-fill at their own D_i.
  double best = std::numeric_limits<double>::infinity();
  for (int i = 1; i < 10000; ++i) {
    const double d1 = i * 1e-4, d2 = 1.0 - d1;
    best = std::min(best, 0.5 * (r_of(1.0, d1) + r_of(4.0, d2)));
  }
  CHECK(std::abs(fed_rd({{1.0, 1.0}, {4.0, 4.0}}, 0.5) - best) <= 1e-3);
  CHECK(fed_rd({{1.0, 1.0}, {4.0, 4.0}}, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("federated bound with unequal client dimensions") {
  // Weight 1/(n d_i) per component.
  const auto a = fed_rd_allocation({{1.0}, {4.0, 4.0, 4.0}}, 1.0);
  const double d0 = a.distortions[0];
  const double d1 = a.distortions[1];
  CHECK(0.5 * d0 + 0.5 * d1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.rate == doctest::Approx(0.5 * r_of(1.0, d0) + 0.5 * r_of(4.0, d1)).epsilon(1e-12));
}

TEST_CASE("latent distortion") {
  Rng rng(3);
  Tensor z({10, 4}), zh({10, 4});
  for (auto& v : z.data()) v = rng.normal();
  for (auto& v : zh.data()) v = rng.normal();
  const auto ortho = GenerativeMap::orthogonal(4, 4, 1);
  CHECK(latent_distortion(ortho, z, zh) == doctest::Approx(mean_squared_error(z, zh)).epsilon(1e-12));
  CHECK(latent_distortion(ortho, z, z) == 0.0);
  const auto mlp = GenerativeMap::mlp(4, 6, {5}, 2);
  CHECK(latent_distortion(mlp, z, zh) ==
        doctest::Approx(mean_squared_error(mlp.apply(z), mlp.apply(zh))).epsilon(1e-12));
}

TEST_CASE("empirical discrete entropy") {
  const IntTensor constant{{1000, 2}, std::vector<std::int32_t>(2000, 7)};
  CHECK(empirical_discrete_entropy(constant) == 0.0);

  Rng rng(5);
  IntTensor coin{{100000, 1}, {}};
  for (int i = 0; i < 100000; ++i) coin.data.push_back(rng.uniform() < 0.5 ? -1 : 1);
  CHECK(std::abs(empirical_discrete_entropy(coin) - 1.0) <= 0.01);

  Tensor g({100000, 1});
  for (auto& v : g.data()) v = rng.normal();
  const double h = gaussian_bin_entropy();
  CHECK(h == doctest::Approx(2.10).epsilon(0.01));
  CHECK(std::abs(empirical_discrete_entropy(quantize_round(g)) - h) <= 0.05);
}

TEST_CASE("analytic curve is nonincreasing and convex") {
  const std::vector<std::vector<double>> v{{256, 256, 1, 1}, {1, 1, 256, 256}};
  const RdCurve c = fed_rd_curve(v, log_grid(1e-3, 200.0, 60));
  CHECK(c.points.size() == 60);
  CHECK(c.nonincreasing());
  CHECK(c.convex());
  CHECK(c.points.front().distortion == doctest::Approx(1e-3));
  CHECK(c.points.back().distortion == doctest::Approx(200.0));
  const std::string csv = c.to_csv();
  CHECK(csv.rfind("D,R,provenance\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 61);
  CHECK_THROWS_AS(log_grid(0.0, 1.0, 5), DomainError);
}

}  // TEST_SUITE
