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

// Central-difference checks of every analytic gradient in the library:
// dense layers (both activations, parameters and inputs), a two-layer
// transform, the factorized rate loss (model and input) and the full
// rate + lambda * distortion objective.
//
// Test points are redrawn until every leaky-ReLU pre-activation is at least
// `kink_margin` away from zero, since a difference quotient straddling the
// kink measures neither one-sided slope.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedntc/nn.hpp"

namespace fedntc {

struct GradSuiteOptions {
  std::size_t seeds = 10;
  std::uint64_t base_seed = 2024;
  double tolerance = 1e-4;
  double step = 1e-3;
  double floor = 1e-6;
  double kink_margin = 0.05;
};

struct GradSuiteCase {
  std::string name;
  std::size_t seed = 0;
  GradCheckReport report;
};

struct GradSuiteReport {
  std::vector<GradSuiteCase> cases;

  bool passed() const;
  double worst_relative_error() const;
  const GradSuiteCase* worst() const;
};

std::vector<std::string> gradient_suite_case_names();
GradSuiteReport run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace fedntc
