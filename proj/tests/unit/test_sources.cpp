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
#include <filesystem>
#include <set>

#include "fedntc/binary_io.hpp"
#include "fedntc/error.hpp"
#include "fedntc/sources.hpp"

using namespace fedntc;

namespace {

SourceSpec two_client_spec(std::uint64_t map_seed) {
  SourceSpec s;
  s.latent_dim = 6;
  s.ambient_dim = 6;
  s.sigmas = {{3.0, 0.5, 1.0, 2.0, 0.25, 1.5}, {1.0, 1.0, 4.0, 0.5, 0.5, 1.0}};
  s.map = GenerativeMap::orthogonal(6, 6, map_seed);
  return s;
}

std::vector<int> balanced_labels(std::size_t n, int classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  return labels;
}

std::vector<std::uint8_t> cifar_bytes(const std::vector<std::pair<int, std::uint8_t>>& records) {
  std::vector<std::uint8_t> out;
  for (auto [label, fill] : records) {
    out.push_back(static_cast<std::uint8_t>(label));
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
      out.push_back(static_cast<std::uint8_t>((fill + j) % 256));
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("sources") {

TEST_CASE("orthogonal map: inverse latents have the client covariance") {
  const SourceSpec spec = two_client_spec(7);
  const std::size_t m = 20000;
  const auto shards = gen_synthetic(spec, m, 3);
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor z = spec.map.invert(shards[i].data.samples);
    for (std::size_t a = 0; a < 6; ++a) {
      for (std::size_t b = a; b < 6; ++b) {
        double cov = 0.0;
        for (std::size_t r = 0; r < m; ++r) cov += z(r, a) * z(r, b);
        cov /= static_cast<double>(m);
        const double scale = spec.sigmas[i][a] * spec.sigmas[i][b];
        const double expected = a == b ? scale : 0.0;
        CHECK(std::abs(cov - expected) <= 5.0 / std::sqrt(static_cast<double>(m)) * scale);
      }
    }
  }
}

TEST_CASE("orthogonal map preserves norms and has orthonormal columns") {
  const GenerativeMap f = GenerativeMap::orthogonal(4, 9, 5);
  const Tensor& q = f.basis();
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 9; ++r) dot += q(r, a) * q(r, b);
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
    }
  }
  Rng rng(1);
  Tensor z({20, 4});
  for (auto& v : z.data()) v = rng.normal();
  const Tensor x = f.apply(z);
  for (std::size_t r = 0; r < 20; ++r) {
    double nz = 0.0, nx = 0.0;
    for (double v : z.row(r)) nz += v * v;
    for (double v : x.row(r)) nx += v * v;
    CHECK(std::sqrt(nx) == doctest::Approx(std::sqrt(nz)).epsilon(1e-12));
  }
  const Tensor back = f.invert(x);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(back[i] == doctest::Approx(z[i]).epsilon(1e-12));
}

TEST_CASE("fixed MLP map is deterministic and has no inverse") {
  const auto a = GenerativeMap::mlp(3, 5, {8}, 4);
  const auto b = GenerativeMap::mlp(3, 5, {8}, 4);
  Tensor z({2, 3}, 0.7);
  CHECK(a.apply(z) == b.apply(z));
  CHECK(a.apply(z).cols() == 5);
  CHECK_THROWS(a.invert(a.apply(z)));
}

TEST_CASE("identical sigmas and seed give identical shards") {
  SourceSpec spec = two_client_spec(1);
  spec.sigmas[1] = spec.sigmas[0];
  const auto a = gen_client(spec, 0, 50, 42);
  const auto b = gen_client(spec, 1, 50, 42);
  CHECK(a.data == b.data);
  CHECK(a.latents == b.latents);
}

TEST_CASE("variance profiles: disjoint blocks and the homogeneous limit") {
  const auto disjoint = block_variance_profiles(4, 16, 4, 16.0, 1.0, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      const bool active = j / 4 == i;
      CHECK(disjoint[i][j] == (active ? 16.0 : 1.0));
    }
  }
  const auto same = block_variance_profiles(4, 16, 4, 16.0, 1.0, 0.0);
  for (std::size_t i = 1; i < 4; ++i) CHECK(same[i] == same[0]);
  CHECK_THROWS_AS(block_variance_profiles(2, 16, 4, 16.0, 1.0, 1.5), ConfigError);
  CHECK_THROWS_AS(block_variance_profiles(2, 16, 17, 16.0, 1.0, 1.0), ConfigError);
}

TEST_CASE("spec validation") {
  SourceSpec spec = two_client_spec(1);
  CHECK_NOTHROW(spec.validate());
  spec.sigmas[1].pop_back();
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = two_client_spec(1);
  spec.sigmas[0][0] = -1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("partition: n=100, S=2 on a balanced 10-class set") {
  const auto labels = balanced_labels(10000, 10);
  const auto plan = partition_non_iid(labels, 100, 2, 0);
  REQUIRE(plan.assignments.size() == 100);
  CHECK(plan.samples_per_client == 100);
  CHECK(plan.shards_per_client == 2);
  std::vector<int> seen(labels.size(), 0);
  for (const auto& a : plan.assignments) {
    CHECK(a.size() == 100);
    std::set<int> classes;
    for (auto i : a) {
      ++seen[i];
      classes.insert(labels[i]);
    }
    CHECK(classes.size() <= 4);
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("partition: S = #classes with round-robin dealing is homogeneous") {
  const auto labels = balanced_labels(2000, 10);
  const auto plan = partition_non_iid(labels, 20, 10, 3, ShardDealing::round_robin);
  for (const auto& a : plan.assignments) {
    std::set<int> classes;
    for (auto i : a) classes.insert(labels[i]);
    CHECK(classes.size() == 10);
  }
}

TEST_CASE("partition: divisibility and trimming") {
  const auto labels = balanced_labels(1003, 10);
  CHECK_THROWS_AS(partition_non_iid(labels, 10, 2, 0), PartitionError);
  const auto plan = partition_non_iid(labels, 10, 2, 0, ShardDealing::random, true);
  CHECK(plan.dropped == 3);
  std::size_t total = 0;
  for (const auto& a : plan.assignments) total += a.size();
  CHECK(total == 1000);
  CHECK_THROWS_AS(partition_non_iid(labels, 0, 2, 0), PartitionError);
}

TEST_CASE("partition is seed-deterministic") {
  const auto labels = balanced_labels(1000, 10);
  CHECK(partition_non_iid(labels, 10, 2, 5).assignments ==
        partition_non_iid(labels, 10, 2, 5).assignments);
  CHECK(partition_non_iid(labels, 10, 2, 5).assignments !=
        partition_non_iid(labels, 10, 2, 6).assignments);
}

TEST_CASE("cifar10-binary parsing") {
  const auto bytes = cifar_bytes({{3, 0}, {9, 17}});
  const Dataset d = parse_cifar10(bytes);
  CHECK(d.size() == 2);
  CHECK(d.dim() == 3072);
  CHECK(d.labels == std::vector<int>{3, 9});
  CHECK(d.samples(0, 255) == 1.0);
  CHECK(d.samples(1, 0) == 17.0 / 255.0);

  std::vector<std::uint8_t> zero(1 + kCifarImageBytes, 0);
  const Dataset z = parse_cifar10(zero);
  for (double v : z.samples.data()) CHECK(v == 0.0);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_cifar10(truncated), FormatError);
  auto bad_label = bytes;
  bad_label[0] = 12;
  CHECK_THROWS_AS(parse_cifar10(bad_label), FormatError);
}

TEST_CASE("raw-f64 round trip and file loading") {
  Dataset d;
  d.samples = Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 3.25, 0.0, -7.5});
  d.labels = {1, 0};
  const auto bytes = serialize_raw_f64(d);
  const Dataset back = parse_raw_f64(bytes);
  CHECK(back.samples == d.samples);
  CHECK(back.labels == d.labels);

  const auto dir = std::filesystem::temp_directory_path() / "fedntc_sources_test";
  std::filesystem::create_directories(dir);
  write_file(dir / "d.bin", bytes);
  CHECK(load_image_dataset(dir / "d.bin", DatasetFormat::raw_f64).samples == d.samples);
  CHECK_THROWS_AS(load_image_dataset(dir / "missing.bin", DatasetFormat::raw_f64), IoError);
  std::filesystem::remove_all(dir);

  auto broken = bytes;
  broken.resize(broken.size() - 4);
  CHECK_THROWS_AS(parse_raw_f64(broken), FormatError);
}

TEST_CASE("patch extraction") {
  const Dataset images = parse_cifar10(cifar_bytes({{1, 0}, {2, 5}}));
  const Dataset patches = extract_patches(images, 32, 3, 8);
  CHECK(patches.size() == 2 * 16);
  CHECK(patches.dim() == 8 * 8 * 3);
  CHECK(patches.labels.front() == 1);
  CHECK(patches.labels.back() == 2);
  // First patch, channel 0, pixel (0, 1) is image byte 1.
  CHECK(patches.samples(0, 1) == images.samples(0, 1));
  CHECK_THROWS(extract_patches(images, 32, 3, 5));
}

TEST_CASE("subset gathers rows and labels") {
  Dataset d;
  d.samples = Tensor::matrix(3, 1, {10, 20, 30});
  d.labels = {0, 1, 2};
  const std::vector<std::size_t> idx{2, 0};
  const Dataset s = subset(d, idx);
  CHECK(s.samples == Tensor::matrix(2, 1, {30, 10}));
  CHECK(s.labels == std::vector<int>{2, 0});
}

}  // TEST_SUITE
