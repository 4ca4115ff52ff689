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

#include <cmath>

#include "fedntc/codec.hpp"
#include "fedntc/error.hpp"

using namespace fedntc;

namespace {

// 256 symbols at 256/65536 each except one at 255, escape slot 1.
CdfTable uniform_256() {
  CdfTable t;
  t.precision = 16;
  std::vector<std::uint32_t> counts(256, 256);
  counts.back() = 255;
  t.channels.push_back(channel_table_from_counts(0, counts, 1));
  return t;
}

CdfTable random_tables(std::size_t channels, Rng& rng) {
  CdfTable t;
  t.precision = 16;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t support = 2 + rng.index(30);
    std::vector<double> pmf(support + 1);
    for (auto& p : pmf) p = 0.01 + rng.uniform();
    const auto counts = quantize_pmf(pmf, 16);
    const std::int32_t lo = static_cast<std::int32_t>(rng.index(20)) - 10;
    t.channels.push_back(channel_table_from_counts(
        lo, {counts.begin(), counts.end() - 1}, counts.back()));
  }
  return t;
}

IntTensor random_symbols(std::size_t rows, const CdfTable& t, Rng& rng, double escape_rate) {
  IntTensor s{{rows, t.channels.size()}, {}};
  for (std::size_t r = 0; r < rows; ++r) {
    for (const auto& ch : t.channels) {
      if (rng.uniform() < escape_rate) {
        s.data.push_back(static_cast<std::int32_t>(rng.next_u64()));
      } else {
        s.data.push_back(ch.min_symbol + static_cast<std::int32_t>(rng.index(ch.support_size())));
      }
    }
  }
  return s;
}

TransformParams identity(std::size_t d) {
  TransformParams p;
  Tensor w({d, d});
  for (std::size_t i = 0; i < d; ++i) w(i, i) = 1.0;
  p.layers.push_back({w, Tensor({d}), Activation::none});
  return p;
}

}  // namespace

TEST_SUITE("codec") {

TEST_CASE("uniform noise stays within half a bin and is seed-deterministic") {
  Rng a(3), b(3);
  Tensor y({100, 4});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.37 * static_cast<double>(i);
  const Tensor ya = add_uniform_noise(y, a);
  const Tensor yb = add_uniform_noise(y, b);
  CHECK(ya == yb);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(ya[i] - y[i]) <= 0.5);
}

TEST_CASE("uniform noise mean concentrates") {
  Rng rng(11);
  const Tensor y({1000000});
  const Tensor yt = add_uniform_noise(y, rng);
  double mean = 0.0;
  for (double v : yt.data()) mean += v;
  mean /= 1e6;
  CHECK(std::abs(mean) <= 3.0 * (1.0 / std::sqrt(12.0)) / 1e3);
}

TEST_CASE("rounding with ties away from zero") {
  const auto q = quantize_round(Tensor::vector({0.4, -1.6, 0.5, -0.5, 2.0, -3.0, 2.5}));
  CHECK(q.data == std::vector<std::int32_t>{0, -2, 1, -1, 2, -3, 3});
  CHECK(quantize_round(to_real(q)) == q);
}

TEST_CASE("round trip with escapes across seeds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const CdfTable t = random_tables(3, rng);
    const IntTensor s = random_symbols(5000, t, rng, 0.01);
    const Bitstream b = encode(s, t);
    CHECK(decode(b, t) == s);
  }
}

TEST_CASE("uniform 256-symbol source codes at 8 bits per symbol") {
  const CdfTable t = uniform_256();
  Rng rng(1);
  IntTensor s{{10000, 1}, {}};
  for (int i = 0; i < 10000; ++i) s.data.push_back(static_cast<std::int32_t>(rng.index(256)));
  const Bitstream b = encode(s, t);
  CHECK(std::abs(static_cast<double>(b.bits()) - 8e4) <= 64.0);
  CHECK(decode(b, t) == s);
}

TEST_CASE("zero-entropy source costs only the coder overhead") {
  CdfTable t;
  t.precision = 16;
  t.channels.push_back(channel_table_from_counts(5, {65535}, 1));
  const IntTensor s{{10000, 1}, std::vector<std::int32_t>(10000, 5)};
  const Bitstream b = encode(s, t);
  CHECK(b.bits() <= 64u);
  CHECK(decode(b, t) == s);
}

TEST_CASE("shape and table mismatches are rejected") {
  Rng rng(2);
  const CdfTable t = random_tables(2, rng);
  const IntTensor wrong{{4, 3}, std::vector<std::int32_t>(12, 0)};
  CHECK_THROWS_AS(encode(wrong, t), DimensionError);
  const IntTensor s = random_symbols(10, t, rng, 0.0);
  const Bitstream b = encode(s, t);
  const CdfTable other = random_tables(3, rng);
  CHECK_THROWS_AS(decode(b, other), DecodeError);
}

TEST_CASE("bitstream container round trip and corruption") {
  Rng rng(4);
  const CdfTable t = random_tables(2, rng);
  const IntTensor s = random_symbols(300, t, rng, 0.02);
  const Bitstream b = encode(s, t);
  const auto bytes = serialize(b);
  CHECK(parse_bitstream(bytes) == b);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_bitstream(truncated), FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_bitstream(bad_magic), FormatError);

  auto flipped = bytes;
  flipped.back() ^= 0x40;
  CHECK_THROWS_AS(parse_bitstream(flipped), DecodeError);
}

TEST_CASE("measure_rate: identity transforms on zero input") {
  Rng rng(5);
  FactorizedEntropyModel m(3, EntropyModelConfig{}, rng);
  const CdfTable t = build_cdf_table(m);
  const auto r = measure_rate(Tensor({8, 3}), identity(3), identity(3), t);
  for (auto v : r.latents.data) CHECK(v == 0);
  CHECK(r.distortion == 0.0);
}

TEST_CASE("measured rate is bounded by the model cross-entropy") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    FactorizedEntropyModel m(4, EntropyModelConfig{}, rng);
    for (auto& p : m.parameters()) {
      for (auto& v : p.tensor->data()) v += 0.3 * rng.normal();
    }
    const std::size_t batch = 500;
    Tensor x({batch, 4});
    for (auto& v : x.data()) v = rng.normal();
    const CdfTable t = build_cdf_table(m);
    const auto r = measure_rate(x, identity(4), identity(4), t);
    const double cross_entropy = rate_loss(m, to_real(r.latents));
    CHECK(r.bits_per_sample <= cross_entropy * 1.01 + 64.0 / batch);
    CHECK(r.bits_per_sample == doctest::Approx(r.bits_total / batch));
    const auto q = quantize_round(x);
    CHECK(r.latents == q);
  }
}

TEST_CASE("measure_rate with offsets shifts the quantisation grid") {
  Rng rng(6);
  FactorizedEntropyModel m(2, EntropyModelConfig{}, rng);
  const std::vector<double> offsets{0.3, -0.2};
  const CdfTable t = build_cdf_table(m, 16, kDefaultTailMass, offsets);
  Tensor x({50, 2});
  for (auto& v : x.data()) v = 2.0 * rng.normal();
  const auto r = measure_rate(x, identity(2), identity(2), t, offsets);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      const double q = std::round(x(i, c) - offsets[c]);
      CHECK(r.latents.data[i * 2 + c] == static_cast<std::int32_t>(q));
      const double e = x(i, c) - (q + offsets[c]);
      mse += e * e;
    }
  }
  CHECK(r.distortion == doctest::Approx(mse / 100.0).epsilon(1e-12));
}

}  // TEST_SUITE
