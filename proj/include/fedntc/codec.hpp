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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedntc/entropy.hpp"
#include "fedntc/nn.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

// y + u with u ~ Uniform(-1/2, 1/2), i.i.d. per entry.
Tensor add_uniform_noise(const Tensor& y, Rng& rng);

// Nearest integer, ties away from zero.
IntTensor quantize_round(const Tensor& y);
Tensor to_real(const IntTensor& q);

// 32-bit range coder with carry propagation. Each symbol narrows the
// interval by floor(range * cum / 2^precision) boundaries so the symbol
// sub-intervals partition the current range exactly.
class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t size, unsigned precision);
  // Raw bits, up to 16 at a time, coded at exactly one bit per bit.
  void encode_bits(std::uint32_t value, unsigned bits);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint64_t range_ = std::uint64_t{1} << 32;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  // Returns the index j with cumulative[j] <= target < cumulative[j + 1].
  std::size_t decode(std::span<const std::uint32_t> cumulative, unsigned precision);
  std::uint32_t decode_bits(unsigned bits);

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint64_t code_ = 0;
  std::uint64_t range_ = std::uint64_t{1} << 32;
};

struct Bitstream {
  std::vector<std::uint8_t> bytes;  // range-coder payload
  std::uint64_t symbol_count = 0;
  std::uint32_t channels = 0;       // symbols are [symbol_count / channels x channels]
  std::uint32_t checksum = 0;       // CRC-32 of the payload

  std::uint64_t bits() const { return 8 * static_cast<std::uint64_t>(bytes.size()); }
  bool operator==(const Bitstream&) const = default;
};

// symbols must be rank-2 [n x channels] with channels == tables.channels.size().
// Symbols outside a channel's support go through the escape slot followed by
// 32 raw bits (two's complement).
Bitstream encode(const IntTensor& symbols, const CdfTable& tables);
IntTensor decode(const Bitstream& stream, const CdfTable& tables);

// Container: "FNBS", u16 version, u64 symbol_count, u32 channels,
// u64 payload length, u32 crc32, payload. Little-endian fields.
inline constexpr std::uint16_t kBitstreamVersion = 1;
std::vector<std::uint8_t> serialize(const Bitstream& stream);
Bitstream parse_bitstream(std::span<const std::uint8_t> bytes);

struct RateMeasurement {
  double bits_total = 0.0;
  double bits_per_sample = 0.0;
  double distortion = 0.0;  // MSE between x and g_s(decoded latents)
  IntTensor latents;
};

// Hard quantisation, real entropy coding and decoding. Throws DecodeError if
// the decoded latents differ from the encoder-side ones.
RateMeasurement measure_rate(const Tensor& x, const TransformParams& analysis,
                             const TransformParams& synthesis, const CdfTable& tables);

// Quantisation around per-channel offsets: symbols are round(y - offset) and
// the synthesis transform sees symbols + offset. `tables` must be built with
// the same offsets.
RateMeasurement measure_rate(const Tensor& x, const TransformParams& analysis,
                             const TransformParams& synthesis, const CdfTable& tables,
                             std::span<const double> offsets);

}  // namespace fedntc
