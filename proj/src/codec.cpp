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

#include "fedntc/codec.hpp"

#include <zlib.h>

#include <cmath>

#include "fedntc/binary_io.hpp"
#include "fedntc/error.hpp"

namespace fedntc {

namespace {
constexpr std::uint64_t kTop = std::uint64_t{1} << 24;
constexpr std::uint64_t kWindow = std::uint64_t{1} << 32;

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}
}  // namespace

Tensor add_uniform_noise(const Tensor& y, Rng& rng) {
  Tensor out = y;
  for (auto& v : out.data()) v += rng.uniform() - 0.5;
  return out;
}

IntTensor quantize_round(const Tensor& y) {
  IntTensor q;
  q.shape = y.shape();
  q.data.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = y[i];
    if (!(std::abs(v) < 2147483648.0)) {
      throw DomainError("quantize_round: value " + std::to_string(v) + " outside int32 range");
    }
    // std::round rounds half away from zero.
    q.data[i] = static_cast<std::int32_t>(std::round(v));
  }
  return q;
}

Tensor to_real(const IntTensor& q) {
  std::vector<double> values(q.data.begin(), q.data.end());
  return Tensor(q.shape, std::move(values));
}

// ---------------------------------------------------------------------------

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size, unsigned precision) {
  const std::uint64_t lo = (range_ * start) >> precision;
  const std::uint64_t hi = (range_ * (static_cast<std::uint64_t>(start) + size)) >> precision;
  low_ += lo;
  range_ = hi - lo;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, unsigned bits) {
  encode(value, 1, bits);
}

void RangeEncoder::shift_low() {
  if ((low_ & 0xFFFFFFFFu) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t pending = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(pending + carry));
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  // Settle on the value in [low, low + range) with the most trailing zero
  // bits; the decoder pads with zeros, so those bytes need not be stored.
  for (int k = 32; k >= 0; --k) {
    const std::uint64_t mask = (std::uint64_t{1} << k) - 1;
    const std::uint64_t v = (low_ + mask) & ~mask;
    if (v < low_ + range_) {
      low_ = v;
      break;
    }
  }
  for (int i = 0; i < 5; ++i) shift_low();
  // The first byte only ever absorbs a carry out of the initial window,
  // which cannot happen, so it is always zero.
  std::vector<std::uint8_t> out(out_.begin() + 1, out_.end());
  while (!out.empty() && out.back() == 0) out.pop_back();
  out_.clear();
  return out;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  const std::uint8_t b = pos_ < bytes_.size() ? bytes_[pos_] : 0;
  ++pos_;
  return b;
}

std::size_t RangeDecoder::decode(std::span<const std::uint32_t> cumulative, unsigned precision) {
  if (code_ >= range_) throw DecodeError("range decoder state is inconsistent");
  const std::size_t n = cumulative.size() - 1;
  // Largest j with floor(range * cum[j] / 2^p) <= code.
  std::size_t lo_idx = 0, hi_idx = n;
  while (hi_idx - lo_idx > 1) {
    const std::size_t mid = (lo_idx + hi_idx) / 2;
    if (((range_ * cumulative[mid]) >> precision) <= code_) {
      lo_idx = mid;
    } else {
      hi_idx = mid;
    }
  }
  const std::uint64_t lo = (range_ * cumulative[lo_idx]) >> precision;
  const std::uint64_t hi = (range_ * cumulative[lo_idx + 1]) >> precision;
  if (code_ < lo || code_ >= hi) throw DecodeError("range decoder fell outside every symbol");
  code_ -= lo;
  range_ = hi - lo;
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
  return lo_idx;
}

std::uint32_t RangeDecoder::decode_bits(unsigned bits) {
  if (code_ >= range_) throw DecodeError("range decoder state is inconsistent");
  const std::uint64_t r = range_ >> bits;
  auto value = static_cast<std::uint32_t>(code_ / r);
  // Exact interval boundaries use floor(range * v / 2^bits); fix up the
  // estimate from the truncated division.
  while (value > 0 && ((range_ * value) >> bits) > code_) --value;
  while (value + 1 < (1u << bits) && ((range_ * (value + 1)) >> bits) <= code_) ++value;
  const std::uint64_t lo = (range_ * value) >> bits;
  const std::uint64_t hi = (range_ * (static_cast<std::uint64_t>(value) + 1)) >> bits;
  code_ -= lo;
  range_ = hi - lo;
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
  return value;
}

// ---------------------------------------------------------------------------

namespace {
void check_layout(const IntTensor& symbols, const CdfTable& tables) {
  const std::size_t channels = tables.channels.size();
  if (channels == 0) throw DimensionError("encode: table has no channels");
  if (symbols.shape.size() != 2 || symbols.shape[1] != channels ||
      symbols.data.size() != symbols.shape[0] * symbols.shape[1]) {
    throw DimensionError("encode: symbols " + shape_to_string(symbols.shape) +
                         " do not match a table with " + std::to_string(channels) + " channels");
  }
}
}  // namespace

Bitstream encode(const IntTensor& symbols, const CdfTable& tables) {
  check_layout(symbols, tables);
  tables.validate();
  const std::size_t channels = tables.channels.size();
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.data.size(); ++i) {
    const auto& t = tables.channels[i % channels];
    const std::int32_t s = symbols.data[i];
    if (s >= t.min_symbol && s <= t.max_symbol) {
      const auto j = static_cast<std::size_t>(s - t.min_symbol);
      enc.encode(t.cumulative[j], t.count(j), tables.precision);
      continue;
    }
    if (t.escape_count() == 0) {
      throw TableError("symbol " + std::to_string(s) + " outside support of channel " +
                       std::to_string(i % channels) + " and the table has no escape slot");
    }
    const std::size_t esc = t.escape_index();
    enc.encode(t.cumulative[esc], t.count(esc), tables.precision);
    const auto raw = static_cast<std::uint32_t>(s);
    enc.encode_bits(raw >> 16, 16);
    enc.encode_bits(raw & 0xFFFFu, 16);
  }
  Bitstream stream;
  stream.bytes = enc.finish();
  stream.symbol_count = symbols.data.size();
  stream.channels = static_cast<std::uint32_t>(channels);
  stream.checksum = crc_of(stream.bytes);
  return stream;
}

IntTensor decode(const Bitstream& stream, const CdfTable& tables) {
  tables.validate();
  const std::size_t channels = tables.channels.size();
  if (stream.channels != channels) {
    throw DecodeError("bitstream has " + std::to_string(stream.channels) +
                      " channels, table has " + std::to_string(channels));
  }
  if (stream.symbol_count % channels != 0) {
    throw DecodeError("symbol count is not a multiple of the channel count");
  }
  if (crc_of(stream.bytes) != stream.checksum) {
    throw DecodeError("bitstream checksum mismatch (corrupt or truncated payload)");
  }
  IntTensor out;
  out.shape = {static_cast<std::size_t>(stream.symbol_count / channels), channels};
  out.data.resize(static_cast<std::size_t>(stream.symbol_count));
  RangeDecoder dec(stream.bytes);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto& t = tables.channels[i % channels];
    const std::size_t j = dec.decode(t.cumulative, tables.precision);
    if (j < t.support_size()) {
      out.data[i] = t.min_symbol + static_cast<std::int32_t>(j);
      continue;
    }
    const std::uint32_t high = dec.decode_bits(16);
    const std::uint32_t low = dec.decode_bits(16);
    const auto s = static_cast<std::int32_t>((high << 16) | low);
    if (s >= t.min_symbol && s <= t.max_symbol) {
      throw DecodeError("escaped symbol lies inside the support");
    }
    out.data[i] = s;
  }
  return out;
}

std::vector<std::uint8_t> serialize(const Bitstream& stream) {
  ByteWriter w;
  w.bytes("FNBS");
  w.u16(kBitstreamVersion);
  w.u64(stream.symbol_count);
  w.u32(stream.channels);
  w.u64(stream.bytes.size());
  w.u32(stream.checksum);
  w.bytes(stream.bytes);
  return w.take();
}

Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "bitstream");
  r.expect_magic("FNBS");
  const auto version = r.u16();
  if (version != kBitstreamVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  Bitstream s;
  s.symbol_count = r.u64();
  s.channels = r.u32();
  const auto length = r.u64();
  s.checksum = r.u32();
  if (length != r.remaining()) {
    r.fail("payload length " + std::to_string(length) + " but " + std::to_string(r.remaining()) +
           " bytes follow");
  }
  auto payload = r.bytes(static_cast<std::size_t>(length));
  s.bytes.assign(payload.begin(), payload.end());
  if (crc_of(s.bytes) != s.checksum) {
    throw DecodeError("bitstream checksum mismatch (corrupt or truncated payload)");
  }
  return s;
}

RateMeasurement measure_rate(const Tensor& x, const TransformParams& analysis,
                             const TransformParams& synthesis, const CdfTable& tables) {
  return measure_rate(x, analysis, synthesis, tables, {});
}

RateMeasurement measure_rate(const Tensor& x, const TransformParams& analysis,
                             const TransformParams& synthesis, const CdfTable& tables,
                             std::span<const double> offsets) {
  if (x.rows() == 0) throw DimensionError("measure_rate: empty batch");
  Tensor y = forward(analysis, x);
  const std::size_t channels = y.cols();
  if (!offsets.empty() && offsets.size() != channels) {
    throw DimensionError("measure_rate: offset count does not match the latent width");
  }
  if (!offsets.empty()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= offsets[i % channels];
  }
  RateMeasurement m;
  m.latents = quantize_round(y);
  const Bitstream stream = encode(m.latents, tables);
  const IntTensor decoded = decode(stream, tables);
  if (decoded != m.latents) throw DecodeError("decoded latents differ from encoded latents");
  Tensor y_hat = to_real(decoded);
  if (!offsets.empty()) {
    for (std::size_t i = 0; i < y_hat.size(); ++i) y_hat[i] += offsets[i % channels];
  }
  const Tensor reconstruction = forward(synthesis, y_hat);
  m.bits_total = static_cast<double>(stream.bits());
  m.bits_per_sample = m.bits_total / static_cast<double>(x.rows());
  m.distortion = mean_squared_error(x, reconstruction);
  return m;
}

}  // namespace fedntc
