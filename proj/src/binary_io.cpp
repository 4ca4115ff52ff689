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

#include "fedntc/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "fedntc/error.hpp"

namespace fedntc {

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (n > remaining()) {
    fail("needs " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint64_t ByteReader::get(int n) {
  if (static_cast<std::size_t>(n) > remaining()) {
    fail("truncated: needs " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
         " left");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::size_t at = pos_;
  auto got = bytes(magic.size());
  if (!std::equal(got.begin(), got.end(), magic.begin())) {
    pos_ = at;
    fail("bad magic, expected \"" + std::string(magic) + "\"");
  }
}

void ByteReader::fail(const std::string& message) const {
  throw FormatError(what_ + " at byte offset " + std::to_string(pos_) + ": " + message);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("error writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

}  // namespace fedntc
