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

#include "fedntc/checkpoint.hpp"

#include <algorithm>
#include <limits>

#include "fedntc/binary_io.hpp"
#include "fedntc/error.hpp"

namespace fedntc {
namespace {

constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

std::size_t count_prefix(const Checkpoint& checkpoint, const std::string& prefix) {
  return static_cast<std::size_t>(
      std::count_if(checkpoint.records.begin(), checkpoint.records.end(),
                    [&](const NamedTensor& r) { return r.name.starts_with(prefix); }));
}

// Copies named tensors into the given slots after checking every one.
void restore_refs(const Checkpoint& checkpoint, const std::string& prefix,
                  const std::vector<ParamRef>& refs) {
  std::vector<const Tensor*> sources;
  for (const auto& ref : refs) {
    const std::string name = prefix + ref.name;
    const Tensor* t = checkpoint.find(name);
    if (t == nullptr) throw FormatError("checkpoint: missing parameter " + name);
    if (t->shape() != ref.tensor->shape()) {
      throw FormatError("checkpoint: parameter " + name + " has shape " +
                        shape_to_string(t->shape()) + ", expected " +
                        shape_to_string(ref.tensor->shape()));
    }
    sources.push_back(t);
  }
  const std::size_t present = count_prefix(checkpoint, prefix);
  if (present != refs.size()) {
    throw FormatError("checkpoint: " + std::to_string(present) + " parameters under " + prefix +
                      ", expected " + std::to_string(refs.size()));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].tensor = *sources[i];
}

std::string client_prefix(const ClientState& client) {
  return "client/" + std::to_string(client.id) + "/";
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& tensor) {
  if (find(name) != nullptr) throw FormatError("checkpoint: duplicate parameter " + name);
  records.push_back({name, tensor});
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r.tensor;
  }
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  return count_prefix(*this, prefix) > 0;
}

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint) {
  ByteWriter w;
  w.bytes("FNTC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& r : checkpoint.records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.tensor.rank()));
    for (std::size_t d : r.tensor.shape()) w.u64(d);
    for (double v : r.tensor.data()) w.f64(v);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("FNTC");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  Checkpoint out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_length = r.u32();
    if (name_length == 0 || name_length > kMaxNameLength) r.fail("bad name length");
    const auto name_bytes = r.bytes(name_length);
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > kMaxRank) r.fail("bad rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      const std::uint64_t dim = r.u64();
      if (dim == 0) r.fail("zero dimension in " + name);
      if (elements > std::numeric_limits<std::uint64_t>::max() / dim) r.fail("shape overflow");
      elements *= dim;
      d = static_cast<std::size_t>(dim);
    }
    if (elements > r.remaining() / 8) {
      r.fail("truncated payload for " + name);
    }
    std::vector<double> data(static_cast<std::size_t>(elements));
    for (auto& v : data) v = r.f64();
    if (out.find(name) != nullptr) r.fail("duplicate parameter " + name);
    out.records.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, serialize(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

void add_transform(Checkpoint& checkpoint, const std::string& prefix,
                   const TransformParams& params) {
  for (const auto& p : params.parameters()) checkpoint.add(prefix + p.name, *p.tensor);
}

void add_entropy(Checkpoint& checkpoint, const std::string& prefix,
                 const FactorizedEntropyModel& model) {
  for (const auto& p : model.parameters()) checkpoint.add(prefix + p.name, *p.tensor);
}

void restore_transform(const Checkpoint& checkpoint, const std::string& prefix,
                       TransformParams& target) {
  TransformParams staged = target;
  restore_refs(checkpoint, prefix, staged.parameters());
  target = std::move(staged);
}

void restore_entropy(const Checkpoint& checkpoint, const std::string& prefix,
                     FactorizedEntropyModel& target) {
  FactorizedEntropyModel staged = target;
  restore_refs(checkpoint, prefix, staged.parameters());
  target = std::move(staged);
}

Checkpoint server_checkpoint(const ServerState& server) {
  Checkpoint c;
  add_transform(c, "global/g_a/", server.g_a);
  add_transform(c, "global/g_s/", server.g_s);
  if (server.regime == Regime::fedavg && server.entropy) {
    add_entropy(c, "global/entropy/", *server.entropy);
  }
  return c;
}

Checkpoint client_checkpoint(const ClientState& client, Regime regime) {
  Checkpoint c;
  const std::string prefix = client_prefix(client);
  if (regime == Regime::local) {
    add_transform(c, prefix + "g_a/", client.g_a);
    add_transform(c, prefix + "g_s/", client.g_s);
  }
  add_entropy(c, prefix + "entropy/", client.entropy);
  return c;
}

void load_server_checkpoint(const Checkpoint& checkpoint, ServerState& server) {
  ServerState staged = server;
  restore_transform(checkpoint, "global/g_a/", staged.g_a);
  restore_transform(checkpoint, "global/g_s/", staged.g_s);
  if (staged.regime == Regime::fedavg && staged.entropy) {
    restore_entropy(checkpoint, "global/entropy/", *staged.entropy);
  } else if (checkpoint.has_prefix("global/entropy/")) {
    throw FormatError("checkpoint: entropy parameters in a " + to_string(staged.regime) +
                      " server checkpoint");
  }
  if (checkpoint.records.size() != count_prefix(checkpoint, "global/")) {
    throw FormatError("checkpoint: unexpected non-global parameters in a server checkpoint");
  }
  server = std::move(staged);
}

void load_client_checkpoint(const Checkpoint& checkpoint, ClientState& client, Regime regime) {
  ClientState staged = client;
  const std::string prefix = client_prefix(client);
  if (regime == Regime::local) {
    restore_transform(checkpoint, prefix + "g_a/", staged.g_a);
    restore_transform(checkpoint, prefix + "g_s/", staged.g_s);
  } else if (checkpoint.has_prefix(prefix + "g_a/") || checkpoint.has_prefix(prefix + "g_s/")) {
    throw FormatError("checkpoint: client transforms in a " + to_string(regime) +
                      " client checkpoint");
  }
  restore_entropy(checkpoint, prefix + "entropy/", staged.entropy);
  if (checkpoint.records.size() != count_prefix(checkpoint, prefix)) {
    throw FormatError("checkpoint: parameters of another client in " + prefix);
  }
  client = std::move(staged);
}

}  // namespace fedntc
