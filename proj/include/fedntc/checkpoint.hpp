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

// Parameter checkpoints.
//
// Layout (all fields little-endian):
//
//   "FNTC" u32 version u32 record_count
//   record: u32 name_length, name bytes, u32 rank, u64 dims[rank], f64 payload
//
// Names are namespaced paths such as "global/g_a/layer0.weight" or
// "client/3/entropy/matrix0". Optimiser moments are not stored.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedntc/entropy.hpp"
#include "fedntc/federation.hpp"
#include "fedntc/nn.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::vector<NamedTensor> records;

  // Throws FormatError on a duplicate name.
  void add(const std::string& name, const Tensor& tensor);
  const Tensor* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void add_transform(Checkpoint& checkpoint, const std::string& prefix,
                   const TransformParams& params);
void add_entropy(Checkpoint& checkpoint, const std::string& prefix,
                 const FactorizedEntropyModel& model);

// Copies every parameter under `prefix` into `target`, whose architecture
// fixes the expected names and shapes. On any missing name or shape
// mismatch a FormatError is thrown and `target` is left untouched.
void restore_transform(const Checkpoint& checkpoint, const std::string& prefix,
                       TransformParams& target);
void restore_entropy(const Checkpoint& checkpoint, const std::string& prefix,
                     FactorizedEntropyModel& target);

// Global model: "global/g_a/...", "global/g_s/..." and, for fedavg only,
// "global/entropy/...".
Checkpoint server_checkpoint(const ServerState& server);
// One client: "client/<id>/entropy/..." plus, for the local regime,
// "client/<id>/g_a/..." and "client/<id>/g_s/...".
Checkpoint client_checkpoint(const ClientState& client, Regime regime);

// All-or-nothing loads into states that already have the right architecture.
void load_server_checkpoint(const Checkpoint& checkpoint, ServerState& server);
void load_client_checkpoint(const Checkpoint& checkpoint, ClientState& client, Regime regime);

}  // namespace fedntc
