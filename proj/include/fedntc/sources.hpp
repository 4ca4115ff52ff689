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

// Data provisioning: heterogeneous synthetic sources x = f(z_i), image
// dataset ingestion and label-sorted shard partitioning.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedntc/nn.hpp"
#include "fedntc/tensor.hpp"

namespace fedntc {

enum class MapKind { orthogonal_linear, fixed_mlp };

// The shared generative map f. Identical for every client once built.
class GenerativeMap {
 public:
  GenerativeMap() = default;
  static GenerativeMap orthogonal(std::size_t latent_dim, std::size_t ambient_dim,
                                  std::uint64_t seed);
  static GenerativeMap mlp(std::size_t latent_dim, std::size_t ambient_dim,
                           const std::vector<std::size_t>& hidden, std::uint64_t seed);

  MapKind kind() const { return kind_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t ambient_dim() const { return ambient_dim_; }

  // z: [n x d_z] -> x: [n x d_x]
  Tensor apply(const Tensor& z) const;
  // Left inverse for the orthogonal map (Q^T x); throws for the MLP map.
  Tensor invert(const Tensor& x) const;
  // [d_x x d_z] matrix with orthonormal columns (orthogonal map only).
  const Tensor& basis() const { return basis_; }

 private:
  MapKind kind_ = MapKind::orthogonal_linear;
  std::size_t latent_dim_ = 0;
  std::size_t ambient_dim_ = 0;
  Tensor basis_;
  TransformParams network_;
};

struct SourceSpec {
  std::size_t latent_dim = 16;
  std::size_t ambient_dim = 16;
  // sigmas[i][j]: standard deviation of latent dimension j at client i.
  std::vector<std::vector<double>> sigmas;
  GenerativeMap map;

  std::size_t clients() const { return sigmas.size(); }
  // Throws ConfigError on violated invariants.
  void validate() const;
  // Per-client latent variances sigma^2.
  std::vector<std::vector<double>> variances() const;
};

// Client i has sigma_high on a block of `active_dims` dimensions starting at
// (i * active_dims) mod latent_dim and sigma_low elsewhere. `separation` in
// [0, 1] blends every client's profile with the population average: 0 gives
// identical clients, 1 gives fully disjoint active blocks.
std::vector<std::vector<double>> block_variance_profiles(std::size_t clients,
                                                         std::size_t latent_dim,
                                                         std::size_t active_dims,
                                                         double sigma_high, double sigma_low,
                                                         double separation);

struct Dataset {
  Tensor samples;                 // [N x d_x]
  std::vector<int> labels;        // empty when unlabeled
  std::string normalization = "none";

  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
  bool operator==(const Dataset&) const = default;
};

struct SyntheticShard {
  Dataset data;
  Tensor latents;  // the z that generated data.samples
};

// One client's shard drawn with an explicit seed.
SyntheticShard gen_client(const SourceSpec& spec, std::size_t client, std::size_t samples,
                          std::uint64_t client_seed);

// Per-client shards; client i uses derive_seed(seed, {i}).
std::vector<SyntheticShard> gen_synthetic(const SourceSpec& spec, std::size_t samples_per_client,
                                          std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class ShardDealing { random, round_robin };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // client -> sample indices
  std::size_t shards_per_client = 0;
  std::size_t samples_per_client = 0;
  std::size_t dropped = 0;  // samples trimmed from the sorted tail
};

// Sorts indices by label, cuts n*S equal contiguous shards and deals S shards
// to each client. Throws PartitionError when N is not divisible by n*S unless
// `trim` is set, in which case the remainder is dropped from the sorted tail.
PartitionPlan partition_non_iid(const std::vector<int>& labels, std::size_t clients,
                                std::size_t shards_per_client, std::uint64_t seed,
                                ShardDealing dealing = ShardDealing::random, bool trim = false);

// ---------------------------------------------------------------------------

enum class DatasetFormat { cifar10_binary, raw_f64 };

DatasetFormat dataset_format_from_string(const std::string& name);

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::uint16_t kRawDatasetVersion = 1;

Dataset load_image_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);
Dataset parse_raw_f64(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_raw_f64(const Dataset& dataset);

// Splits CIFAR-layout (CHW, 3x32x32) images into non-overlapping
// patch x patch x 3 vectors. Labels are repeated per patch.
Dataset extract_patches(const Dataset& images, std::size_t side, std::size_t channels,
                        std::size_t patch);

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace fedntc
