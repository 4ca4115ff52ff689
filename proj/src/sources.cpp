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

#include "fedntc/sources.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedntc/binary_io.hpp"
#include "fedntc/error.hpp"

namespace fedntc {

GenerativeMap GenerativeMap::orthogonal(std::size_t latent_dim, std::size_t ambient_dim,
                                        std::uint64_t seed) {
  if (latent_dim == 0 || ambient_dim < latent_dim) {
    throw ConfigError("orthogonal map needs 0 < latent_dim <= ambient_dim");
  }
  Rng rng(seed);
  const auto rows = static_cast<Eigen::Index>(ambient_dim);
  const auto cols = static_cast<Eigen::Index>(latent_dim);
  Eigen::MatrixXd gaussian(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) gaussian(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd& packed = qr.matrixQR();
  // Sign convention diag(R) > 0 makes the factorisation unique.
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (packed(c, c) < 0.0) q.col(c) *= -1.0;
  }
  GenerativeMap map;
  map.kind_ = MapKind::orthogonal_linear;
  map.latent_dim_ = latent_dim;
  map.ambient_dim_ = ambient_dim;
  map.basis_ = Tensor({ambient_dim, latent_dim});
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      map.basis_(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = q(r, c);
    }
  }
  return map;
}

GenerativeMap GenerativeMap::mlp(std::size_t latent_dim, std::size_t ambient_dim,
                                 const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (latent_dim == 0 || ambient_dim < latent_dim) {
    throw ConfigError("mlp map needs 0 < latent_dim <= ambient_dim");
  }
  Rng rng(seed);
  std::vector<std::size_t> dims{latent_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(ambient_dim);
  GenerativeMap map;
  map.kind_ = MapKind::fixed_mlp;
  map.latent_dim_ = latent_dim;
  map.ambient_dim_ = ambient_dim;
  map.network_ = make_transform(TransformRole::synthesis, dims, Activation::leaky_relu, rng);
  return map;
}

Tensor GenerativeMap::apply(const Tensor& z) const {
  if (z.rank() != 2 || z.cols() != latent_dim_) {
    throw DimensionError("generative map expects [n x " + std::to_string(latent_dim_) +
                         "], got " + shape_to_string(z.shape()));
  }
  if (kind_ == MapKind::fixed_mlp) return forward(network_, z);
  Tensor x({z.rows(), ambient_dim_});
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t i = 0; i < ambient_dim_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < latent_dim_; ++j) acc += basis_(i, j) * z(r, j);
      x(r, i) = acc;
    }
  }
  return x;
}

Tensor GenerativeMap::invert(const Tensor& x) const {
  if (kind_ != MapKind::orthogonal_linear) {
    throw DomainError("only the orthogonal generative map has a closed-form inverse");
  }
  if (x.rank() != 2 || x.cols() != ambient_dim_) {
    throw DimensionError("generative map inverse expects [n x " + std::to_string(ambient_dim_) +
                         "], got " + shape_to_string(x.shape()));
  }
  Tensor z({x.rows(), latent_dim_});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < latent_dim_; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ambient_dim_; ++i) acc += basis_(i, j) * x(r, i);
      z(r, j) = acc;
    }
  }
  return z;
}

void SourceSpec::validate() const {
  if (latent_dim == 0 || ambient_dim < latent_dim) {
    throw ConfigError("source: need 0 < latent_dim <= ambient_dim");
  }
  if (sigmas.empty()) throw ConfigError("source: no clients");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (sigmas[i].size() != latent_dim) {
      throw ConfigError("source: client " + std::to_string(i) + " has " +
                        std::to_string(sigmas[i].size()) + " sigmas, expected " +
                        std::to_string(latent_dim));
    }
    for (double s : sigmas[i]) {
      if (!(s > 0.0) || !std::isfinite(s)) {
        throw ConfigError("source: client " + std::to_string(i) + " has a non-positive sigma");
      }
    }
  }
  if (map.latent_dim() != latent_dim || map.ambient_dim() != ambient_dim) {
    throw ConfigError("source: generative map dimensions do not match");
  }
}

std::vector<std::vector<double>> SourceSpec::variances() const {
  auto v = sigmas;
  for (auto& row : v) {
    for (auto& s : row) s *= s;
  }
  return v;
}

std::vector<std::vector<double>> block_variance_profiles(std::size_t clients,
                                                         std::size_t latent_dim,
                                                         std::size_t active_dims,
                                                         double sigma_high, double sigma_low,
                                                         double separation) {
  if (clients == 0 || latent_dim == 0) throw ConfigError("variance profile: empty");
  if (active_dims == 0 || active_dims > latent_dim) {
    throw ConfigError("variance profile: active_dims must be in [1, latent_dim]");
  }
  if (!(sigma_high > 0.0) || !(sigma_low > 0.0)) {
    throw ConfigError("variance profile: sigmas must be positive");
  }
  if (!(separation >= 0.0 && separation <= 1.0)) {
    throw ConfigError("variance profile: separation must be in [0, 1]");
  }
  std::vector<std::vector<double>> var(clients, std::vector<double>(latent_dim, sigma_low * sigma_low));
  for (std::size_t i = 0; i < clients; ++i) {
    for (std::size_t j = 0; j < active_dims; ++j) {
      var[i][(i * active_dims + j) % latent_dim] = sigma_high * sigma_high;
    }
  }
  std::vector<double> mean(latent_dim, 0.0);
  for (const auto& row : var) {
    for (std::size_t j = 0; j < latent_dim; ++j) mean[j] += row[j] / static_cast<double>(clients);
  }
  std::vector<std::vector<double>> sigmas(clients, std::vector<double>(latent_dim));
  for (std::size_t i = 0; i < clients; ++i) {
    for (std::size_t j = 0; j < latent_dim; ++j) {
      sigmas[i][j] = std::sqrt((1.0 - separation) * mean[j] + separation * var[i][j]);
    }
  }
  return sigmas;
}

SyntheticShard gen_client(const SourceSpec& spec, std::size_t client, std::size_t samples,
                          std::uint64_t client_seed) {
  spec.validate();
  if (client >= spec.clients()) throw ConfigError("gen_client: client index out of range");
  if (samples == 0) throw ConfigError("gen_client: samples must be >= 1");
  Rng rng(client_seed);
  SyntheticShard shard;
  shard.latents = Tensor({samples, spec.latent_dim});
  const auto& sigma = spec.sigmas[client];
  for (std::size_t r = 0; r < samples; ++r) {
    for (std::size_t j = 0; j < spec.latent_dim; ++j) shard.latents(r, j) = sigma[j] * rng.normal();
  }
  shard.data.samples = spec.map.apply(shard.latents);
  shard.data.normalization = "none";
  return shard;
}

std::vector<SyntheticShard> gen_synthetic(const SourceSpec& spec, std::size_t samples_per_client,
                                          std::uint64_t seed) {
  std::vector<SyntheticShard> shards;
  shards.reserve(spec.clients());
  for (std::size_t i = 0; i < spec.clients(); ++i) {
    shards.push_back(gen_client(spec, i, samples_per_client, derive_seed(seed, {i})));
  }
  return shards;
}

// ---------------------------------------------------------------------------

PartitionPlan partition_non_iid(const std::vector<int>& labels, std::size_t clients,
                                std::size_t shards_per_client, std::uint64_t seed,
                                ShardDealing dealing, bool trim) {
  if (labels.empty()) throw PartitionError("partition: no labels");
  if (clients == 0 || shards_per_client == 0) {
    throw PartitionError("partition: clients and shards per client must be positive");
  }
  const std::size_t shards = clients * shards_per_client;
  const std::size_t total = labels.size();
  if (shards > total) {
    throw PartitionError("partition: " + std::to_string(shards) + " shards for only " +
                         std::to_string(total) + " samples");
  }
  if (total % shards != 0 && !trim) {
    throw PartitionError("partition: " + std::to_string(total) + " samples not divisible into " +
                         std::to_string(shards) + " shards; trim the dataset");
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  const std::size_t shard_size = total / shards;

  std::vector<std::size_t> shard_ids(shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  if (dealing == ShardDealing::random) {
    Rng rng(seed);
    rng.shuffle(shard_ids);
  }
  PartitionPlan plan;
  plan.shards_per_client = shards_per_client;
  plan.samples_per_client = shard_size * shards_per_client;
  plan.dropped = total - shard_size * shards;
  plan.assignments.resize(clients);
  for (std::size_t i = 0; i < clients; ++i) {
    auto& mine = plan.assignments[i];
    for (std::size_t k = 0; k < shards_per_client; ++k) {
      const std::size_t shard = dealing == ShardDealing::random
                                    ? shard_ids[i * shards_per_client + k]
                                    : i + k * clients;
      for (std::size_t j = 0; j < shard_size; ++j) mine.push_back(order[shard * shard_size + j]);
    }
    std::sort(mine.begin(), mine.end());
  }
  return plan;
}

// ---------------------------------------------------------------------------

DatasetFormat dataset_format_from_string(const std::string& name) {
  if (name == "cifar10-binary" || name == "cifar10_binary") return DatasetFormat::cifar10_binary;
  if (name == "raw-f64" || name == "raw_f64") return DatasetFormat::raw_f64;
  throw ConfigError("unknown dataset format '" + name + "'");
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kRecord = kCifarImageBytes + 1;
  const std::size_t n = bytes.size() / kRecord;
  if (bytes.size() % kRecord != 0) {
    throw FormatError("cifar10-binary: incomplete record at byte offset " +
                      std::to_string(n * kRecord) + " (file length " +
                      std::to_string(bytes.size()) + ")");
  }
  if (n == 0) throw FormatError("cifar10-binary: empty file");
  Dataset d;
  d.samples = Tensor({n, kCifarImageBytes});
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t at = r * kRecord;
    const int label = bytes[at];
    if (label > 9) {
      throw FormatError("cifar10-binary: label " + std::to_string(label) + " at byte offset " +
                        std::to_string(at) + " is not in [0, 10)");
    }
    d.labels[r] = label;
    auto row = d.samples.row(r);
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) row[j] = bytes[at + 1 + j] / 255.0;
  }
  d.normalization = "scaled to [0,1], no mean subtraction";
  return d;
}

Dataset parse_raw_f64(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "raw-f64 dataset");
  r.expect_magic("FNDS");
  const auto version = r.u16();
  if (version != kRawDatasetVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint64_t n = r.u64();
  const std::uint32_t dim = r.u32();
  const std::uint8_t has_labels = r.u8();
  if (has_labels > 1) r.fail("has_labels must be 0 or 1");
  if (n == 0 || dim == 0) r.fail("empty dataset");
  const std::uint64_t expected = n * dim * 8 + (has_labels ? n * 2 : 0);
  if (expected != r.remaining()) {
    r.fail("payload should be " + std::to_string(expected) + " bytes, found " +
           std::to_string(r.remaining()));
  }
  Dataset d;
  d.samples = Tensor({static_cast<std::size_t>(n), dim});
  for (auto& v : d.samples.data()) {
    v = r.f64();
    if (!std::isfinite(v)) r.fail("non-finite sample value");
  }
  if (has_labels) {
    d.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : d.labels) l = r.u16();
  }
  d.normalization = "as stored";
  return d;
}

std::vector<std::uint8_t> serialize_raw_f64(const Dataset& dataset) {
  ByteWriter w;
  w.bytes("FNDS");
  w.u16(kRawDatasetVersion);
  w.u64(dataset.size());
  w.u32(static_cast<std::uint32_t>(dataset.dim()));
  const bool has_labels = !dataset.labels.empty();
  if (has_labels && dataset.labels.size() != dataset.size()) {
    throw DimensionError("raw-f64: label count does not match sample count");
  }
  w.u8(has_labels ? 1 : 0);
  for (double v : dataset.samples.data()) w.f64(v);
  for (int l : dataset.labels) {
    if (l < 0 || l > 0xFFFF) throw FormatError("raw-f64: label out of u16 range");
    w.u16(static_cast<std::uint16_t>(l));
  }
  return w.take();
}

Dataset load_image_dataset(const std::filesystem::path& path, DatasetFormat format) {
  const auto bytes = read_file(path);
  return format == DatasetFormat::cifar10_binary ? parse_cifar10(bytes) : parse_raw_f64(bytes);
}

Dataset extract_patches(const Dataset& images, std::size_t side, std::size_t channels,
                        std::size_t patch) {
  if (patch == 0 || side % patch != 0) throw ConfigError("patch size must divide image side");
  if (images.dim() != side * side * channels) {
    throw DimensionError("extract_patches: sample dim " + std::to_string(images.dim()) +
                         " is not " + std::to_string(channels) + "x" + std::to_string(side) +
                         "x" + std::to_string(side));
  }
  const std::size_t per_side = side / patch;
  const std::size_t per_image = per_side * per_side;
  const std::size_t dim = patch * patch * channels;
  Dataset out;
  out.samples = Tensor({images.size() * per_image, dim});
  out.normalization = images.normalization;
  for (std::size_t n = 0; n < images.size(); ++n) {
    auto img = images.samples.row(n);
    for (std::size_t py = 0; py < per_side; ++py) {
      for (std::size_t px = 0; px < per_side; ++px) {
        auto row = out.samples.row(n * per_image + py * per_side + px);
        std::size_t k = 0;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t y = 0; y < patch; ++y) {
            for (std::size_t x = 0; x < patch; ++x) {
              row[k++] = img[c * side * side + (py * patch + y) * side + px * patch + x];
            }
          }
        }
        if (!images.labels.empty()) out.labels.push_back(images.labels[n]);
      }
    }
  }
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.samples = gather_rows(data.samples, indices);
  out.normalization = data.normalization;
  if (!data.labels.empty()) {
    for (auto i : indices) out.labels.push_back(data.labels.at(i));
  }
  return out;
}

}  // namespace fedntc
