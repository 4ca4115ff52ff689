# Copyright 2026 The FedNTC Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Federated nonlinear transform coding testbed."""

from fedntc._fedntc import (
    CdfTable,
    ConfigError,
    DecodeError,
    DimensionError,
    DomainError,
    ExperimentConfig,
    FedntcError,
    FormatError,
    IoError,
    PartitionError,
    TableError,
    TrainingError,
    block_variance_profiles,
    decode,
    empirical_discrete_entropy,
    encode,
    fed_rd,
    fed_rd_curve,
    gaussian_rd,
    gen_synthetic,
    gradient_suite,
    load_config,
    log_grid,
    parse_config,
    partition_non_iid,
    quantize_round,
    reverse_waterfill,
    run_experiment,
    run_point,
)

__all__ = [
    "CdfTable",
    "ConfigError",
    "DecodeError",
    "DimensionError",
    "DomainError",
    "ExperimentConfig",
    "FedntcError",
    "FormatError",
    "IoError",
    "PartitionError",
    "TableError",
    "TrainingError",
    "block_variance_profiles",
    "decode",
    "empirical_discrete_entropy",
    "encode",
    "fed_rd",
    "fed_rd_curve",
    "gaussian_rd",
    "gen_synthetic",
    "gradient_suite",
    "load_config",
    "log_grid",
    "parse_config",
    "partition_non_iid",
    "quantize_round",
    "reverse_waterfill",
    "run_experiment",
    "run_point",
]
