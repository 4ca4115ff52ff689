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

import math

import numpy as np
import pytest

import fedntc

TOY_INI = """
[experiment]
regime = fed

[source]
kind = synthetic
clients = 2
latent_dim = 4
ambient_dim = 4
active_dims = 2
samples_per_client = 20
eval_samples = 20

[model]
latent_dim = 4

[training]
rounds = 3
entropy_steps = 2
transform_steps = 2
participation = 1
lambdas = 0.5, 2

[seeds]
master = 5
"""


def test_oracles():
    assert fedntc.gaussian_rd(1.0, 0.25) == pytest.approx(1.0, abs=1e-15)
    w = fedntc.reverse_waterfill([1.0, 4.0], 0.5)
    assert w["water_level"] == pytest.approx(0.5, abs=1e-12)
    assert w["rate"] == pytest.approx(0.25 * math.log2(1 / 0.5) + 0.25 * math.log2(4 / 0.5))
    assert fedntc.fed_rd([[1.0, 1.0], [4.0, 4.0]], 0.5) == pytest.approx(1.0, abs=1e-12)
    curve = fedntc.fed_rd_curve([[1.0, 4.0]], fedntc.log_grid(0.01, 4.0, 8))
    rates = [r for _, r in curve]
    assert rates == sorted(rates, reverse=True)
    with pytest.raises(fedntc.DomainError):
        fedntc.gaussian_rd(1.0, 0.0)


def test_synthetic_and_partition():
    out = fedntc.gen_synthetic(clients=2, samples_per_client=100, seed=3)
    assert len(out["shards"]) == 2
    assert out["shards"][0]["samples"].shape == (100, 16)
    assert len(out["variances"]) == 2

    labels = [i % 10 for i in range(1000)]
    parts = fedntc.partition_non_iid(labels, clients=10, shards_per_client=2, seed=1)
    flat = [i for p in parts for i in p]
    assert len(flat) == len(set(flat)) == 1000
    with pytest.raises(fedntc.PartitionError):
        fedntc.partition_non_iid(labels[:999], clients=10, shards_per_client=2, seed=1)
    assert issubclass(fedntc.PartitionError, fedntc.FedntcError)


def test_coder_round_trip():
    counts = [256] * 256
    counts[-1] = 255
    table = fedntc.CdfTable([(0, counts, 1)])
    rng = np.random.default_rng(0)
    symbols = rng.integers(0, 256, size=(1000, 1), dtype=np.int32)
    symbols[5, 0] = 100000  # escape
    data = fedntc.encode(symbols, table)
    assert np.array_equal(fedntc.decode(data, table), symbols)
    corrupt = bytearray(data)
    corrupt[-1] ^= 0xFF
    with pytest.raises(fedntc.FedntcError):
        fedntc.decode(bytes(corrupt), table)
    assert fedntc.quantize_round(np.array([[0.5, -0.5, 1.49]])).tolist() == [[1, -1, 1]]


def test_gradient_suite_runs():
    report = fedntc.gradient_suite(seeds=1, step=1e-4)
    assert report["passed"]
    names = {c["name"] for c in report["cases"]}
    assert "objective" in names


def test_config_and_training(tmp_path):
    config = fedntc.parse_config(TOY_INI, [f"experiment.output_dir={tmp_path}"])
    assert config.regime == "fed"
    assert config.lambdas == [0.5, 2.0]
    assert fedntc.parse_config(config.to_ini()) == config
    with pytest.raises(fedntc.ConfigError):
        fedntc.parse_config(TOY_INI, ["training.roundz=1"])

    point = fedntc.run_point(config, 2.0)
    assert point["round"] == 3
    assert point["loss"] == pytest.approx(point["rate"] + 2.0 * point["distortion"])
    assert point["oracle_rate"] is not None

    summary = fedntc.run_experiment(config, run_name="py")
    assert len(summary["results"]) == 2
    assert (summary["directory"] / "results.csv").exists()
    assert summary["results"][1]["loss"] == point["loss"]
