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

// Python bindings for the oracles, sources, coder and experiment runner.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "fedntc/codec.hpp"
#include "fedntc/entropy.hpp"
#include "fedntc/error.hpp"
#include "fedntc/experiment.hpp"
#include "fedntc/gradsuite.hpp"
#include "fedntc/oracle.hpp"
#include "fedntc/sources.hpp"

namespace py = pybind11;
using namespace fedntc;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const F64Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D float array");
  Shape shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

IntTensor int_from_numpy(const I32Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D int32 array");
  return {{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
          std::vector<std::int32_t>(a.data(), a.data() + a.size())};
}

py::array_t<std::int32_t> int_to_numpy(const IntTensor& t) {
  py::array_t<std::int32_t> out(t.shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::dict rd_point(const RDPoint& p) {
  py::dict d;
  d["lambda"] = p.lambda;
  d["rate"] = p.rate;
  d["distortion"] = p.distortion;
  d["loss"] = p.loss;
  d["round"] = p.round;
  d["regime"] = to_string(p.regime);
  return d;
}

py::dict run_result(const RunResult& r) {
  py::dict d = rd_point(r.point);
  d["replicate"] = r.replicate;
  d["seed"] = r.seed;
  d["psnr"] = r.psnr;
  d["dims"] = r.dims;
  d["oracle_rate"] = r.oracle_rate ? py::cast(*r.oracle_rate) : py::none();
  return d;
}

CdfTable make_table(const std::vector<std::tuple<std::int32_t, std::vector<std::uint32_t>,
                                                 std::uint32_t>>& channels,
                    unsigned precision) {
  CdfTable t;
  t.precision = precision;
  for (const auto& [lo, counts, escape] : channels) {
    t.channels.push_back(channel_table_from_counts(lo, counts, escape));
  }
  t.validate();
  return t;
}

}  // namespace

PYBIND11_MODULE(_fedntc, m) {
  m.doc() = "Federated nonlinear transform coding: oracles, sources, coder and training runs.";

  // Exceptions mirror the C++ hierarchy under a common base.
  static py::exception<Error> base(m, "FedntcError");
  static py::exception<DimensionError> dimension(m, "DimensionError", base.ptr());
  static py::exception<TrainingError> training(m, "TrainingError", base.ptr());
  static py::exception<DomainError> domain(m, "DomainError", base.ptr());
  static py::exception<TableError> table(m, "TableError", base.ptr());
  static py::exception<DecodeError> decode_err(m, "DecodeError", base.ptr());
  static py::exception<PartitionError> partition(m, "PartitionError", base.ptr());
  static py::exception<FormatError> format(m, "FormatError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  static py::exception<IoError> io(m, "IoError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DimensionError& e) {
      dimension(e.what());
    } catch (const TrainingError& e) {
      training(e.what());
    } catch (const DomainError& e) {
      domain(e.what());
    } catch (const TableError& e) {
      table(e.what());
    } catch (const DecodeError& e) {
      decode_err(e.what());
    } catch (const PartitionError& e) {
      partition(e.what());
    } catch (const FormatError& e) {
      format(e.what());
    } catch (const ConfigError& e) {
      config(e.what());
    } catch (const IoError& e) {
      io(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  // Oracles.
  m.def("gaussian_rd", &gaussian_rd, py::arg("variance"), py::arg("distortion"),
        "Scalar Gaussian rate-distortion function in bits.");
  m.def(
      "reverse_waterfill",
      [](const std::vector<double>& variances, double distortion) {
        const WaterfillResult w = reverse_waterfill(variances, distortion);
        py::dict d;
        d["water_level"] = w.water_level;
        d["distortions"] = w.distortions;
        d["rate"] = w.rate;
        return d;
      },
      py::arg("variances"), py::arg("distortion"),
      "Reverse water-filling over independent Gaussian components; rate in bits per component.");
  m.def("fed_rd", &fed_rd, py::arg("client_variances"), py::arg("distortion"),
        "Minimum client-averaged rate at client-averaged distortion, bits per dimension.");
  m.def(
      "fed_rd_curve",
      [](const std::vector<std::vector<double>>& variances, const std::vector<double>& distortions) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p : fed_rd_curve(variances, distortions).points) {
          out.emplace_back(p.distortion, p.rate);
        }
        return out;
      },
      py::arg("client_variances"), py::arg("distortions"), "List of (D, R) pairs.");
  m.def("log_grid", &log_grid, py::arg("lo"), py::arg("hi"), py::arg("count"));
  m.def(
      "empirical_discrete_entropy",
      [](const I32Array& symbols) { return empirical_discrete_entropy(int_from_numpy(symbols)); },
      py::arg("symbols"), "Plug-in entropy in bits per row of a 2-D integer array.");

  // Sources.
  m.def(
      "block_variance_profiles",
      [](std::size_t clients, std::size_t latent_dim, std::size_t active_dims, double sigma_high,
         double sigma_low, double separation) {
        return block_variance_profiles(clients, latent_dim, active_dims, sigma_high, sigma_low,
                                       separation);
      },
      py::arg("clients"), py::arg("latent_dim") = 16, py::arg("active_dims") = 4,
      py::arg("sigma_high") = 16.0, py::arg("sigma_low") = 1.0, py::arg("separation") = 1.0,
      "Per-client latent standard deviations.");
  m.def(
      "gen_synthetic",
      [](std::size_t clients, std::size_t samples_per_client, std::uint64_t seed,
         std::size_t latent_dim, std::size_t ambient_dim, std::size_t active_dims,
         double sigma_high, double sigma_low, double separation) {
        SourceConfig source;
        source.clients = clients;
        source.latent_dim = latent_dim;
        source.ambient_dim = ambient_dim;
        source.active_dims = active_dims;
        source.sigma_high = sigma_high;
        source.sigma_low = sigma_low;
        source.separation = separation;
        const SourceSpec spec = synthetic_spec(source, seed);
        py::list shards;
        for (const auto& s : gen_synthetic(spec, samples_per_client, seed)) {
          py::dict d;
          d["samples"] = to_numpy(s.data.samples);
          d["latents"] = to_numpy(s.latents);
          shards.append(d);
        }
        py::dict out;
        out["shards"] = shards;
        out["variances"] = spec.variances();
        return out;
      },
      py::arg("clients"), py::arg("samples_per_client"), py::arg("seed"),
      py::arg("latent_dim") = 16, py::arg("ambient_dim") = 16, py::arg("active_dims") = 4,
      py::arg("sigma_high") = 16.0, py::arg("sigma_low") = 1.0, py::arg("separation") = 1.0,
      "Heterogeneous Gaussian clients through a seeded orthogonal map.");
  m.def(
      "partition_non_iid",
      [](const std::vector<int>& labels, std::size_t clients, std::size_t shards_per_client,
         std::uint64_t seed, const std::string& dealing, bool trim) {
        const ShardDealing how =
            dealing == "round_robin" ? ShardDealing::round_robin : ShardDealing::random;
        if (dealing != "random" && dealing != "round_robin") {
          throw ConfigError("dealing must be random or round_robin, got " + dealing);
        }
        return partition_non_iid(labels, clients, shards_per_client, seed, how, trim).assignments;
      },
      py::arg("labels"), py::arg("clients"), py::arg("shards_per_client"), py::arg("seed"),
      py::arg("dealing") = "random", py::arg("trim") = false,
      "Label-sorted shard partition; returns sample indices per client.");

  // Coder.
  py::class_<CdfTable>(m, "CdfTable")
      .def(py::init(&make_table), py::arg("channels"), py::arg("precision") = 16,
           "channels: list of (min_symbol, support_counts, escape_count).")
      .def_readonly("precision", &CdfTable::precision)
      .def_property_readonly("channels", [](const CdfTable& t) { return t.channels.size(); });
  m.def(
      "encode",
      [](const I32Array& symbols, const CdfTable& tables) {
        const auto bytes = serialize(encode(int_from_numpy(symbols), tables));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("symbols"), py::arg("tables"), "Range-code a [rows x channels] array to bytes.");
  m.def(
      "decode",
      [](const py::bytes& data, const CdfTable& tables) {
        const std::string s = data;
        const std::vector<std::uint8_t> bytes(s.begin(), s.end());
        return int_to_numpy(decode(parse_bitstream(bytes), tables));
      },
      py::arg("data"), py::arg("tables"));
  m.def(
      "quantize_round", [](const F64Array& y) { return int_to_numpy(quantize_round(from_numpy(y))); },
      py::arg("y"), "Round half away from zero.");

  // Gradient checks.
  m.def(
      "gradient_suite",
      [](std::size_t seeds, double tolerance, double step) {
        GradSuiteOptions opt;
        opt.seeds = seeds;
        opt.tolerance = tolerance;
        opt.step = step;
        const GradSuiteReport r = run_gradient_suite(opt);
        py::list cases;
        for (const auto& c : r.cases) {
          py::dict d;
          d["name"] = c.name;
          d["seed"] = c.seed;
          d["max_relative_error"] = c.report.max_relative_error;
          d["passed"] = c.report.passed;
          cases.append(d);
        }
        py::dict out;
        out["passed"] = r.passed();
        out["worst_relative_error"] = r.worst_relative_error();
        out["cases"] = cases;
        return out;
      },
      py::arg("seeds") = 10, py::arg("tolerance") = 1e-4, py::arg("step") = 1e-3);

  // Experiments.
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_property_readonly("regime", [](const ExperimentConfig& c) { return to_string(c.regime); })
      .def_readonly("lambdas", &ExperimentConfig::lambdas)
      .def_readonly("master_seed", &ExperimentConfig::master_seed)
      .def_readonly("replicates", &ExperimentConfig::replicates)
      .def("to_ini", &to_ini)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });
  m.def("parse_config", &parse_config, py::arg("text"),
        py::arg("overrides") = std::vector<std::string>{},
        "Parse INI text; overrides are section.key=value strings.");
  m.def("load_config", &load_config, py::arg("path"),
        py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "run_point",
      [](const ExperimentConfig& config, double lambda, std::size_t replicate) {
        py::gil_scoped_release release;
        const RunResult r = run_point(config, lambda, replicate);
        py::gil_scoped_acquire acquire;
        return run_result(r);
      },
      py::arg("config"), py::arg("lambda_"), py::arg("replicate") = 0,
      "Train one (lambda, replicate) point in memory and return its final metrics.");
  m.def(
      "run_experiment",
      [](const ExperimentConfig& config, const std::string& run_name, std::size_t threads) {
        RunSummary s;
        {
          py::gil_scoped_release release;
          s = run_experiment(config, {run_name, threads, true});
        }
        py::list rows;
        for (const auto& r : s.results) rows.append(run_result(r));
        py::dict out;
        out["directory"] = s.directory;
        out["results"] = rows;
        return out;
      },
      py::arg("config"), py::arg("run_name") = "", py::arg("threads") = 1,
      "Run the full sweep, writing traces, checkpoints and results.csv.");
}
