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

#include <stdexcept>
#include <string>

namespace fedntc {

// All library failures derive from Error so callers (the CLI in particular)
// can map them onto exit codes by category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors, layers or tables.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an oracle function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// CDF table construction failed (degenerate or unsupported model).
class TableError : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated or inconsistent bitstream.
class DecodeError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (dataset, checkpoint, bitstream container).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedntc
