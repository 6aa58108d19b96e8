// Copyright 2026 The discviz Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace discviz {

/// Base of every error raised by the library. Carries the name of the module
/// that detected the problem so the CLI can report provenance.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Input outside the mathematical domain of an operation (zero vectors,
/// negative arguments, empty lists, non-normalized probabilities).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Pearson correlation requested on a constant series.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

/// A finite-difference probe or an objective evaluated to a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// An optimizer produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An EM component lost all support (zero resultant direction).
class DegenerateComponentError : public Error {
 public:
  DegenerateComponentError(std::size_t component, const std::string& message)
      : Error("mixture", message), component_(component) {}

  std::size_t component() const noexcept { return component_; }

 private:
  std::size_t component_;
};

/// A layer whose average regional strength is zero cannot be rescaled.
class DegenerateLayerError : public Error {
 public:
  using Error::Error;
};

/// Malformed tensor container. `offset` is the byte position of the fault.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error("io", message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Problems with a dataset manifest or with files it references.
class ManifestError : public Error {
 public:
  ManifestError(const std::string& message) : Error("io", message) {}
};

/// Exact Shapley enumeration requested for too many players.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was run before the stage whose artifacts it consumes.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Paired datasets disagree on sample ids, layers or region counts.
class PairingError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or synthetic-data specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// I/O failure (cannot open, cannot write).
class IoError : public Error {
 public:
  IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace discviz
