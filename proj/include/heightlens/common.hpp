// Copyright 2026 The HeightLens Authors.
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

#ifndef HEIGHTLENS_COMMON_HPP_
#define HEIGHTLENS_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace heightlens {

// Base class for all errors raised by the library. Callers that only care
// about failure can catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the documented domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Object or window does not fit where it was asked to go.
class PlacementError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file, or a value that cannot be serialized.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Report body does not match the schema of its kind. `path` is a JSON
// pointer to the offending element.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Shapes of two operands disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Numeric result that is not defined for the given input (for example an
// empty mask). Functions that can return undefined values use std::optional
// instead where a per-element marker is needed.
class UndefinedError : public Error {
 public:
  using Error::Error;
};

}  // namespace heightlens

#endif  // HEIGHTLENS_COMMON_HPP_
