// include/pepc/errors.hpp

// Copyright 2026  The pepc authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef PEPC_ERRORS_HPP
#define PEPC_ERRORS_HPP

#include <sstream>
#include <stdexcept>
#include <string>

namespace pepc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad parameters, invalid configuration, infeasible requests.  Exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An episode spec that cannot be satisfied by the given corpus.
class FeasibilityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Tensor shape / dimension mismatches.
class DimError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed or inconsistent input data.  Exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad magic bytes, unknown versions, truncated binary payloads.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Schema violations in a corpus manifest.
class ManifestError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf or otherwise degenerate numeric state.  Exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

}  // namespace pepc

#endif  // PEPC_ERRORS_HPP
