// include/pepc/tensor.hpp

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

#ifndef PEPC_TENSOR_HPP
#define PEPC_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pepc/errors.hpp"
#include "pepc/rng.hpp"

namespace pepc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of doubles.  Rank 0 is a scalar (numel 1).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    validate_shape();
    data.assign(size_t(shape_numel(shape)), 0.0);
  }

  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    validate_shape();
    if (int64_t(data.size()) != shape_numel(shape))
      throw DimError(detail::cat("tensor data length ", data.size(), " does not match shape ", shape_str(shape)));
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = rng.normal(0.0, stddev);
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int64_t rank() const { return int64_t(shape.size()); }
  int64_t dim(int64_t i) const { return shape[size_t(i)]; }

  double& operator[](int64_t i) { return data[size_t(i)]; }
  double operator[](int64_t i) const { return data[size_t(i)]; }

  double& at(int64_t r, int64_t c) { return data[size_t(r * shape[1] + c)]; }
  double at(int64_t r, int64_t c) const { return data[size_t(r * shape[1] + c)]; }

  double& at(int64_t i, int64_t j, int64_t k) { return data[size_t((i * shape[1] + j) * shape[2] + k)]; }
  double at(int64_t i, int64_t j, int64_t k) const { return data[size_t((i * shape[1] + j) * shape[2] + k)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void validate_shape() const {
    for (int64_t d : shape)
      if (d <= 0) throw DimError(detail::cat("non-positive extent in shape ", shape_str(shape)));
  }
};

inline void ensure_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(detail::cat("non-finite value produced by ", where));
}

inline void ensure_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw DimError(detail::cat(where, ": shape mismatch ", shape_str(a.shape), " vs ", shape_str(b.shape)));
}

}  // namespace pepc

#endif  // PEPC_TENSOR_HPP
