// include/pepc/adam.hpp

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

#ifndef PEPC_ADAM_HPP
#define PEPC_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "pepc/errors.hpp"
#include "pepc/tensor.hpp"

namespace pepc {

using ParamMap = std::map<std::string, Tensor>;

// Adam with bias correction and a constant learning rate (no schedule).
// Moments are keyed by parameter name and allocated lazily on first use.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step_count = 0;
  ParamMap m;
  ParamMap v;
};

inline void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step_count));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw DimError(detail::cat("adam_step: gradient for unknown parameter '", name, "'"));
    Tensor& p = it->second;
    ensure_same_shape(p, g, "adam_step");
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
    ensure_same_shape(p, m, "adam_step: moment m");
    ensure_same_shape(p, v, "adam_step: moment v");
    for (size_t i = 0; i < p.data.size(); ++i) {
      double gi = g.data[i];
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    ensure_finite(p, "adam_step");
  }
}

}  // namespace pepc

#endif  // PEPC_ADAM_HPP
