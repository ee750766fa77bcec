// Copyright 2026 The TrusFusion Authors. All Rights Reserved.
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

#include <optional>

#include "trus/ortho_reg.hpp"

namespace trus::testing {

/// Gradient descent on R alone with the Polyak step R / |g|^2 (the minimum of R is 0).
/// Returns the step count at which R fell below `tol`, or nullopt.
inline std::optional<int> polyak_descent(Tensor<double>& w, ortho::PenaltyForm form, int max_steps, double tol) {
  Tensor<double> g;
  for (int step = 0; step <= max_steps; ++step) {
    const double r = ortho::ortho_penalty(w, form, &g);
    if (r < tol) return step;
    if (step == max_steps) break;
    double gg = 0;
    for (double v : g) gg += v * v;
    if (gg == 0) break;
    const double eta = r / gg;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * g[i];
  }
  return std::nullopt;
}

}  // namespace trus::testing
