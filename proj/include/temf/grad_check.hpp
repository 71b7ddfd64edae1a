// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "temf/tape.hpp"

namespace temf {

/// Scalar objective evaluated on a fresh tape.
using Objective = std::function<Tensor(Tape&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// central: (f(x+h) - f(x-h)) / 2h.
/// ridders: central differences at h, h/1.4, h/1.4^2, ... extrapolated to
/// zero step (Ridders' method); the tableau entry with the smallest
/// internal error estimate wins. Far less roundoff than plain central
/// differences at the same accuracy, at up to ten times the evaluations.
enum class Stencil { central, ridders };

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Per coordinate the relative error is |ga - gn| / max(|ga| + |gn|, 1e-10).
/// `params` must have requires_grad set; their gradient slots are
/// overwritten. Parameter values are restored bit-exactly afterwards.
/// Throws ContractError for eps outside [1e-8, 1e-4] or a non-finite f.
GradCheckResult grad_check(const Objective& f, std::vector<Tensor> params, double eps = 1e-6,
                           Stencil stencil = Stencil::central);

}  // namespace temf
