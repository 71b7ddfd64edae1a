// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "temf/grad_check.hpp"

namespace temf {

/// One named gradient check, repeated over seeds. `run` builds random
/// inputs from the seed and returns grad_check's verdict.
struct GradCheckCase {
  std::string name;
  std::string kind;  // "op", "layer" or "model"
  double threshold = 1e-6;
  std::size_t seeds = 1;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradCheckOutcome {
  std::string name;
  std::string kind;
  double max_relative_error = 0.0;
  double threshold = 0.0;
  std::size_t seeds = 0;
  std::uint64_t worst_seed = 0;
  bool passed = false;
  std::string error;  // exception text when a case threw
};

struct GradCheckReport {
  std::vector<GradCheckOutcome> outcomes;
  double seconds = 0.0;
  bool passed() const;
};

struct GradCheckSettings {
  double eps = 1e-4;
  Stencil stencil = Stencil::ridders;
};

/// Every tape op (100 seeds, < 1e-6), every layer (20 seeds, < 1e-6) and the
/// full model loss on a D=8, 2-head, c=4, n=3 configuration (< 1e-4).
std::vector<GradCheckCase> default_gradcheck_cases(const GradCheckSettings& settings = {});

GradCheckReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases);

/// One line per case: status, name, max relative error, threshold.
std::string format_report(const GradCheckReport& report);

}  // namespace temf
