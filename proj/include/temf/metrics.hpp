// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace temf {

/// Unweighted mean of the per-class F1 over {0, 1}. A class that appears in
/// neither truth nor prediction contributes F1 = 0.
double macro_f1(std::span<const int> y_true, std::span<const int> y_pred);

/// Macro-F1 of always predicting the most frequent class of `y_true`
/// (ties resolve to class 0).
double majority_baseline_f1(std::span<const int> y_true);

/// items x categories rating counts, every row summing to `raters`.
struct AgreementMatrix {
  std::vector<std::vector<int>> counts;
  int raters = 0;

  /// Throws ContractError naming the first offending row.
  void validate() const;

  /// Text form: a `r=<int>` header line, then one comma-separated row of
  /// counts per item. Throws ParseError with the line number.
  static AgreementMatrix parse(std::string_view text);
  static AgreementMatrix load(const std::filesystem::path& path);
};

/// Fleiss' kappa. Exactly 1.0 when every item is rated unanimously;
/// nullopt when chance agreement P_e is 1 (a single category is ever used).
std::optional<double> fleiss_kappa(const AgreementMatrix& m);

}  // namespace temf
