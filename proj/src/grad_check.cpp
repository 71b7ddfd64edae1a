// SPDX-License-Identifier: Apache-2.0
#include "temf/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "temf/errors.hpp"

namespace temf {

namespace {

double evaluate(const Objective& f) {
  Tape tape(false);
  const Tensor out = f(tape);
  if (out.size() != 1) throw ContractError("grad_check: objective must be scalar, got " + shape_string(out.shape()));
  const double v = out.item();
  if (!std::isfinite(v)) throw ContractError("grad_check: objective is not finite");
  return v;
}

// Neville tableau over shrinking steps; see Numerical Recipes, dfridr.
double ridders(const std::function<double(double)>& central, double h) {
  constexpr int kTable = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  double a[kTable][kTable];
  a[0][0] = central(h);
  double best = a[0][0];
  double err = std::numeric_limits<double>::max();
  for (int i = 1; i < kTable; ++i) {
    h /= kShrink;
    a[0][i] = central(h);
    double fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return best;
}

}  // namespace

GradCheckResult grad_check(const Objective& f, std::vector<Tensor> params, double eps, Stencil stencil) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) throw ContractError("grad_check: eps must lie in [1e-8, 1e-4]");
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter without requires_grad");
    p.drop_grad();
  }

  {
    Tape tape;
    const Tensor loss = f(tape);
    if (loss.size() != 1) throw ContractError("grad_check: objective must be scalar");
    if (!std::isfinite(loss.item())) throw ContractError("grad_check: objective is not finite");
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate(f);
      };
      const auto central = [&](double h) { return (at(h) - at(-h)) / (2.0 * h); };
      const double numeric = stencil == Stencil::central ? central(eps) : ridders(central, eps);
      values[i] = saved;
      const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-10);
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace temf
