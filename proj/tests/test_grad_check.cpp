// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "temf/errors.hpp"
#include "temf/grad_check.hpp"
#include "temf/gradcheck_suite.hpp"

using namespace temf;

TEST_CASE("grad_check on x squared") {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  const auto r = grad_check([&](Tape& t) { return t.mul(x, x); }, {x}, 1e-6);
  CHECK(r.analytic == doctest::Approx(6.0));
  CHECK(r.numeric == doctest::Approx(6.0));
  CHECK(r.max_relative_error < 1e-7);
  CHECK(x.item() == 3.0);
}

TEST_CASE("grad_check on a constant objective") {
  Tensor x = Tensor::vector({1.0, -2.0});
  x.set_requires_grad(true);
  const auto r = grad_check([&](Tape& t) { return t.add(t.scale(t.sum_all(x), 0.0), Tensor::scalar(4.0)); }, {x}, 1e-6);
  CHECK(r.analytic == 0.0);
  CHECK(std::abs(r.numeric) < 1e-9);
  CHECK(r.max_relative_error == 0.0);
}

TEST_CASE("grad_check preconditions") {
  Tensor x = Tensor::scalar(1.0);
  x.set_requires_grad(true);
  const Objective f = [&](Tape& t) { return t.mul(x, x); };
  CHECK_THROWS_AS(grad_check(f, {x}, 1e-3), ContractError);
  CHECK_THROWS_AS(grad_check(f, {x}, 1e-9), ContractError);
  const Objective bad = [&](Tape& t) {
    return t.scale(t.mul(x, x), std::numeric_limits<double>::infinity());
  };
  CHECK_THROWS_AS(grad_check(bad, {x}, 1e-6), ContractError);
}

TEST_CASE("both stencils agree on a smooth function") {
  Rng rng(4);
  Tensor a = test::random_tensor({3, 3}, rng);
  const Objective f = [&](Tape& t) { return t.sum_all(t.tanh(t.matmul(a, a))); };
  CHECK(grad_check(f, {a}, 1e-6, Stencil::central).max_relative_error < 1e-6);
  CHECK(grad_check(f, {a}, 1e-4, Stencil::ridders).max_relative_error < 1e-9);
}

TEST_CASE("a wrong backward rule is caught and named") {
  // tanh forward with the derivative of sin: a deliberately broken op.
  const auto broken = [](Tape& tape, const Tensor& x) {
    Tensor y(x.shape(), true);
    for (std::size_t i = 0; i < x.size(); ++i) y.mutable_data()[i] = std::tanh(x[i]);
    if (tape.recording()) {
      tape.record("broken_tanh", [x, y] {
        for (std::size_t i = 0; i < x.size(); ++i) x.mutable_grad()[i] += y.grad()[i] * std::cos(x[i]);
      });
    }
    return y;
  };
  std::vector<GradCheckCase> cases = default_gradcheck_cases();
  cases.erase(std::remove_if(cases.begin(), cases.end(), [](const auto& c) { return c.kind != "op"; }), cases.end());
  cases.resize(2);
  cases.push_back({"broken_tanh", "op", 1e-6, 5, [&](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = test::random_tensor({2, 3}, rng);
                     return grad_check([&](Tape& t) { return t.sum_all(broken(t, x)); }, {x}, 1e-4, Stencil::ridders);
                   }});
  const GradCheckReport report = run_gradcheck_suite(cases);
  CHECK_FALSE(report.passed());
  const std::string text = format_report(report);
  CHECK(text.find("FAIL broken_tanh") != std::string::npos);
  CHECK(text.find("PASS " + cases[0].name) != std::string::npos);
  CHECK(report.outcomes.back().max_relative_error > 1e-3);
}

TEST_CASE("every tape op passes its gradient check") {
  for (const auto& c : default_gradcheck_cases()) {
    if (c.kind != "op") continue;
    CAPTURE(c.name);
    CHECK(c.seeds == 100);
    const auto report = run_gradcheck_suite({c});
    CHECK(report.outcomes[0].error.empty());
    CHECK(report.outcomes[0].max_relative_error < 1e-6);
  }
}
