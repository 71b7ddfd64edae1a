// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "temf/rng.hpp"
#include "temf/tensor.hpp"

namespace temf::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v), grad);
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline bool all_close(const Tensor& t, const std::vector<double>& expect, double tol) {
  if (t.size() != expect.size()) return false;
  for (std::size_t i = 0; i < expect.size(); ++i)
    if (std::abs(t[i] - expect[i]) > tol) return false;
  return true;
}

// Central difference of a scalar function of one coordinate, evaluated
// independently of grad_check.
template <class F>
double central_difference(F&& f, Tensor& x, std::size_t i, double h) {
  auto d = x.mutable_data();
  const double keep = d[i];
  d[i] = keep + h;
  const double up = f();
  d[i] = keep - h;
  const double down = f();
  d[i] = keep;
  return (up - down) / (2 * h);
}

}  // namespace temf::test
