// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>

#include <random>
#include <vector>

#include "temf/kernels.hpp"

using namespace temf::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Textbook triple loop, independent of both kernels.
std::vector<double> naive(const std::vector<double>& a, const std::vector<double>& b, std::size_t m, std::size_t k,
                          std::size_t p) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t l = 0; l < k; ++l) c[i * p + j] += a[i * k + l] * b[l * p + j];
  return c;
}

}  // namespace

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  std::mt19937_64 rng(42);
  using Dims = std::array<std::size_t, 3>;
  for (const auto& [m, k, p] : std::vector<Dims>{{1, 1, 1}, {3, 5, 2}, {17, 9, 33}, {64, 64, 64}, {130, 70, 90}}) {
    const auto a = random_values(m * k, rng), b = random_values(k * p, rng), g = random_values(m * p, rng);
    std::vector<double> cs(m * p), co(m * p);
    serial::matmul(a.data(), b.data(), cs.data(), m, k, p);
    omp::matmul(a.data(), b.data(), co.data(), m, k, p);
    CHECK(cs == co);
    const auto ref = naive(a, b, m, k, p);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(cs[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    std::vector<double> gas(m * k, 0.5), gao(m * k, 0.5);
    serial::matmul_acc_a_bt(g.data(), b.data(), gas.data(), m, k, p);
    omp::matmul_acc_a_bt(g.data(), b.data(), gao.data(), m, k, p);
    CHECK(gas == gao);

    std::vector<double> gbs(k * p, -0.25), gbo(k * p, -0.25);
    serial::matmul_acc_at_b(a.data(), g.data(), gbs.data(), m, k, p);
    omp::matmul_acc_at_b(a.data(), g.data(), gbo.data(), m, k, p);
    CHECK(gbs == gbo);

    for (Exec e : {Exec::automatic, Exec::serial, Exec::parallel}) {
      std::vector<double> c(m * p);
      matmul(a.data(), b.data(), c.data(), m, k, p, e);
      CHECK(c == cs);
    }
  }
}

TEST_CASE("accumulating kernels match transposed products") {
  std::mt19937_64 rng(7);
  const std::size_t m = 4, k = 3, p = 5;
  const auto a = random_values(m * k, rng), b = random_values(k * p, rng), g = random_values(m * p, rng);
  std::vector<double> ga(m * k, 0.0), gb(k * p, 0.0);
  serial::matmul_acc_a_bt(g.data(), b.data(), ga.data(), m, k, p);
  serial::matmul_acc_at_b(a.data(), g.data(), gb.data(), m, k, p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += g[i * p + j] * b[l * p + j];
      CHECK(ga[i * k + l] == doctest::Approx(s).epsilon(1e-13));
    }
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + l] * g[i * p + j];
      CHECK(gb[l * p + j] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("thread count is positive") { CHECK(max_threads() >= 1); }
