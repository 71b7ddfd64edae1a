// SPDX-License-Identifier: Apache-2.0
#include "temf/kernels.hpp"

#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace temf::kernels {

namespace {

// Row i of c = a * b. Loop order i-k-j keeps the innermost loop contiguous.
inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                       std::size_t p) {
  double* crow = c + i * p;
  std::memset(crow, 0, p * sizeof(double));
  const double* arow = a + i * k;
  for (std::size_t r = 0; r < k; ++r) {
    const double av = arow[r];
    const double* brow = b + r * p;
    for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
  }
}

// Row i of ga += g * b^T.
inline void a_bt_row(const double* g, const double* b, double* ga, std::size_t i, std::size_t k,
                     std::size_t p) {
  const double* grow = g + i * p;
  double* out = ga + i * k;
  for (std::size_t r = 0; r < k; ++r) {
    const double* brow = b + r * p;
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
    out[r] += acc;
  }
}

// Row r of gb += a^T * g.
inline void at_b_row(const double* a, const double* g, double* gb, std::size_t r, std::size_t m,
                     std::size_t k, std::size_t p) {
  double* out = gb + r * p;
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + r];
    if (av == 0.0) continue;
    const double* grow = g + i * p;
    for (std::size_t j = 0; j < p; ++j) out[j] += av * grow[j];
  }
}

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

bool use_parallel(Exec exec, std::size_t work) {
  switch (exec) {
    case Exec::serial:
      return false;
    case Exec::parallel:
      return true;
    case Exec::automatic:
      break;
  }
  return work >= kParallelThreshold && !in_parallel() && max_threads() > 1;
}

}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, p);
}

void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) a_bt_row(g, b, ga, i, k, p);
}

void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p) {
  for (std::size_t r = 0; r < k; ++r) at_b_row(a, g, gb, r, m, k, p);
}

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i), k, p);
}

void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) a_bt_row(g, b, ga, static_cast<std::size_t>(i), k, p);
}

void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p) {
  const auto rows = static_cast<long long>(k);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < rows; ++r) at_b_row(a, g, gb, static_cast<std::size_t>(r), m, k, p);
}

}  // namespace omp

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p,
            Exec exec) {
  if (use_parallel(exec, m * k * p)) {
    omp::matmul(a, b, c, m, k, p);
  } else {
    serial::matmul(a, b, c, m, k, p);
  }
}

void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p, Exec exec) {
  if (use_parallel(exec, m * k * p)) {
    omp::matmul_acc_a_bt(g, b, ga, m, k, p);
  } else {
    serial::matmul_acc_a_bt(g, b, ga, m, k, p);
  }
}

void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p, Exec exec) {
  if (use_parallel(exec, m * k * p)) {
    omp::matmul_acc_at_b(a, g, gb, m, k, p);
  } else {
    serial::matmul_acc_at_b(a, g, gb, m, k, p);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace temf::kernels
