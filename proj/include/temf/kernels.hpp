// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense matrix kernels behind the tape's matmul forward and backward rules.
//
// Each kernel has a serial reference and an OpenMP version. Both share the
// same per-row inner loop, so the parallel result is bit-identical to the
// serial one: threads split output rows, never a reduction.

#include <cstddef>

namespace temf::kernels {

enum class Exec { automatic, serial, parallel };

/// Output-work threshold (m*k*p multiply-adds) above which `automatic`
/// picks the OpenMP path. Inside an active parallel region the serial path
/// is always used.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

namespace serial {
/// c[m x p] = a[m x k] * b[k x p]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p);
/// ga[m x k] += g[m x p] * b[k x p]^T
void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p);
/// gb[k x p] += a[m x k]^T * g[m x p]
void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p);
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p);
void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p);
void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p);
}  // namespace omp

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p,
            Exec exec = Exec::automatic);
void matmul_acc_a_bt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
                     std::size_t p, Exec exec = Exec::automatic);
void matmul_acc_at_b(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
                     std::size_t p, Exec exec = Exec::automatic);

/// Number of OpenMP threads a parallel kernel would use (1 without OpenMP).
int max_threads();

}  // namespace temf::kernels
