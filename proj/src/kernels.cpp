// SPDX-License-Identifier: Apache-2.0
#include "faststi/kernels.hpp"

#include <atomic>
#include <cmath>

namespace faststi::kern {

namespace {
std::atomic<bool> g_parallel{true};
// below this many fused multiply-adds the fork/join overhead dominates
constexpr std::size_t kMinWork = 16 * 1024;
}  // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel() { return g_parallel.load(); }

namespace ref {

void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!acc)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * n + j] = acc ? C[i * n + j] + s : s;
    }
  }
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!acc)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[p * m + i];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void node_mix(std::size_t L, std::size_t N, std::size_t C, const double* P,
              const double* X, double* Y, bool acc, bool transpose) {
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < N; ++i) {
      double* yrow = Y + (l * N + i) * C;
      if (!acc)
        for (std::size_t c = 0; c < C; ++c) yrow[c] = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        const double p = transpose ? P[j * N + i] : P[i * N + j];
        if (p == 0.0) continue;
        const double* xrow = X + (l * N + j) * C;
        for (std::size_t c = 0; c < C; ++c) yrow[c] += p * xrow[c];
      }
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, double* X) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = X + r * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

}  // namespace ref

void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  const bool par = g_parallel.load() && m * n * k >= kMinWork && m > 1;
  if (!par) return ref::matmul_nn(m, n, k, A, B, C, acc);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i)
    ref::matmul_nn(1, n, k, A + i * k, B, C + i * n, acc);
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  const bool par = g_parallel.load() && m * n * k >= kMinWork && m > 1;
  if (!par) return ref::matmul_nt(m, n, k, A, B, C, acc);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i)
    ref::matmul_nt(1, n, k, A + i * k, B, C + i * n, acc);
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc) {
  const bool par = g_parallel.load() && m * n * k >= kMinWork && m > 1;
  if (!par) return ref::matmul_tn(m, n, k, A, B, C, acc);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!acc)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[p * m + i];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void node_mix(std::size_t L, std::size_t N, std::size_t C, const double* P,
              const double* X, double* Y, bool acc, bool transpose) {
  const bool par = g_parallel.load() && L * N * N * C >= kMinWork && L > 1;
  if (!par) return ref::node_mix(L, N, C, P, X, Y, acc, transpose);
#pragma omp parallel for schedule(static)
  for (std::size_t l = 0; l < L; ++l)
    ref::node_mix(1, N, C, P, X + l * N * C, Y + l * N * C, acc, transpose);
}

void softmax_rows(std::size_t rows, std::size_t n, double* X) {
  const bool par = g_parallel.load() && rows * n >= kMinWork && rows > 1;
  if (!par) return ref::softmax_rows(rows, n, X);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) ref::softmax_rows(1, n, X + r * n);
}

}  // namespace faststi::kern
