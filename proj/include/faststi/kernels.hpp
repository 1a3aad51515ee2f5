// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Dense primitives behind the model and graph operators. Each kernel has an
// OpenMP-parallel implementation and a plain serial reference (kern::ref) used
// for testing and benchmarking. Parallel loops run over independent output
// rows with serial inner reductions, so results match the reference exactly
// for any thread count.
namespace faststi::kern {

void set_parallel(bool on);
bool parallel();

// C[m x n] = A[m x k] * B[k x n]; accumulates into C when acc.
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);
// C[m x n] = A[m x k] * B^T with B stored [n x k].
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);
// C[m x n] = A^T * B with A stored [k x m].
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);

// Mixes node features with a transition matrix: Y[l,i,c] = sum_j P[i,j] X[l,j,c]
// for X,Y of shape [L,N,C]; uses P^T instead when transpose.
void node_mix(std::size_t L, std::size_t N, std::size_t C, const double* P,
              const double* X, double* Y, bool acc = false,
              bool transpose = false);

// In-place row-wise softmax over an [rows x n] matrix.
void softmax_rows(std::size_t rows, std::size_t n, double* X);

namespace ref {
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const double* A,
               const double* B, double* C, bool acc = false);
void node_mix(std::size_t L, std::size_t N, std::size_t C, const double* P,
              const double* X, double* Y, bool acc = false,
              bool transpose = false);
void softmax_rows(std::size_t rows, std::size_t n, double* X);
}  // namespace ref

}  // namespace faststi::kern
