// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "faststi/tensor.hpp"

namespace faststi {

// Sensor network with random-walk transition matrices for the diffusion
// graph convolution. All matrices are N x N row-major.
struct RoadGraph {
  int n_nodes = 0;
  std::vector<double> adjacency;
  std::vector<double> forward_transition;  // D_out^{-1} A
  std::vector<double> reverse_transition;  // D_in^{-1} A^T (or D_in^{-1} A, see below)
};

// w_ij = exp(-d_ij^2 / sigma^2) when >= threshold and i != j, else 0.
std::vector<double> gaussian_kernel_adjacency(const std::vector<double>& distances,
                                              int n, double sigma,
                                              double threshold);

// Row-normalized walk matrices; zero-degree rows stay zero. When
// reverse_transpose is false the reverse walk uses the in-degree normalized
// adjacency without transposition (the literal reading of the convolution
// formula, kept behind this switch).
std::pair<std::vector<double>, std::vector<double>> build_transitions(
    const std::vector<double>& adjacency, int n, bool reverse_transpose = true);

RoadGraph make_road_graph(std::vector<double> adjacency, int n,
                          bool reverse_transpose = true);

struct DiffGcnParams {
  int k_steps = 2;
  double rho = 0.1;
  // theta_fwd[k] and theta_rev[k] are [C_in x C_out] filters for hop k.
  std::vector<Tensor> theta_fwd;
  std::vector<Tensor> theta_rev;
};

// out = sum_{k=0}^{K} s_k (theta_k^1 (D_g A)^k + theta_k^2 (D_r A^T)^k) x,
// applied along the node axis of x [L,N,C]; s_0 = 1, s_k = rho for k >= 1.
// Transition powers are applied iteratively, never materialized.
Tensor diff_gcn(const Tensor& features, const RoadGraph& graph,
                const DiffGcnParams& params);

// Distances from CSV: either "from,to,distance" edge rows (node ids are
// 0-based indices) or a full N x N matrix, one row per line.
std::vector<double> load_distances_csv(const std::string& path, int n);
void save_matrix_csv(const std::string& path, const std::vector<double>& m, int n);

}  // namespace faststi
