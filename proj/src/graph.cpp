// SPDX-License-Identifier: Apache-2.0
#include "faststi/graph.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "faststi/kernels.hpp"

namespace faststi {

std::vector<double> gaussian_kernel_adjacency(const std::vector<double>& distances,
                                              int n, double sigma,
                                              double threshold) {
  if (sigma <= 0.0) throw std::invalid_argument("sigma must be positive");
  if (distances.size() != static_cast<std::size_t>(n) * n)
    throw std::invalid_argument("distance matrix size mismatch");
  std::vector<double> adj(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances[i * n + j];
      if (!std::isfinite(d)) continue;
      const double w = std::exp(-(d * d) / (sigma * sigma));
      if (w >= threshold) adj[i * n + j] = w;
    }
  }
  return adj;
}

std::pair<std::vector<double>, std::vector<double>> build_transitions(
    const std::vector<double>& adjacency, int n, bool reverse_transpose) {
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  if (adjacency.size() != nn) throw std::invalid_argument("adjacency size mismatch");
  std::vector<double> fwd(nn, 0.0), rev(nn, 0.0);
  for (int i = 0; i < n; ++i) {
    double dout = 0.0;
    for (int j = 0; j < n; ++j) dout += adjacency[i * n + j];
    if (dout > 0.0)
      for (int j = 0; j < n; ++j) fwd[i * n + j] = adjacency[i * n + j] / dout;
  }
  for (int i = 0; i < n; ++i) {
    double din = 0.0;
    for (int j = 0; j < n; ++j) din += adjacency[j * n + i];
    if (din > 0.0) {
      for (int j = 0; j < n; ++j) {
        const double a = reverse_transpose ? adjacency[j * n + i] : adjacency[i * n + j];
        rev[i * n + j] = a / din;
      }
    }
  }
  return {std::move(fwd), std::move(rev)};
}

RoadGraph make_road_graph(std::vector<double> adjacency, int n,
                          bool reverse_transpose) {
  RoadGraph g;
  g.n_nodes = n;
  auto [fwd, rev] = build_transitions(adjacency, n, reverse_transpose);
  g.adjacency = std::move(adjacency);
  g.forward_transition = std::move(fwd);
  g.reverse_transition = std::move(rev);
  return g;
}

Tensor diff_gcn(const Tensor& features, const RoadGraph& graph,
                const DiffGcnParams& params) {
  if (features.rank() != 3) throw std::invalid_argument("features must be L x N x C");
  const std::size_t L = features.dim(0), N = features.dim(1), C = features.dim(2);
  if (N != static_cast<std::size_t>(graph.n_nodes))
    throw std::invalid_argument("node axis does not match graph");
  const int K = params.k_steps;
  if (K < 0) throw std::invalid_argument("k_steps must be >= 0");
  if (params.theta_fwd.size() != static_cast<std::size_t>(K + 1) ||
      params.theta_rev.size() != static_cast<std::size_t>(K + 1))
    throw std::invalid_argument("theta must have K+1 hop filters");
  const std::size_t Cout = params.theta_fwd[0].dim(1);
  for (int k = 0; k <= K; ++k)
    if (params.theta_fwd[k].dim(0) != C || params.theta_rev[k].dim(0) != C ||
        params.theta_fwd[k].dim(1) != Cout || params.theta_rev[k].dim(1) != Cout)
      throw std::invalid_argument("theta filter shape mismatch");

  Tensor out({L, N, Cout});
  const std::size_t rows = L * N;
  Tensor hop_f = features, hop_r = features, tmp({L, N, C});

  for (int k = 0; k <= K; ++k) {
    if (k > 0) {
      kern::node_mix(L, N, C, graph.forward_transition.data(), hop_f.data.data(),
                     tmp.data.data());
      std::swap(hop_f.data, tmp.data);
      kern::node_mix(L, N, C, graph.reverse_transition.data(), hop_r.data.data(),
                     tmp.data.data());
      std::swap(hop_r.data, tmp.data);
    }
    const double s = k == 0 ? 1.0 : params.rho;
    if (s == 0.0) continue;
    Tensor term({L, N, Cout});
    kern::matmul_nn(rows, Cout, C, hop_f.data.data(),
                    params.theta_fwd[k].data.data(), term.data.data());
    kern::matmul_nn(rows, Cout, C, hop_r.data.data(),
                    params.theta_rev[k].data.data(), term.data.data(), true);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += s * term.data[i];
  }
  return out;
}

std::vector<double> load_distances_csv(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> d(static_cast<std::size_t>(n) * n,
                        std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) d[i * n + i] = 0.0;

  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw std::runtime_error("empty distances file: " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
  };

  std::size_t start = 0;
  bool edge_list = false;
  {
    auto f = split(rows[0]);
    if (f.size() == 3 && (f[0] == "from" || f[0] == "source")) {
      edge_list = true;
      start = 1;
    } else if (f.size() == 3 && static_cast<int>(rows.size()) != n) {
      edge_list = true;
    }
  }

  if (edge_list) {
    for (std::size_t r = start; r < rows.size(); ++r) {
      auto f = split(rows[r]);
      if (f.size() != 3) throw std::runtime_error("bad edge row: " + rows[r]);
      const int i = std::stoi(f[0]), j = std::stoi(f[1]);
      if (i < 0 || i >= n || j < 0 || j >= n)
        throw std::runtime_error("edge node out of range: " + rows[r]);
      d[i * n + j] = std::stod(f[2]);
    }
  } else {
    if (static_cast<int>(rows.size()) != n)
      throw std::runtime_error("distance matrix row count mismatch");
    for (int i = 0; i < n; ++i) {
      auto f = split(rows[i]);
      if (static_cast<int>(f.size()) != n)
        throw std::runtime_error("distance matrix width mismatch");
      for (int j = 0; j < n; ++j) d[i * n + j] = std::stod(f[j]);
    }
  }
  return d;
}

void save_matrix_csv(const std::string& path, const std::vector<double>& m, int n) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[32];
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof(buf), "%.12g", m[i * n + j]);
      out << buf << (j + 1 < n ? "," : "");
    }
    out << "\n";
  }
}

}  // namespace faststi
