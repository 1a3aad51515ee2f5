// SPDX-License-Identifier: Apache-2.0
#include "faststi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "faststi/graph.hpp"
#include "faststi/rng.hpp"
#include "json.hpp"

namespace faststi {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

Dataset load_csv_dataset(const std::string& values_path,
                         const std::string& distances_path,
                         double missing_marker) {
  std::ifstream in(values_path);
  if (!in) throw std::runtime_error("cannot open " + values_path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty values file: " + values_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp")
    throw std::runtime_error("values header must start with 'timestamp'");

  Dataset ds;
  ds.node_ids.assign(header.begin() + 1, header.end());
  const std::size_t N = ds.node_ids.size();

  std::vector<double> flat;
  std::vector<std::uint8_t> obs;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != N + 1)
      throw std::runtime_error("values row width mismatch: " + line);
    ds.timestamps.push_back(std::stoll(f[0]));
    for (std::size_t j = 0; j < N; ++j) {
      const double v = std::stod(f[1 + j]);
      const bool missing = !std::isfinite(v) || v == missing_marker;
      flat.push_back(missing ? 0.0 : v);
      obs.push_back(missing ? 0 : 1);
    }
  }
  const std::size_t rows = ds.timestamps.size();
  if (rows == 0) throw std::runtime_error("no data rows in " + values_path);
  for (std::size_t i = 1; i < rows; ++i) {
    if (ds.timestamps[i] <= ds.timestamps[i - 1])
      throw std::runtime_error("timestamps must be strictly increasing");
    if (i >= 2 && ds.timestamps[i] - ds.timestamps[i - 1] !=
                      ds.timestamps[1] - ds.timestamps[0])
      throw std::runtime_error("timestamps must have a constant interval");
  }

  ds.values = Tensor::from({rows, N}, std::move(flat));
  ds.observed = Mask(rows, N);
  ds.observed.v = std::move(obs);
  ds.distances = load_distances_csv(distances_path, static_cast<int>(N));
  return ds;
}

void save_values_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "timestamp";
  for (const auto& id : ds.node_ids) out << ',' << id;
  out << "\n";
  char buf[32];
  const std::size_t N = ds.n_nodes();
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    out << ds.timestamps[i];
    for (std::size_t j = 0; j < N; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    ds.observed.at(i, j) ? ds.values(i, j) : std::nan(""));
      out << ',' << buf;
    }
    out << "\n";
  }
}

WindowSet split_and_window(std::size_t rows, int L, double train_ratio,
                           double val_ratio, double test_ratio,
                           int train_stride) {
  if (L < 1 || static_cast<std::size_t>(L) > rows)
    throw std::invalid_argument("window length exceeds the dataset");
  if (train_stride < 1) throw std::invalid_argument("stride must be >= 1");
  const double sum = train_ratio + val_ratio + test_ratio;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  WindowSet ws;
  ws.train_rows = static_cast<std::size_t>(rows * train_ratio);
  ws.val_rows = static_cast<std::size_t>(rows * val_ratio);
  ws.test_rows = rows - ws.train_rows - ws.val_rows;

  const auto Lz = static_cast<std::size_t>(L);
  for (std::size_t s = 0; s + Lz <= ws.train_rows;
       s += static_cast<std::size_t>(train_stride))
    ws.train.push_back({s, Lz});
  for (std::size_t s = ws.train_rows; s + Lz <= ws.train_rows + ws.val_rows;
       s += Lz)
    ws.val.push_back({s, Lz});
  for (std::size_t s = ws.train_rows + ws.val_rows; s + Lz <= rows; s += Lz)
    ws.test.push_back({s, Lz});
  return ws;
}

Dataset synth_generate(int n_nodes, int n_steps, std::uint64_t seed,
                       double coupling, double noise_frac) {
  if (n_nodes < 2) throw std::invalid_argument("synth needs >= 2 nodes");
  if (n_steps < 1) throw std::invalid_argument("synth needs >= 1 step");
  Rng rng(seed);

  // random geometric layout in the unit square
  std::vector<double> px(n_nodes), py(n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    px[i] = rng.uniform();
    py[i] = rng.uniform();
  }
  std::vector<double> dist(n_nodes * n_nodes, 0.0);
  double dsum = 0.0, dsq = 0.0;
  int cnt = 0;
  for (int i = 0; i < n_nodes; ++i)
    for (int j = 0; j < n_nodes; ++j) {
      const double d = std::hypot(px[i] - px[j], py[i] - py[j]);
      dist[i * n_nodes + j] = d;
      if (i != j) {
        dsum += d;
        dsq += d * d;
        ++cnt;
      }
    }
  const double dmean = dsum / cnt;
  const double sigma = std::sqrt(std::max(dsq / cnt - dmean * dmean, 1e-12));

  // loosen the kernel threshold until the graph is connected
  std::vector<double> adj;
  double threshold = 0.5;
  for (int attempt = 0; attempt < 32; ++attempt) {
    adj = gaussian_kernel_adjacency(dist, n_nodes, sigma, threshold);
    std::vector<int> seen(n_nodes, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n_nodes; ++v)
        if (!seen[v] && adj[u * n_nodes + v] > 0.0) {
          seen[v] = 1;
          ++reached;
          stack.push_back(v);
        }
    }
    if (reached == n_nodes) break;
    threshold *= 0.5;
  }

  const auto graph = make_road_graph(adj, n_nodes);

  // node signals: three sinusoids with node-specific phases. The harmonic
  // bases are shared across the network and each node jitters them, the way
  // nearby sensors see the same waves slightly shifted; neighbors therefore
  // carry real information about a blocked node.
  const double periods[3] = {160.0, 40.0, 11.0};
  const double amps[3] = {1.0, 0.6, 0.35};
  double base_phase[3];
  for (double& b : base_phase) b = 2.0 * M_PI * rng.uniform();
  std::vector<double> phase(n_nodes * 3);
  for (int i = 0; i < n_nodes; ++i)
    for (int k = 0; k < 3; ++k)
      phase[i * 3 + k] = base_phase[k] + 0.6 * (2.0 * rng.uniform() - 1.0);
  std::vector<double> level(n_nodes);
  for (auto& b : level) b = 3.0 + 0.5 * (2.0 * rng.uniform() - 1.0);

  double amp_total = 0.0;
  for (double a : amps) amp_total += a;
  const double noise_sd = noise_frac * amp_total;

  auto base = [&](int node, int t) {
    double s = level[node];
    for (int k = 0; k < 3; ++k)
      s += amps[k] * std::sin(2.0 * M_PI * t / periods[k] + phase[node * 3 + k]);
    return s;
  };

  Dataset ds;
  ds.values = Tensor({static_cast<std::size_t>(n_steps),
                      static_cast<std::size_t>(n_nodes)});
  ds.observed = Mask(n_steps, n_nodes, true);
  ds.distances = dist;
  for (int i = 0; i < n_nodes; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "n%03d", i);
    ds.node_ids.emplace_back(buf);
  }
  ds.timestamps.resize(n_steps);
  for (int t = 0; t < n_steps; ++t)
    ds.timestamps[t] = 1600000000LL + 300LL * t;

  std::vector<double> prev(n_nodes, 0.0), cur(n_nodes, 0.0);
  for (int t = 0; t < n_steps; ++t) {
    for (int i = 0; i < n_nodes; ++i) {
      double x = base(i, t);
      if (t > 0 && coupling != 0.0) {
        double mix = 0.0;
        for (int j = 0; j < n_nodes; ++j)
          mix += graph.forward_transition[i * n_nodes + j] *
                 (prev[j] - level[j]);
        x += coupling * mix;
      }
      cur[i] = x;
      ds.values(t, i) = x + (noise_sd > 0.0 ? noise_sd * rng.gaussian() : 0.0);
    }
    std::swap(prev, cur);
  }
  return ds;
}

Normalizer Normalizer::fit(const Dataset& ds, std::size_t train_rows) {
  const std::size_t N = ds.n_nodes();
  Normalizer nz;
  nz.mean.assign(N, 0.0);
  nz.stdev.assign(N, 1.0);
  for (std::size_t j = 0; j < N; ++j) {
    double sum = 0.0, sq = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < std::min(train_rows, ds.rows()); ++i) {
      if (!ds.observed.at(i, j)) continue;
      sum += ds.values(i, j);
      sq += ds.values(i, j) * ds.values(i, j);
      ++cnt;
    }
    if (cnt > 0) {
      nz.mean[j] = sum / cnt;
      const double var = sq / cnt - nz.mean[j] * nz.mean[j];
      nz.stdev[j] = std::sqrt(std::max(var, 1e-12));
    }
  }
  return nz;
}

void Normalizer::apply(Tensor& values) const {
  const std::size_t N = stdev.size();
  for (std::size_t i = 0; i < values.dim(0); ++i)
    for (std::size_t j = 0; j < N; ++j)
      values(i, j) = (values(i, j) - mean[j]) / stdev[j];
}

void Normalizer::invert(Tensor& values) const {
  const std::size_t N = stdev.size();
  for (std::size_t i = 0; i < values.dim(0); ++i)
    for (std::size_t j = 0; j < N; ++j)
      values(i, j) = values(i, j) * stdev[j] + mean[j];
}

std::string Normalizer::to_json() const {
  nlohmann::json j;
  j["mean"] = mean;
  j["std"] = stdev;
  return j.dump(2);
}

Normalizer Normalizer::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Normalizer nz;
  nz.mean = j.at("mean").get<std::vector<double>>();
  nz.stdev = j.at("std").get<std::vector<double>>();
  if (nz.mean.size() != nz.stdev.size())
    throw std::invalid_argument("normalizer mean/std size mismatch");
  return nz;
}

}  // namespace faststi
