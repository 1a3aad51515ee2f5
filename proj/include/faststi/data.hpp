// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "faststi/tensor.hpp"

namespace faststi {

struct Dataset {
  Tensor values;   // [rows, N]
  Mask observed;   // false where natively missing
  std::vector<std::string> node_ids;
  std::vector<long long> timestamps;  // epoch seconds, constant interval
  std::vector<double> distances;      // N x N

  std::size_t rows() const { return values.dim(0); }
  std::size_t n_nodes() const { return values.dim(1); }
};

// Values CSV: header "timestamp,<id>,..." then one row per timestamp.
// Entries equal to missing_marker (or nan) are flagged as natively missing.
Dataset load_csv_dataset(const std::string& values_path,
                         const std::string& distances_path,
                         double missing_marker = 0.0);
void save_values_csv(const std::string& path, const Dataset& ds);

struct WindowSet {
  struct Window {
    std::size_t start = 0;
    std::size_t length = 0;
  };
  std::vector<Window> train, val, test;
  std::size_t train_rows = 0, val_rows = 0, test_rows = 0;
};

// Chronological split; stride-1 (or stride-n) overlapping windows in train,
// non-overlapping length-L windows in val/test. Windows never cross split
// boundaries.
WindowSet split_and_window(std::size_t rows, int L, double train_ratio = 0.7,
                           double val_ratio = 0.1, double test_ratio = 0.2,
                           int train_stride = 1);

// Synthetic spatiotemporal dataset: random geometric sensor graph, per-node
// sums of three sinusoids with node-specific phases, a graph-diffusion
// coupling term mixing neighbors' previous values, and Gaussian observation
// noise scaled to the signal amplitude. Fully observed.
Dataset synth_generate(int n_nodes, int n_steps, std::uint64_t seed,
                       double coupling = 0.3, double noise_frac = 0.05);

// Per-node z-score normalization fitted on the training split only.
struct Normalizer {
  std::vector<double> mean, stdev;

  static Normalizer fit(const Dataset& ds, std::size_t train_rows);
  void apply(Tensor& values) const;
  void invert(Tensor& values) const;
  double apply_one(double v, std::size_t node) const {
    return (v - mean[node]) / stdev[node];
  }
  double invert_one(double v, std::size_t node) const {
    return v * stdev[node] + mean[node];
  }

  std::string to_json() const;
  static Normalizer from_json(const std::string& text);
};

}  // namespace faststi
