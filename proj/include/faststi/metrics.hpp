// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "faststi/tensor.hpp"

namespace faststi {

// Deterministic errors over mask-true entries.
double mae(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask);
double mse(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask);
double rmse(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask);

// Pinball loss Lambda_w(q, x) = (w - 1{x < q})(x - q).
double quantile_loss(double q_value, double truth, double omega);

// Empirical omega-quantile with linear interpolation between order
// statistics (the "type 7" rule). samples need not be sorted.
double empirical_quantile(std::vector<double> samples, double omega);

// 19-level approximation of the continuous ranked probability score:
// sum_{i=1..19} 2 Lambda_{0.05i}(q_{0.05i}, truth) / 19.
double crps_point(const std::vector<double>& samples, double truth);

// Probabilistic imputations: n_samples trajectories over an L x N window.
struct SampleEnsemble {
  std::size_t n_samples = 0, L = 0, N = 0;
  std::vector<double> values;  // [n_samples, L, N]
  Mask target;

  double at(std::size_t s, std::size_t l, std::size_t n) const {
    return values[(s * L + l) * N + n];
  }
  // per-point sample vector at (l, n)
  std::vector<double> point(std::size_t l, std::size_t n) const;
  // elementwise median across samples (deterministic metrics use it)
  Tensor median() const;
};

// Mean crps_point over mask-true entries.
double crps_average(const SampleEnsemble& ensemble, const Tensor& truth,
                    const Mask& eval_mask);

struct EvalReport {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double crps = 0.0;             // as defined, unnormalized
  double crps_normalized = 0.0;  // divided by mean |truth| over the mask
  std::size_t n_eval = 0;
  std::vector<double> node_mae;  // per-node breakdown
  std::vector<double> node_rmse;
};

EvalReport evaluate(const Tensor& truth, const SampleEnsemble& ensemble,
                    const Mask& eval_mask);
// Deterministic variant for a single imputation (no CRPS).
EvalReport evaluate_point(const Tensor& truth, const Tensor& imputed,
                          const Mask& eval_mask);

std::string eval_report_to_json(const EvalReport& r);
void eval_report_node_csv(const std::string& path, const EvalReport& r,
                          const std::vector<std::string>& node_ids);

}  // namespace faststi
