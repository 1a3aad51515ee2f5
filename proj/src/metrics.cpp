// SPDX-License-Identifier: Apache-2.0
#include "faststi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace faststi {

namespace {

void check_eval_inputs(const Tensor& truth, const Tensor& imputed,
                       const Mask& eval_mask) {
  if (truth.shape != imputed.shape)
    throw std::invalid_argument("metrics: shape mismatch");
  if (truth.numel() != eval_mask.v.size())
    throw std::invalid_argument("metrics: mask size mismatch");
  if (!eval_mask.any()) throw std::invalid_argument("metrics: empty mask");
}

}  // namespace

double mae(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask) {
  check_eval_inputs(truth, imputed, eval_mask);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.numel(); ++i)
    if (eval_mask.v[i]) {
      s += std::abs(truth.data[i] - imputed.data[i]);
      ++n;
    }
  return s / static_cast<double>(n);
}

double mse(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask) {
  check_eval_inputs(truth, imputed, eval_mask);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.numel(); ++i)
    if (eval_mask.v[i]) {
      const double d = truth.data[i] - imputed.data[i];
      s += d * d;
      ++n;
    }
  return s / static_cast<double>(n);
}

double rmse(const Tensor& truth, const Tensor& imputed, const Mask& eval_mask) {
  return std::sqrt(mse(truth, imputed, eval_mask));
}

double quantile_loss(double q_value, double truth, double omega) {
  const double indicator = truth < q_value ? 1.0 : 0.0;
  return (omega - indicator) * (truth - q_value);
}

double empirical_quantile(std::vector<double> samples, double omega) {
  if (samples.empty()) throw std::invalid_argument("quantile of nothing");
  if (!(omega > 0.0 && omega < 1.0))
    throw std::invalid_argument("omega must lie in (0,1)");
  std::sort(samples.begin(), samples.end());
  const double h = (static_cast<double>(samples.size()) - 1.0) * omega;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

double crps_point(const std::vector<double>& samples, double truth) {
  if (samples.size() < 2)
    throw std::invalid_argument("crps needs at least 2 samples");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  for (int i = 1; i <= 19; ++i) {
    const double w = 0.05 * i;
    const double h = (static_cast<double>(sorted.size()) - 1.0) * w;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double q = sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
    acc += 2.0 * quantile_loss(q, truth, w);
  }
  return acc / 19.0;
}

std::vector<double> SampleEnsemble::point(std::size_t l, std::size_t n) const {
  std::vector<double> out(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) out[s] = at(s, l, n);
  return out;
}

Tensor SampleEnsemble::median() const {
  Tensor med({L, N});
  std::vector<double> buf(n_samples);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t s = 0; s < n_samples; ++s) buf[s] = at(s, l, n);
      std::sort(buf.begin(), buf.end());
      med(l, n) = n_samples % 2 == 1
                      ? buf[n_samples / 2]
                      : 0.5 * (buf[n_samples / 2 - 1] + buf[n_samples / 2]);
    }
  return med;
}

double crps_average(const SampleEnsemble& ensemble, const Tensor& truth,
                    const Mask& eval_mask) {
  if (ensemble.n_samples < 2)
    throw std::invalid_argument("crps needs at least 2 samples");
  if (!eval_mask.any()) throw std::invalid_argument("metrics: empty mask");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t l = 0; l < ensemble.L; ++l)
    for (std::size_t n = 0; n < ensemble.N; ++n) {
      if (!eval_mask.at(l, n)) continue;
      acc += crps_point(ensemble.point(l, n), truth(l, n));
      ++count;
    }
  return acc / static_cast<double>(count);
}

namespace {

EvalReport report_common(const Tensor& truth, const Tensor& imputed,
                         const Mask& eval_mask) {
  EvalReport r;
  r.mae = mae(truth, imputed, eval_mask);
  r.mse = mse(truth, imputed, eval_mask);
  r.rmse = std::sqrt(r.mse);
  r.n_eval = 0;
  for (auto b : eval_mask.v) r.n_eval += b;

  const std::size_t N = truth.dim(1);
  r.node_mae.assign(N, 0.0);
  r.node_rmse.assign(N, 0.0);
  std::vector<std::size_t> counts(N, 0);
  for (std::size_t l = 0; l < truth.dim(0); ++l)
    for (std::size_t n = 0; n < N; ++n) {
      if (!eval_mask.at(l, n)) continue;
      const double d = truth(l, n) - imputed(l, n);
      r.node_mae[n] += std::abs(d);
      r.node_rmse[n] += d * d;
      ++counts[n];
    }
  for (std::size_t n = 0; n < N; ++n) {
    if (counts[n] == 0) continue;
    r.node_mae[n] /= static_cast<double>(counts[n]);
    r.node_rmse[n] = std::sqrt(r.node_rmse[n] / static_cast<double>(counts[n]));
  }
  return r;
}

double mean_abs_truth(const Tensor& truth, const Mask& m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.numel(); ++i)
    if (m.v[i]) {
      s += std::abs(truth.data[i]);
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

EvalReport evaluate(const Tensor& truth, const SampleEnsemble& ensemble,
                    const Mask& eval_mask) {
  const Tensor med = ensemble.median();
  EvalReport r = report_common(truth, med, eval_mask);
  r.crps = crps_average(ensemble, truth, eval_mask);
  const double scale = mean_abs_truth(truth, eval_mask);
  r.crps_normalized = scale > 0.0 ? r.crps / scale : r.crps;
  return r;
}

EvalReport evaluate_point(const Tensor& truth, const Tensor& imputed,
                          const Mask& eval_mask) {
  return report_common(truth, imputed, eval_mask);
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mae"] = r.mae;
  j["mse"] = r.mse;
  j["rmse"] = r.rmse;
  j["crps"] = r.crps;
  j["crps_normalized"] = r.crps_normalized;
  j["n_eval"] = r.n_eval;
  j["node_mae"] = r.node_mae;
  j["node_rmse"] = r.node_rmse;
  return j.dump(2);
}

void eval_report_node_csv(const std::string& path, const EvalReport& r,
                          const std::vector<std::string>& node_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "node,mae,rmse\n";
  for (std::size_t n = 0; n < r.node_mae.size(); ++n)
    out << (n < node_ids.size() ? node_ids[n] : std::to_string(n)) << ','
        << r.node_mae[n] << ',' << r.node_rmse[n] << "\n";
}

}  // namespace faststi
