// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace faststi {

enum class ScheduleKind { linear, cosine, quadratic };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Training-time noise schedule. Equations index t in {1..T}; storage is
// 0-based, so betas[i] is the math-level beta_{i+1} and the diffusion-step
// argument fed to the noise predictor is the array index i.
struct TrainingSchedule {
  ScheduleKind kind = ScheduleKind::quadratic;
  double beta_1 = 1e-4;
  double beta_T = 0.2;
  int T = 50;
  std::vector<double> betas;       // length T
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // running product of alphas

  // Noise level at a fractional step in [0, T-1]: sqrt(alpha_bar) is
  // interpolated linearly between adjacent integer steps (the interpolation
  // space the schedule alignment uses), then squared. Exact at integers.
  double abar_at(double t) const;
};

TrainingSchedule build_training_schedule(ScheduleKind kind, double beta_1,
                                         double beta_T, int T);

// Inference-time schedule aligned onto a training schedule. Arrays are stored
// in the order the user gives the xi values (ascending noise); sampling
// consumes them from the back.
struct AlignedSchedule {
  int T_acc = 0;
  std::vector<double> xis;
  std::vector<double> phis;       // 1 - xi
  std::vector<double> phi_bars;   // running product of phis
  std::vector<double> xi_tildes;  // posterior variances; xi_tilde[0] = 0
  std::vector<double> t_aligned;  // fractional training steps, one per xi
};

// Maps each cumulative level phi_bar_c onto a fractional training step t_c
// with sqrt(abar_{t+1}) <= sqrt(phi_bar_c) <= sqrt(abar_t). Throws when a
// phi_bar falls outside the training schedule's alpha_bar range.
AlignedSchedule build_aligned_schedule(const std::vector<double>& xis,
                                       const TrainingSchedule& training);

// JSON document {kind, beta_1, beta_T, T, xis}; xis is optional.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::quadratic;
  double beta_1 = 1e-4;
  double beta_T = 0.2;
  int T = 50;
  std::optional<std::vector<double>> xis;
};

std::string schedule_spec_to_json(const ScheduleSpec& spec);
ScheduleSpec schedule_spec_from_json(const std::string& text);

}  // namespace faststi
