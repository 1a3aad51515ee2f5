// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "faststi/data.hpp"
#include "faststi/model.hpp"
#include "faststi/schedule.hpp"

namespace faststi {

struct MaskSpec {
  enum class Strategy { block, point };
  Strategy strategy = Strategy::block;
  double point_rate = 0.25;
  double block_base_rate = 0.05;
  double failure_prob = 0.0015;  // per node per time step
  int min_steps = 12;
  int max_steps = 48;
};

MaskSpec::Strategy mask_strategy_from_string(const std::string& s);
std::string to_string(MaskSpec::Strategy s);

// Forward diffusion q(x_t | x_0): sqrt(abar) x0 + sqrt(1-abar) eps.
inline double forward_diffuse(double x0, double eps, double abar) {
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

// Draws evaluation/training targets from the observed entries. point: each
// observed entry independently with point_rate. block: base-rate point
// masking plus simulated sensor failures of uniform duration
// {min_steps..max_steps} starting with failure_prob per node per step.
// Returns (target_mask, conditioning_mask) with conditioning = observed and
// not target.
std::pair<Mask, Mask> make_targets(const Mask& observed_mask,
                                   const MaskSpec& spec, Rng& rng);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  int sequence_length = 24;
  double learning_rate = 1e-3;
  double weight_decay = 1e-6;
  int train_stride = 1;
  std::uint64_t seed = 0;
};

// Adam moments with decoupled weight decay.
struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void adamw_update(std::vector<double>& params, const std::vector<double>& grad,
                  AdamState& state, double lr, double weight_decay);

// One optimizer step over a batch of tasks: per-sample diffusion step and
// noise draws, forward/backward, mean gradient, AdamW update. Batch members
// run in parallel; the gradient reduction is serial in batch order, so
// results do not depend on the thread count. Returns the mean loss.
double train_step(const std::vector<ImputationTask>& batch, ModelParams& params,
                  const TrainingSchedule& schedule, AdamState& opt,
                  const TrainConfig& config, Rng& rng);

// Forward-only batch loss with fixed masks/noise (validation).
double validation_loss(const std::vector<ImputationTask>& batch,
                       const ModelParams& params,
                       const TrainingSchedule& schedule, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams best_params;    // lowest validation loss
  ModelParams final_params;
  std::vector<EpochRecord> curve;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Algorithm-1 style loop over windows of the (normalized) dataset: re-samples
// target masks per batch, validates on held-out windows with fixed masks each
// epoch, and tracks the best-validation parameters.
TrainResult train_loop(const Dataset& normalized, const WindowSet& windows,
                       const RoadGraph& graph, const ModelConfig& model_config,
                       const TrainConfig& config,
                       const TrainingSchedule& schedule, const MaskSpec& masks,
                       const EpochCallback& on_epoch = nullptr);

// Builds one task over a dataset window: targets drawn by the mask spec, the
// conditioner interpolated from the remaining observed entries.
ImputationTask make_window_task(const Dataset& normalized,
                                std::size_t start_row, int L,
                                const RoadGraph& graph, const MaskSpec& spec,
                                Rng& rng);

}  // namespace faststi
