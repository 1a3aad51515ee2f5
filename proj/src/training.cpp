// SPDX-License-Identifier: Apache-2.0
#include "faststi/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace faststi {

MaskSpec::Strategy mask_strategy_from_string(const std::string& s) {
  if (s == "block") return MaskSpec::Strategy::block;
  if (s == "point") return MaskSpec::Strategy::point;
  throw std::invalid_argument("unknown masking strategy: " + s);
}

std::string to_string(MaskSpec::Strategy s) {
  return s == MaskSpec::Strategy::block ? "block" : "point";
}

std::pair<Mask, Mask> make_targets(const Mask& observed_mask,
                                   const MaskSpec& spec, Rng& rng) {
  const std::size_t L = observed_mask.L, N = observed_mask.N;
  Mask target(L, N, false);

  if (spec.strategy == MaskSpec::Strategy::point) {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t n = 0; n < N; ++n)
        if (observed_mask.at(l, n) && rng.uniform() < spec.point_rate)
          target.at(l, n) = 1;
  } else {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t n = 0; n < N; ++n)
        if (observed_mask.at(l, n) && rng.uniform() < spec.block_base_rate)
          target.at(l, n) = 1;
    // simulated sensor failures: contiguous runs clipped at the window end
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t l = 0; l < L; ++l) {
        if (rng.uniform() >= spec.failure_prob) continue;
        const long dur = rng.uniform_int(spec.min_steps, spec.max_steps);
        for (std::size_t k = l; k < std::min(L, l + static_cast<std::size_t>(dur));
             ++k)
          if (observed_mask.at(k, n)) target.at(k, n) = 1;
      }
    }
  }

  Mask conditioning(L, N, false);
  for (std::size_t i = 0; i < L * N; ++i)
    conditioning.v[i] = observed_mask.v[i] && !target.v[i];
  return {std::move(target), std::move(conditioning)};
}

void adamw_update(std::vector<double>& params, const std::vector<double>& grad,
                  AdamState& state, double lr, double weight_decay) {
  if (params.size() != grad.size())
    throw std::invalid_argument("adamw: size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) +
                       weight_decay * params[i]);
  }
}

namespace {

struct SampleDraw {
  int t_index = 0;
  std::vector<double> eps;      // noise on target entries, 0 elsewhere
  std::vector<double> x_noisy;  // forward-diffused targets
};

SampleDraw draw_sample(const ImputationTask& task,
                       const TrainingSchedule& schedule, Rng& rng) {
  SampleDraw d;
  d.t_index = static_cast<int>(rng.uniform_int(0, schedule.T - 1));
  const double abar = schedule.alpha_bars[d.t_index];
  const std::size_t n = task.L() * task.N();
  d.eps.assign(n, 0.0);
  d.x_noisy.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!task.target_mask.v[i]) continue;
    d.eps[i] = rng.gaussian();
    d.x_noisy[i] = forward_diffuse(task.observed.data[i], d.eps[i], abar);
  }
  return d;
}

}  // namespace

double train_step(const std::vector<ImputationTask>& batch, ModelParams& params,
                  const TrainingSchedule& schedule, AdamState& opt,
                  const TrainConfig& config, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t B = batch.size();
  const std::size_t P = params.store.size();

  // all stochastic draws happen up front so the parallel section is pure
  std::vector<SampleDraw> draws;
  draws.reserve(B);
  for (const auto& task : batch) draws.push_back(draw_sample(task, schedule, rng));

  std::vector<std::vector<double>> grads(B);
  std::vector<double> losses(B, 0.0);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < B; ++b) {
    grads[b].assign(P, 0.0);
    losses[b] = training_loss_and_grad(batch[b], draws[b].x_noisy, draws[b].eps,
                                       static_cast<double>(draws[b].t_index),
                                       params, grads[b]);
  }

  // serial reduction in batch order keeps results thread-count independent
  std::vector<double> grad(P, 0.0);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    loss += losses[b];
    for (std::size_t i = 0; i < P; ++i) grad[i] += grads[b][i];
  }
  loss /= static_cast<double>(B);
  for (auto& g : grad) g /= static_cast<double>(B);
  if (!std::isfinite(loss))
    throw std::runtime_error("train_step: non-finite loss");

  adamw_update(params.store.values, grad, opt, config.learning_rate,
               config.weight_decay);
  return loss;
}

double validation_loss(const std::vector<ImputationTask>& batch,
                       const ModelParams& params,
                       const TrainingSchedule& schedule, std::uint64_t seed) {
  if (batch.empty()) return 0.0;
  Rng rng = Rng(seed).stream(0x7a15eedULL);
  std::vector<SampleDraw> draws;
  draws.reserve(batch.size());
  for (const auto& task : batch) draws.push_back(draw_sample(task, schedule, rng));

  std::vector<double> losses(batch.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < batch.size(); ++b)
    losses[b] = training_loss(batch[b], draws[b].x_noisy, draws[b].eps,
                              static_cast<double>(draws[b].t_index), params);
  double loss = 0.0;
  for (double l : losses) loss += l;
  return loss / static_cast<double>(batch.size());
}

ImputationTask make_window_task(const Dataset& normalized,
                                std::size_t start_row, int L,
                                const RoadGraph& graph, const MaskSpec& spec,
                                Rng& rng) {
  const std::size_t N = normalized.n_nodes();
  const auto Lz = static_cast<std::size_t>(L);
  ImputationTask task;
  task.observed = Tensor({Lz, N});
  task.observed_mask = Mask(Lz, N);
  for (std::size_t l = 0; l < Lz; ++l)
    for (std::size_t n = 0; n < N; ++n) {
      task.observed(l, n) = normalized.values(start_row + l, n);
      task.observed_mask.at(l, n) = normalized.observed.at(start_row + l, n);
    }
  auto [target, conditioning] = make_targets(task.observed_mask, spec, rng);
  task.target_mask = std::move(target);
  // the conditioner must not see target values: interpolate from the
  // conditioning entries only (global mean in normalized space is 0)
  task.conditioner = lin_interp(task.observed, conditioning, 0.0);
  task.graph = &graph;
  return task;
}

TrainResult train_loop(const Dataset& normalized, const WindowSet& windows,
                       const RoadGraph& graph, const ModelConfig& model_config,
                       const TrainConfig& config,
                       const TrainingSchedule& schedule, const MaskSpec& masks,
                       const EpochCallback& on_epoch) {
  TrainResult result;
  result.final_params = init_model_params(model_config, Rng(config.seed).next_u64());
  result.best_params = result.final_params;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  if (config.epochs == 0) return result;
  if (windows.train.empty()) throw std::invalid_argument("no training windows");

  Rng rng(config.seed);
  AdamState opt;

  // fixed validation tasks: same masks and noise draws every epoch
  std::vector<ImputationTask> val_tasks;
  {
    Rng vrng = rng.stream(0x7e57);
    for (const auto& w : windows.val)
      val_tasks.push_back(
          make_window_task(normalized, w.start, (int)w.length, graph, masks, vrng));
  }

  std::vector<std::size_t> order(windows.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // shuffle window order
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(rng.uniform_int(0, (long)i - 1))]);

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(config.batch_size)) {
      std::vector<ImputationTask> batch;
      const std::size_t end =
          std::min(order.size(), pos + static_cast<std::size_t>(config.batch_size));
      for (std::size_t b = pos; b < end; ++b) {
        const auto& w = windows.train[order[b]];
        batch.push_back(
            make_window_task(normalized, w.start, (int)w.length, graph, masks, rng));
      }
      epoch_loss += train_step(batch, result.final_params, schedule, opt, config, rng);
      ++n_batches;
    }
    epoch_loss /= std::max<std::size_t>(n_batches, 1);

    const double val =
        val_tasks.empty()
            ? epoch_loss
            : validation_loss(val_tasks, result.final_params, schedule,
                              config.seed ^ 0x5eedULL);

    EpochRecord rec{epoch, epoch_loss, val};
    result.curve.push_back(rec);
    if (val < result.best_val_loss) {
      result.best_val_loss = val;
      result.best_epoch = epoch;
      result.best_params = result.final_params;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace faststi
