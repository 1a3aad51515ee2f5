// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "faststi/rng.hpp"
#include "faststi/schedule.hpp"
#include "faststi/task.hpp"

namespace faststi {

// Noise predictor eps_theta(x_t, chi, A, t). Implementations must be
// deterministic and accept fractional t (aligned schedules produce them).
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::vector<double> eval(const std::vector<double>& x,
                                   const Tensor* chi, const RoadGraph* graph,
                                   double t) const = 0;
};

// Ring buffer of the most recent predicted-noise arrays, newest first.
// PLMS2 consumes exactly 1 entry, PLMS4 exactly 3; too little history is an
// error, never a silent fallback.
class SolverHistory {
 public:
  void push(std::vector<double> e);
  std::size_t size() const { return size_; }
  // k = 0 is the newest entry.
  const std::vector<double>& newest(std::size_t k) const;

 private:
  std::vector<double> buf_[3];
  std::size_t head_ = 0, size_ = 0;
};

// Shared transfer part of all pseudo-numerical methods (the DDIM update):
//   nu(x, eps) = sqrt(abar_prev/abar_t) x
//              - (abar_prev-abar_t) / (sqrt(abar_t) (sqrt((1-abar_prev) abar_t)
//                + sqrt((1-abar_t) abar_prev))) eps
std::vector<double> transfer(const std::vector<double>& x,
                             const std::vector<double>& eps, double abar_t,
                             double abar_prev);

// Gradient parts (Adams-Bashforth combinations of past noise predictions).
std::vector<double> plms2_grad(const SolverHistory& history,
                               const std::vector<double>& e_t);
std::vector<double> plms4_grad(const SolverHistory& history,
                               const std::vector<double>& e_t);

struct StepResult {
  std::vector<double> x;
  std::vector<double> e_prime;  // combined noise, also the raw e1 for seeding
  std::vector<double> e_raw;
};

// 2nd-order pseudo Heun step.
StepResult ph2_step(const std::vector<double>& x, const NoisePredictor& pred,
                    const Tensor* chi, const RoadGraph* graph, double abar_t,
                    double abar_prev, double t, double t_prev);

// 4th-order pseudo Runge-Kutta step; abar_mid/t_mid sit halfway in the
// sqrt(abar)-interpolation space.
StepResult prk4_step(const std::vector<double>& x, const NoisePredictor& pred,
                     const Tensor* chi, const RoadGraph* graph, double abar_t,
                     double abar_mid, double abar_prev, double t, double t_mid,
                     double t_prev);

// One deterministic DDIM step; algebraically identical to the transfer part
// applied to the predictor output, and implemented that way.
std::vector<double> ddim_step(const std::vector<double>& x,
                              const NoisePredictor& pred, const Tensor* chi,
                              const RoadGraph* graph, double abar_t,
                              double abar_prev, double t);

// One ancestral DDPM step at integer step t in {1..T} (math indexing).
// No noise is added at t = 1.
std::vector<double> ddpm_step(const std::vector<double>& x,
                              const NoisePredictor& pred, const Tensor* chi,
                              const RoadGraph* graph,
                              const TrainingSchedule& schedule, int t, Rng& rng);

enum class SamplerMethod { ddpm, ddim, fastSTI2, fastSTI4 };
std::string to_string(SamplerMethod m);
SamplerMethod sampler_method_from_string(const std::string& s);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::fastSTI4;
  int steps = 50;
  std::optional<AlignedSchedule> aligned;  // when set, steps must equal T_acc
  int warmup_steps = -1;                   // -1 = method default (3 / 2)
  // What seeds the linear-multistep history during warmup: the raw first
  // noise prediction of each warmup step (default; preserves the multistep
  // order) or the combined e' the warmup step returns.
  enum class HistorySeed { raw, combined };
  HistorySeed history_seed = HistorySeed::raw;
  std::uint64_t seed = 0;
  std::ostream* trace = nullptr;  // optional per-step CSV trace
};

// One rung of the sampling ladder: a noise level and the (possibly
// fractional) diffusion step the predictor sees for it. Ladders run from the
// noisiest rung down to a terminal rung at level 1 (clean data).
struct Rung {
  double t = 0.0;
  double level = 0.0;
};

// Integer-strided ladder over the training schedule, or the aligned ladder
// when an AlignedSchedule is active. Includes the terminal rung.
std::vector<Rung> make_ladder(const TrainingSchedule& training,
                              const SamplerConfig& config);

using LevelCurve = std::function<double(double)>;
using StepHook =
    std::function<void(int step, const Rung& reached, std::vector<double>& x,
                       const std::vector<double>& e_prime)>;

struct LadderStats {
  long predictor_evals = 0;
};

// Core deterministic sampler: walks x down the rung ladder with the method's
// warmup/multistep recipe. `curve` supplies noise levels between rungs (PRK4
// midpoints). The hook runs after every outer step. Exposed for the solver
// order tests, which drive it with analytic schedules.
std::vector<double> run_pseudo_ladder(SamplerMethod method,
                                      const std::vector<double>& x0,
                                      const std::vector<Rung>& rungs,
                                      const LevelCurve& curve,
                                      const NoisePredictor& pred,
                                      const Tensor* chi, const RoadGraph* graph,
                                      int warmup_steps,
                                      SamplerConfig::HistorySeed seed_mode,
                                      const StepHook& hook = nullptr,
                                      LadderStats* stats = nullptr);

// Stochastic ancestral sampler over the same ladder (reference DDPM and the
// diagnostic accelerated variant).
std::vector<double> run_ddpm_ladder(const std::vector<double>& x0,
                                    const std::vector<Rung>& rungs,
                                    const NoisePredictor& pred,
                                    const Tensor* chi, const RoadGraph* graph,
                                    Rng& rng, const StepHook& hook = nullptr,
                                    LadderStats* stats = nullptr);

struct SampleStats {
  long predictor_evals = 0;
  int steps = 0;
};

// Full conditional imputation: target entries start as standard normal noise,
// conditioning entries are re-clamped to their forward-diffused values at
// every rung (one shared noise draw per trajectory) and restored exactly at
// the end. Returns the imputed L x N field.
std::vector<double> sample(const NoisePredictor& pred, const ImputationTask& task,
                           const TrainingSchedule& training,
                           const SamplerConfig& config, Rng& rng,
                           SampleStats* stats = nullptr);

}  // namespace faststi
