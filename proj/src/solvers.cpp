// SPDX-License-Identifier: Apache-2.0
#include "faststi/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace faststi {

namespace {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_abar(double a, const char* name) {
  if (!(a > 0.0 && a <= 1.0))
    throw std::domain_error(std::string(name) + " must lie in (0, 1]");
}

}  // namespace

void SolverHistory::push(std::vector<double> e) {
  head_ = (head_ + 2) % 3;  // step back, overwrite oldest
  buf_[head_] = std::move(e);
  if (size_ < 3) ++size_;
}

const std::vector<double>& SolverHistory::newest(std::size_t k) const {
  if (k >= size_) throw std::out_of_range("SolverHistory: not enough entries");
  return buf_[(head_ + k) % 3];
}

std::vector<double> transfer(const std::vector<double>& x,
                             const std::vector<double>& eps, double abar_t,
                             double abar_prev) {
  check_abar(abar_t, "abar_t");
  check_abar(abar_prev, "abar_prev");
  if (x.size() != eps.size())
    throw std::invalid_argument("transfer: state/noise shape mismatch");
  if (abar_prev == abar_t) return x;

  const double xc = std::sqrt(abar_prev / abar_t);
  const double denom =
      std::sqrt(abar_t) * (std::sqrt((1.0 - abar_prev) * abar_t) +
                           std::sqrt((1.0 - abar_t) * abar_prev));
  const double ec = (abar_prev - abar_t) / denom;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = xc * x[i] - ec * eps[i];
  return out;
}

std::vector<double> plms2_grad(const SolverHistory& history,
                               const std::vector<double>& e_t) {
  if (history.size() < 1)
    throw std::runtime_error("plms2_grad needs 1 history entry");
  const auto& e1 = history.newest(0);
  std::vector<double> out(e_t.size());
  for (std::size_t i = 0; i < e_t.size(); ++i)
    out[i] = 0.5 * (3.0 * e_t[i] - e1[i]);
  return out;
}

std::vector<double> plms4_grad(const SolverHistory& history,
                               const std::vector<double>& e_t) {
  if (history.size() < 3)
    throw std::runtime_error("plms4_grad needs 3 history entries");
  const auto& e1 = history.newest(0);
  const auto& e2 = history.newest(1);
  const auto& e3 = history.newest(2);
  std::vector<double> out(e_t.size());
  for (std::size_t i = 0; i < e_t.size(); ++i)
    out[i] = (55.0 * e_t[i] - 59.0 * e1[i] + 37.0 * e2[i] - 9.0 * e3[i]) / 24.0;
  return out;
}

StepResult ph2_step(const std::vector<double>& x, const NoisePredictor& pred,
                    const Tensor* chi, const RoadGraph* graph, double abar_t,
                    double abar_prev, double t, double t_prev) {
  StepResult r;
  r.e_raw = pred.eval(x, chi, graph, t);
  const auto x1 = transfer(x, r.e_raw, abar_t, abar_prev);
  const auto e2 = pred.eval(x1, chi, graph, t_prev);
  r.e_prime.resize(r.e_raw.size());
  for (std::size_t i = 0; i < r.e_raw.size(); ++i)
    r.e_prime[i] = 0.5 * (r.e_raw[i] + e2[i]);
  r.x = transfer(x, r.e_prime, abar_t, abar_prev);
  return r;
}

StepResult prk4_step(const std::vector<double>& x, const NoisePredictor& pred,
                     const Tensor* chi, const RoadGraph* graph, double abar_t,
                     double abar_mid, double abar_prev, double t, double t_mid,
                     double t_prev) {
  StepResult r;
  r.e_raw = pred.eval(x, chi, graph, t);
  const auto x1 = transfer(x, r.e_raw, abar_t, abar_mid);
  const auto e2 = pred.eval(x1, chi, graph, t_mid);
  const auto x2 = transfer(x, e2, abar_t, abar_mid);
  const auto e3 = pred.eval(x2, chi, graph, t_mid);
  const auto x3 = transfer(x, e3, abar_t, abar_prev);
  const auto e4 = pred.eval(x3, chi, graph, t_prev);
  r.e_prime.resize(r.e_raw.size());
  for (std::size_t i = 0; i < r.e_raw.size(); ++i)
    r.e_prime[i] = (r.e_raw[i] + 2.0 * e2[i] + 2.0 * e3[i] + e4[i]) / 6.0;
  r.x = transfer(x, r.e_prime, abar_t, abar_prev);
  return r;
}

std::vector<double> ddim_step(const std::vector<double>& x,
                              const NoisePredictor& pred, const Tensor* chi,
                              const RoadGraph* graph, double abar_t,
                              double abar_prev, double t) {
  return transfer(x, pred.eval(x, chi, graph, t), abar_t, abar_prev);
}

std::vector<double> ddpm_step(const std::vector<double>& x,
                              const NoisePredictor& pred, const Tensor* chi,
                              const RoadGraph* graph,
                              const TrainingSchedule& schedule, int t, Rng& rng) {
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("ddpm_step: t must lie in {1..T}");
  const double beta = schedule.betas[t - 1];
  const double alpha = schedule.alphas[t - 1];
  const double abar = schedule.alpha_bars[t - 1];
  const double abar_prev = t >= 2 ? schedule.alpha_bars[t - 2] : 1.0;

  const auto e = pred.eval(x, chi, graph, static_cast<double>(t - 1));
  const double mean_x = 1.0 / std::sqrt(alpha);
  const double mean_e = beta / std::sqrt(1.0 - abar) / std::sqrt(alpha);
  const double sigma =
      t > 1 ? std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta) : 0.0;

  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = mean_x * x[i] - mean_e * e[i];
    if (sigma > 0.0) out[i] += sigma * rng.gaussian();
  }
  return out;
}

std::string to_string(SamplerMethod m) {
  switch (m) {
    case SamplerMethod::ddpm: return "ddpm";
    case SamplerMethod::ddim: return "ddim";
    case SamplerMethod::fastSTI2: return "fastSTI2";
    case SamplerMethod::fastSTI4: return "fastSTI4";
  }
  return "?";
}

SamplerMethod sampler_method_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerMethod::ddpm;
  if (s == "ddim") return SamplerMethod::ddim;
  if (s == "fastSTI2") return SamplerMethod::fastSTI2;
  if (s == "fastSTI4") return SamplerMethod::fastSTI4;
  throw std::invalid_argument("unknown sampler method: " + s);
}

std::vector<Rung> make_ladder(const TrainingSchedule& training,
                              const SamplerConfig& config) {
  const int S = config.steps;
  if (S < 1) throw std::invalid_argument("sampler needs steps >= 1");
  if (config.method == SamplerMethod::fastSTI4 && S < 4)
    throw std::invalid_argument("fastSTI4 requires steps >= 4");
  if (config.method == SamplerMethod::fastSTI2 && S < 2)
    throw std::invalid_argument("fastSTI2 requires steps >= 2");

  std::vector<Rung> rungs;
  if (config.aligned) {
    const auto& al = *config.aligned;
    if (S != al.T_acc)
      throw std::invalid_argument("aligned sampling requires steps == T_acc");
    rungs.reserve(S + 1);
    for (int c = al.T_acc - 1; c >= 0; --c)
      rungs.push_back({al.t_aligned[c], al.phi_bars[c]});
  } else {
    if (S > training.T)
      throw std::invalid_argument("steps cannot exceed the training T");
    rungs.reserve(S + 1);
    for (int i = 0; i < S; ++i) {
      const double pos =
          S == 1 ? static_cast<double>(training.T - 1)
                 : (training.T - 1) * (1.0 - static_cast<double>(i) / (S - 1));
      const int idx = static_cast<int>(std::lround(pos));
      rungs.push_back({static_cast<double>(idx), training.alpha_bars[idx]});
    }
  }
  rungs.push_back({0.0, 1.0});  // terminal rung: the data manifold
  return rungs;
}

std::vector<double> run_pseudo_ladder(SamplerMethod method,
                                      const std::vector<double>& x0,
                                      const std::vector<Rung>& rungs,
                                      const LevelCurve& curve,
                                      const NoisePredictor& pred,
                                      const Tensor* chi, const RoadGraph* graph,
                                      int warmup_steps,
                                      SamplerConfig::HistorySeed seed_mode,
                                      const StepHook& hook, LadderStats* stats) {
  if (rungs.size() < 2) throw std::invalid_argument("ladder needs >= 2 rungs");
  const int n_steps = static_cast<int>(rungs.size()) - 1;
  const int warmup = warmup_steps >= 0
                         ? warmup_steps
                         : (method == SamplerMethod::fastSTI4 ? 3 : 2);

  long evals = 0;
  auto counted = [&](const std::vector<double>& x, double t) {
    ++evals;
    return pred.eval(x, chi, graph, t);
  };

  std::vector<double> x = x0;
  SolverHistory hist;
  for (int i = 0; i < n_steps; ++i) {
    const Rung& cur = rungs[i];
    const Rung& next = rungs[i + 1];
    std::vector<double> e_prime;

    switch (method) {
      case SamplerMethod::ddim: {
        e_prime = counted(x, cur.t);
        x = transfer(x, e_prime, cur.level, next.level);
        break;
      }
      case SamplerMethod::fastSTI2: {
        if (i < warmup) {
          auto r = ph2_step(x, pred, chi, graph, cur.level, next.level, cur.t,
                            next.t);
          evals += 2;
          hist.push(seed_mode == SamplerConfig::HistorySeed::raw ? r.e_raw
                                                                 : r.e_prime);
          x = std::move(r.x);
          e_prime = std::move(r.e_prime);
        } else {
          auto e = counted(x, cur.t);
          e_prime = plms2_grad(hist, e);
          hist.push(std::move(e));
          x = transfer(x, e_prime, cur.level, next.level);
        }
        break;
      }
      case SamplerMethod::fastSTI4: {
        if (i < warmup) {
          const double t_mid = 0.5 * (cur.t + next.t);
          const bool terminal = i + 2 == static_cast<int>(rungs.size());
          double level_mid;
          if (terminal || !curve) {
            const double s =
                0.5 * (std::sqrt(cur.level) + std::sqrt(next.level));
            level_mid = s * s;
          } else {
            level_mid = curve(t_mid);
          }
          auto r = prk4_step(x, pred, chi, graph, cur.level, level_mid,
                             next.level, cur.t, t_mid, next.t);
          evals += 4;
          hist.push(seed_mode == SamplerConfig::HistorySeed::raw ? r.e_raw
                                                                 : r.e_prime);
          x = std::move(r.x);
          e_prime = std::move(r.e_prime);
        } else {
          auto e = counted(x, cur.t);
          e_prime = plms4_grad(hist, e);
          hist.push(std::move(e));
          x = transfer(x, e_prime, cur.level, next.level);
        }
        break;
      }
      case SamplerMethod::ddpm:
        throw std::invalid_argument("ddpm is not a pseudo-numerical ladder method");
    }
    if (hook) hook(i, next, x, e_prime);
  }
  if (stats) stats->predictor_evals += evals;
  return x;
}

std::vector<double> run_ddpm_ladder(const std::vector<double>& x0,
                                    const std::vector<Rung>& rungs,
                                    const NoisePredictor& pred,
                                    const Tensor* chi, const RoadGraph* graph,
                                    Rng& rng, const StepHook& hook,
                                    LadderStats* stats) {
  if (rungs.size() < 2) throw std::invalid_argument("ladder needs >= 2 rungs");
  std::vector<double> x = x0;
  for (std::size_t i = 0; i + 1 < rungs.size(); ++i) {
    const Rung& cur = rungs[i];
    const Rung& next = rungs[i + 1];
    const auto e = pred.eval(x, chi, graph, cur.t);
    if (stats) ++stats->predictor_evals;

    // Effective per-jump beta; reduces to the per-step formulas on the
    // adjacent-integer ladder, with no noise into the terminal rung.
    const double alpha_eff = cur.level / next.level;
    const double beta_eff = 1.0 - alpha_eff;
    const double mean_x = 1.0 / std::sqrt(alpha_eff);
    const double mean_e = beta_eff / std::sqrt(1.0 - cur.level) / std::sqrt(alpha_eff);
    const double var = (1.0 - next.level) / (1.0 - cur.level) * beta_eff;
    const double sigma = var > 0.0 ? std::sqrt(var) : 0.0;

    std::vector<double> nx(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      nx[k] = mean_x * x[k] - mean_e * e[k];
      if (sigma > 0.0) nx[k] += sigma * rng.gaussian();
    }
    x = std::move(nx);
    if (hook) hook(static_cast<int>(i), next, x, e);
  }
  return x;
}

std::vector<double> sample(const NoisePredictor& pred, const ImputationTask& task,
                           const TrainingSchedule& training,
                           const SamplerConfig& config, Rng& rng,
                           SampleStats* stats) {
  const std::size_t L = task.L(), N = task.N(), n = L * N;
  if (task.observed_mask.L != L || task.observed_mask.N != N ||
      task.target_mask.L != L || task.target_mask.N != N)
    throw std::invalid_argument("sample: mask shape mismatch");

  // Entries to impute: targets plus anything unobserved.
  std::vector<std::uint8_t> impute(n, 0);
  bool any_impute = false;
  for (std::size_t i = 0; i < n; ++i) {
    impute[i] = task.target_mask.v[i] || !task.observed_mask.v[i];
    any_impute |= impute[i] != 0;
  }
  if (!any_impute) {
    if (stats) *stats = {};
    return task.observed.data;
  }

  const auto rungs = make_ladder(training, config);
  LevelCurve curve = [&training](double t) { return training.abar_at(t); };

  // One shared noise field keeps the conditioning entries on a single
  // forward-diffusion path across all noise levels.
  std::vector<double> z_shared(n);
  for (std::size_t i = 0; i < n; ++i) z_shared[i] = rng.gaussian();

  std::vector<double> x(n);
  const double a_start = rungs.front().level;
  for (std::size_t i = 0; i < n; ++i) {
    if (impute[i]) {
      x[i] = rng.gaussian();
    } else {
      x[i] = std::sqrt(a_start) * task.observed.data[i] +
             std::sqrt(1.0 - a_start) * z_shared[i];
    }
  }

  if (config.trace) *config.trace << "step,t,level,x_norm,e_norm\n";
  StepHook hook = [&](int step, const Rung& reached, std::vector<double>& xs,
                      const std::vector<double>& e_prime) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!impute[i])
        xs[i] = std::sqrt(reached.level) * task.observed.data[i] +
                std::sqrt(1.0 - reached.level) * z_shared[i];
    }
    if (config.trace)
      *config.trace << step << ',' << reached.t << ',' << reached.level << ','
                    << l2_norm(xs) << ',' << l2_norm(e_prime) << '\n';
  };

  LadderStats ls;
  std::vector<double> out;
  if (config.method == SamplerMethod::ddpm) {
    out = run_ddpm_ladder(x, rungs, pred, &task.conditioner, task.graph, rng,
                          hook, &ls);
  } else {
    out = run_pseudo_ladder(config.method, x, rungs, curve, pred,
                            &task.conditioner, task.graph, config.warmup_steps,
                            config.history_seed, hook, &ls);
  }

  // Conditioning entries pass through bit-exactly.
  for (std::size_t i = 0; i < n; ++i)
    if (!impute[i]) out[i] = task.observed.data[i];

  if (stats) {
    stats->predictor_evals = ls.predictor_evals;
    stats->steps = static_cast<int>(rungs.size()) - 1;
  }
  return out;
}

}  // namespace faststi
