// SPDX-License-Identifier: Apache-2.0
//
// Closed-form Gaussian oracle used by the solver tests and the acceptance
// suite. With data x0 ~ N(mu, sigma^2 I) the optimal noise predictor is
//   eps*(x, abar) = sqrt(1-abar) (x - sqrt(abar) mu) / (abar sigma^2 + 1 - abar)
// and the probability-flow trajectory through any state is known in closed
// form, which gives an implementation-independent reference.
#pragma once

#include <cmath>
#include <vector>

#include "faststi/solvers.hpp"

namespace oracle {

constexpr double kMu = 3.0;
constexpr double kSigma = 0.5;

// Smooth schedule for order measurements: the noise-to-signal ratio
// rho = sqrt((1-abar)/abar) is linear in tau, which makes the transfer part an
// exact Euler step on a uniform grid (the regime where the multistep and
// Runge-Kutta weights attain their design order). The range keeps the
// integrand's error density single-signed so Richardson quotients are clean.
struct RhoLinearCurve {
  double rho_lo = 0.55;
  double rho_hi = 1.8;

  double rho(double tau) const { return rho_lo + (rho_hi - rho_lo) * tau; }
  double abar(double tau) const {
    const double r = rho(tau);
    return 1.0 / (1.0 + r * r);
  }
};

class GaussianPredictor : public faststi::NoisePredictor {
 public:
  explicit GaussianPredictor(faststi::LevelCurve curve)
      : curve_(std::move(curve)) {}

  std::vector<double> eval(const std::vector<double>& x, const faststi::Tensor*,
                           const faststi::RoadGraph*, double t) const override {
    const double abar = curve_(t);
    const double num = std::sqrt(1.0 - abar);
    const double den = abar * kSigma * kSigma + 1.0 - abar;
    const double sa = std::sqrt(abar);
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      e[i] = num * (x[i] - sa * kMu) / den;
    return e;
  }

 private:
  faststi::LevelCurve curve_;
};

// Exact transport of a state along the probability-flow ODE between noise
// levels (Gaussian marginals map affinely onto each other).
inline std::vector<double> exact_transport(const std::vector<double>& x,
                                           double abar_from, double abar_to) {
  const double s0 =
      std::sqrt(abar_from * kSigma * kSigma + 1.0 - abar_from);
  const double s1 = std::sqrt(abar_to * kSigma * kSigma + 1.0 - abar_to);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = (x[i] - std::sqrt(abar_from) * kMu) / s0;
    out[i] = std::sqrt(abar_to) * kMu + s1 * w;
  }
  return out;
}

// Uniform-in-tau ladder over the curve, no terminal jump; tau runs 1 -> 0.
inline std::vector<faststi::Rung> order_ladder(const RhoLinearCurve& c, int steps) {
  std::vector<faststi::Rung> rungs;
  rungs.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double tau = 1.0 - static_cast<double>(i) / steps;
    rungs.push_back({tau, c.abar(tau)});
  }
  return rungs;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Endpoint of `method` run over an S-step ladder on the rho-linear curve.
inline std::vector<double> run_order_trajectory(faststi::SamplerMethod method,
                                                int steps,
                                                const std::vector<double>& x0) {
  const RhoLinearCurve c;
  const auto rungs = order_ladder(c, steps);
  faststi::LevelCurve curve = [c](double t) { return c.abar(t); };
  GaussianPredictor pred(curve);
  return faststi::run_pseudo_ladder(method, x0, rungs, curve, pred, nullptr,
                                    nullptr, /*warmup=*/-1,
                                    faststi::SamplerConfig::HistorySeed::raw);
}

// Richardson order estimate between 20- and 40-step runs against a 10000-step
// fine reference trajectory from the same fixed initial noise.
inline double richardson_order(faststi::SamplerMethod method,
                               const std::vector<double>& x0,
                               const std::vector<double>& reference) {
  const auto e20 =
      max_abs_diff(run_order_trajectory(method, 20, x0), reference);
  const auto e40 =
      max_abs_diff(run_order_trajectory(method, 40, x0), reference);
  return std::log2(e20 / e40);
}

}  // namespace oracle
