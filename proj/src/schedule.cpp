// SPDX-License-Identifier: Apache-2.0
#include "faststi/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace faststi {

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::quadratic: return "quadratic";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "quadratic") return ScheduleKind::quadratic;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

double TrainingSchedule::abar_at(double t) const {
  if (t < 0.0 || t > static_cast<double>(T - 1))
    throw std::out_of_range("abar_at: step outside [0, T-1]");
  const int lo = static_cast<int>(std::floor(t));
  if (lo == T - 1) return alpha_bars[lo];
  const double frac = t - lo;
  const double s = std::sqrt(alpha_bars[lo]) +
                   frac * (std::sqrt(alpha_bars[lo + 1]) - std::sqrt(alpha_bars[lo]));
  return s * s;
}

TrainingSchedule build_training_schedule(ScheduleKind kind, double beta_1,
                                         double beta_T, int T) {
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0))
    throw std::invalid_argument("schedule requires 0 < beta_1 <= beta_T < 1");
  if (T < 1) throw std::invalid_argument("schedule requires T >= 1");

  TrainingSchedule s;
  s.kind = kind;
  s.beta_1 = beta_1;
  s.beta_T = beta_T;
  s.T = T;
  s.betas.resize(T);

  if (T == 1) {
    s.betas[0] = beta_1;
  } else {
    switch (kind) {
      case ScheduleKind::linear:
        for (int i = 0; i < T; ++i)
          s.betas[i] = beta_1 + (beta_T - beta_1) * i / (T - 1);
        break;
      case ScheduleKind::quadratic: {
        const double r1 = std::sqrt(beta_1), rT = std::sqrt(beta_T);
        for (int i = 0; i < T; ++i) {
          const double r = r1 + (rT - r1) * i / (T - 1);
          s.betas[i] = r * r;
        }
        break;
      }
      case ScheduleKind::cosine: {
        // Nichol-Dhariwal: abar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) pi/2),
        // with s = 0.008 and beta clipped at 0.999. beta_1/beta_T are ignored.
        const double off = 0.008;
        auto f = [&](double t) {
          const double a = std::cos((t / T + off) / (1.0 + off) * M_PI / 2.0);
          return a * a;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int i = 0; i < T; ++i) {
          const double ab = f(static_cast<double>(i + 1)) / f0;
          s.betas[i] = std::min(1.0 - ab / prev, 0.999);
          prev = ab;
        }
        break;
      }
    }
  }

  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

AlignedSchedule build_aligned_schedule(const std::vector<double>& xis,
                                       const TrainingSchedule& training) {
  const int T_acc = static_cast<int>(xis.size());
  if (T_acc < 1) throw std::invalid_argument("aligned schedule needs xis");
  if (T_acc >= training.T)
    throw std::invalid_argument("aligned schedule requires T_acc < T");
  for (double xi : xis)
    if (!(xi > 0.0 && xi < 1.0))
      throw std::invalid_argument("every xi must lie in (0,1)");

  AlignedSchedule a;
  a.T_acc = T_acc;
  a.xis = xis;
  a.phis.resize(T_acc);
  a.phi_bars.resize(T_acc);
  a.xi_tildes.resize(T_acc);
  a.t_aligned.resize(T_acc);

  double prod = 1.0;
  for (int c = 0; c < T_acc; ++c) {
    a.phis[c] = 1.0 - xis[c];
    const double prev = prod;
    prod *= a.phis[c];
    a.phi_bars[c] = prod;
    // Eq-level posterior variance; zero at the first step where phi_bar_{0} = 1.
    a.xi_tildes[c] = c == 0 ? 0.0 : (1.0 - prev) / (1.0 - prod) * xis[c];
  }
  for (int c = 1; c < T_acc; ++c)
    if (!(a.phi_bars[c] < a.phi_bars[c - 1]))
      throw std::invalid_argument("phi_bars must be strictly decreasing");

  const auto& ab = training.alpha_bars;
  for (int c = 0; c < T_acc; ++c) {
    const double sp = std::sqrt(a.phi_bars[c]);
    if (sp > std::sqrt(ab.front()) || sp < std::sqrt(ab.back()))
      throw std::out_of_range(
          "phi_bar outside the training alpha_bar range; incompatible xi schedule");
    // sqrt(alpha_bar) is strictly decreasing: find t with s[t+1] <= sp <= s[t]
    int t = 0;
    while (t + 1 < training.T - 1 && std::sqrt(ab[t + 1]) > sp) ++t;
    a.t_aligned[c] =
        t + (std::sqrt(ab[t]) - sp) / (std::sqrt(ab[t]) - std::sqrt(ab[t + 1]));
  }
  return a;
}

std::string schedule_spec_to_json(const ScheduleSpec& spec) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  j["beta_1"] = spec.beta_1;
  j["beta_T"] = spec.beta_T;
  j["T"] = spec.T;
  if (spec.xis) j["xis"] = *spec.xis;
  return j.dump(2);
}

ScheduleSpec schedule_spec_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  for (const auto& [key, _] : j.items())
    if (key != "kind" && key != "beta_1" && key != "beta_T" && key != "T" &&
        key != "xis")
      throw std::invalid_argument("unknown schedule key: " + key);
  ScheduleSpec s;
  s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  s.beta_1 = j.at("beta_1").get<double>();
  s.beta_T = j.at("beta_T").get<double>();
  s.T = j.at("T").get<int>();
  if (j.contains("xis")) s.xis = j.at("xis").get<std::vector<double>>();
  return s;
}

}  // namespace faststi
