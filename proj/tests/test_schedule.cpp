// SPDX-License-Identifier: Apache-2.0
#include "faststi/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"

using namespace faststi;

TEST_CASE("quadratic schedule hits the Table-style endpoints") {
  const auto s = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  CHECK(s.betas[0] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.betas[49] == doctest::Approx(0.2).epsilon(1e-12));
  for (int i = 1; i < 50; ++i) CHECK(s.betas[i] >= s.betas[i - 1]);
}

TEST_CASE("single-step schedule returns beta_1 for all kinds") {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::quadratic}) {
    const auto s = build_training_schedule(kind, 0.1, 0.1, 1);
    REQUIRE(s.betas.size() == 1);
    CHECK(s.betas[0] == doctest::Approx(0.1));
    CHECK(s.alpha_bars[0] == doctest::Approx(0.9));
  }
}

TEST_CASE("linear 3-step schedule, hand-computed cumulative products") {
  const auto s = build_training_schedule(ScheduleKind::linear, 0.1, 0.3, 3);
  CHECK(s.betas[0] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(s.betas[1] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(s.betas[2] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(s.alpha_bars[1] == doctest::Approx(0.72).epsilon(1e-14));
  CHECK(s.alpha_bars[2] == doctest::Approx(0.504).epsilon(1e-14));
}

TEST_CASE("schedule invariants hold for all kinds") {
  for (auto kind :
       {ScheduleKind::linear, ScheduleKind::quadratic, ScheduleKind::cosine}) {
    const auto s = build_training_schedule(kind, 1e-4, 0.2, 50);
    for (int i = 0; i < s.T; ++i) {
      CHECK(s.betas[i] > 0.0);
      CHECK(s.alpha_bars[i] > 0.0);
      CHECK(s.alpha_bars[i] < 1.0);
      if (i > 0) {
        CHECK(s.alpha_bars[i] < s.alpha_bars[i - 1]);
        // recurrence abar_t = abar_{t-1} (1 - beta_t) to 1e-12 relative
        const double expect = s.alpha_bars[i - 1] * (1.0 - s.betas[i]);
        CHECK(std::abs(s.alpha_bars[i] - expect) <=
              1e-12 * std::abs(expect));
      }
    }
  }
}

TEST_CASE("round-trip: rebuilding from own betas reproduces arrays bit-identically") {
  const auto s = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  // rebuild alphas/alpha_bars from the stored betas exactly as construction does
  double prod = 1.0;
  for (int i = 0; i < s.T; ++i) {
    const double alpha = 1.0 - s.betas[i];
    prod *= alpha;
    CHECK(s.alphas[i] == alpha);
    CHECK(s.alpha_bars[i] == prod);
  }
}

TEST_CASE("invalid schedule parameters are rejected") {
  CHECK_THROWS_AS(build_training_schedule(ScheduleKind::linear, 0.0, 0.2, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_training_schedule(ScheduleKind::linear, 0.3, 0.2, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_training_schedule(ScheduleKind::linear, 0.1, 1.0, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_training_schedule(ScheduleKind::linear, 0.1, 0.2, 0),
                  std::invalid_argument);
}

TEST_CASE("alignment: exact-prefix xi schedule yields integer steps") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  std::vector<double> xis(tr.betas.begin(), tr.betas.begin() + 6);
  const auto al = build_aligned_schedule(xis, tr);
  for (int c = 0; c < 6; ++c) {
    CHECK(al.phi_bars[c] == doctest::Approx(tr.alpha_bars[c]).epsilon(1e-15));
    CHECK(std::abs(al.t_aligned[c] - c) < 1e-9);
  }
}

TEST_CASE("alignment of the 6-value inference schedule") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  const std::vector<double> xis{0.0001, 0.001, 0.2, 0.3, 0.5, 0.9};
  const auto al = build_aligned_schedule(xis, tr);

  // cumulative products, independently computed
  const double expect_pb[6] = {0.9999,     0.99890010, 0.79912008,
                               0.55938406, 0.27969203, 0.02796920};
  for (int c = 0; c < 6; ++c)
    CHECK(al.phi_bars[c] == doctest::Approx(expect_pb[c]).epsilon(1e-7));

  // fractional steps, cross-checked against an independent script
  const double expect_tc[6] = {0.0,          1.828171828, 18.674939321,
                               26.177748449, 34.340485876, 48.568848154};
  for (int c = 0; c < 6; ++c) {
    CHECK(al.t_aligned[c] == doctest::Approx(expect_tc[c]).epsilon(1e-6));
    CHECK(al.t_aligned[c] >= 0.0);
    CHECK(al.t_aligned[c] <= 49.0);
    if (c > 0) CHECK(al.t_aligned[c] > al.t_aligned[c - 1]);
  }

  // posterior variances per the constants equation
  CHECK(al.xi_tildes[0] == 0.0);
  for (int c = 1; c < 6; ++c) {
    const double expect =
        (1.0 - al.phi_bars[c - 1]) / (1.0 - al.phi_bars[c]) * al.xis[c];
    CHECK(al.xi_tildes[c] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("alignment interpolation bound") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  const std::vector<double> xis{0.0001, 0.001, 0.2, 0.3, 0.5, 0.9};
  const auto al = build_aligned_schedule(xis, tr);
  for (int c = 0; c < 6; ++c) {
    const double tc = al.t_aligned[c];
    const double sp = std::sqrt(al.phi_bars[c]);
    CHECK(sp <= std::sqrt(tr.alpha_bars[(int)std::floor(tc)]) + 1e-12);
    const int hi = std::min((int)std::ceil(tc), tr.T - 1);
    CHECK(sp >= std::sqrt(tr.alpha_bars[hi]) - 1e-12);
  }
}

TEST_CASE("alignment rejects out-of-bracket schedules") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  // a final xi large enough to push phi_bar below alpha_bar_T
  const std::vector<double> xis{0.0001, 0.001, 0.2, 0.3, 0.5, 0.99};
  CHECK_THROWS_AS(build_aligned_schedule(xis, tr), std::out_of_range);
}

TEST_CASE("aligned schedule validates inputs") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  CHECK_THROWS(build_aligned_schedule({}, tr));
  CHECK_THROWS(build_aligned_schedule({0.5, 1.5}, tr));
  std::vector<double> too_many(50, 0.01);
  CHECK_THROWS(build_aligned_schedule(too_many, tr));
}

TEST_CASE("abar_at interpolates in sqrt space and is exact at integers") {
  const auto tr = build_training_schedule(ScheduleKind::quadratic, 1e-4, 0.2, 50);
  for (int i = 0; i < tr.T; ++i)
    CHECK(tr.abar_at(i) == doctest::Approx(tr.alpha_bars[i]).epsilon(1e-15));
  const double s = 0.5 * (std::sqrt(tr.alpha_bars[3]) + std::sqrt(tr.alpha_bars[4]));
  CHECK(tr.abar_at(3.5) == doctest::Approx(s * s).epsilon(1e-15));
  CHECK_THROWS(tr.abar_at(-0.1));
  CHECK_THROWS(tr.abar_at(49.5));
}

TEST_CASE("schedule spec JSON round-trip") {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::quadratic;
  spec.beta_1 = 1e-4;
  spec.beta_T = 0.2;
  spec.T = 50;
  spec.xis = std::vector<double>{0.0001, 0.001, 0.2, 0.3, 0.5, 0.9};
  const auto text = schedule_spec_to_json(spec);
  const auto back = schedule_spec_from_json(text);
  CHECK(back.kind == spec.kind);
  CHECK(back.beta_1 == spec.beta_1);
  CHECK(back.beta_T == spec.beta_T);
  CHECK(back.T == spec.T);
  REQUIRE(back.xis.has_value());
  CHECK(*back.xis == *spec.xis);

  CHECK_THROWS(schedule_spec_from_json(R"({"kind":"linear","beta_1":0.1,"beta_T":0.2,"T":10,"bogus":1})"));
}
