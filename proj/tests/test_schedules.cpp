#include <catch2/catch_amalgamated.hpp>

#include "shiftdiff/rng.hpp"
#include "shiftdiff/schedules.hpp"

using namespace shiftdiff;

namespace {

// Crafted schedule whose alpha_bar hits given values exactly; lets the
// spec's worked examples be checked verbatim.
NoiseSchedule craft(std::vector<double> alpha_bar) {
  NoiseSchedule ns;
  ns.T = static_cast<int>(alpha_bar.size()) - 1;
  ns.alpha_bar = std::move(alpha_bar);
  ns.alpha.assign(ns.T + 1, 1.0);
  ns.beta.assign(ns.T + 1, 0.0);
  for (int t = 1; t <= ns.T; ++t) {
    ns.alpha[t] = ns.alpha_bar[t] / ns.alpha_bar[t - 1];
    ns.beta[t] = 1.0 - ns.alpha[t];
  }
  return ns;
}

}  // namespace

TEST_CASE("linear beta schedule endpoints and products") {
  NoiseSchedule ns = build_noise_schedule(1000, 1e-4, 0.02);
  CHECK(ns.beta[1] == 1e-4);
  CHECK(ns.beta[1000] == 0.02);
  CHECK(ns.alpha_bar[0] == 1.0);

  // independent extended-precision product oracle
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    long double b = 1e-4L + (static_cast<long double>(t) - 1) / 999.0L * (0.02L - 1e-4L);
    prod *= (1.0L - b);
  }
  CHECK(ns.alpha_bar[1000] == Catch::Approx(static_cast<double>(prod)).epsilon(1e-12));
  // frozen value computed with 50-digit arithmetic
  CHECK(ns.alpha_bar[1000] == Catch::Approx(4.0358297653756833e-05).epsilon(1e-12));

  for (int t = 1; t <= 1000; ++t) {
    REQUIRE(ns.alpha_bar[t] < ns.alpha_bar[t - 1]);
    REQUIRE(ns.beta[t] >= ns.beta[t - 1]);
    REQUIRE(ns.alpha_bar[t] == ns.alpha[t] * ns.alpha_bar[t - 1]);  // exact recurrence
  }
}

TEST_CASE("two-step equal-beta schedule") {
  NoiseSchedule ns = build_noise_schedule(2, 0.1, 0.1);
  REQUIRE(ns.alpha_bar.size() == 3);
  CHECK(ns.alpha_bar[0] == 1.0);
  CHECK(ns.alpha_bar[1] == Catch::Approx(0.9).margin(1e-15));
  CHECK(ns.alpha_bar[2] == Catch::Approx(0.81).margin(1e-15));
}

TEST_CASE("schedule construction rejects bad ranges") {
  CHECK_THROWS_AS(build_noise_schedule(0, 1e-4, 0.02), config_error);
  CHECK_THROWS_AS(build_noise_schedule(10, 0.0, 0.02), config_error);
  CHECK_THROWS_AS(build_noise_schedule(10, 1e-4, 1.0), config_error);
  CHECK_THROWS_AS(build_noise_schedule(10, 0.02, 1e-4), config_error);
  CHECK_THROWS_WITH(build_noise_schedule(10, -1.0, 0.02),
                    Catch::Matchers::ContainsSubstring("beta_start"));
}

TEST_CASE("shift coefficients at alpha_bar = 0.25") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  CHECK(shift_coefficient(ShiftMode::QuadraticShift, ns, 2) == Catch::Approx(0.25).margin(1e-15));
  CHECK(shift_coefficient(ShiftMode::PriorShift, ns, 2) == Catch::Approx(0.5).margin(1e-15));
  CHECK(shift_coefficient(ShiftMode::DataNormalization, ns, 2) ==
        Catch::Approx(-0.5).margin(1e-15));
}

TEST_CASE("k_0 is zero in every mode") {
  NoiseSchedule ns = build_noise_schedule(50, 1e-3, 0.1);
  for (ShiftMode m : all_shift_modes()) CHECK(shift_coefficient(m, ns, 0) == 0.0);
}

TEST_CASE("t outside range is an index error") {
  NoiseSchedule ns = build_noise_schedule(10, 1e-3, 0.1);
  CHECK_THROWS_AS(shift_coefficient(ShiftMode::Linear, ns, 11), contract_error);
  CHECK_THROWS_AS(shift_coefficient(ShiftMode::Linear, ns, -1), contract_error);
  CHECK_THROWS_AS(amendment_term(ShiftMode::Linear, ns, 0, {1.0}), contract_error);
}

TEST_CASE("amendment closed forms") {
  NoiseSchedule ns = build_noise_schedule(40, 1e-3, 0.2);
  Vec mu = {1.5, -0.5};

  // data normalization: d_1 = mu, d_{t>1} = 0
  Vec d1 = amendment_term(ShiftMode::DataNormalization, ns, 1, mu);
  CHECK(d1[0] == Catch::Approx(mu[0]).margin(1e-12));
  CHECK(d1[1] == Catch::Approx(mu[1]).margin(1e-12));
  for (int t = 2; t <= ns.T; ++t) {
    Vec d = amendment_term(ShiftMode::DataNormalization, ns, t, mu);
    CHECK(std::abs(d[0]) < 1e-12);
    CHECK(std::abs(d[1]) < 1e-12);
  }

  // prior shift: d_t = (1 - 1/sqrt(alpha_t)) mu
  for (int t = 1; t <= ns.T; ++t) {
    Vec d = amendment_term(ShiftMode::PriorShift, ns, t, mu);
    double c = 1.0 - 1.0 / std::sqrt(ns.alpha[t]);
    CHECK(d[0] == Catch::Approx(c * mu[0]).epsilon(1e-12));
  }
}

TEST_CASE("closed forms match the general amendment formula on random schedules") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    int T = 3 + rng.uniform_int(40);
    double b0 = 1e-4 + rng.uniform() * 0.01;
    double b1 = b0 + rng.uniform() * 0.3;
    NoiseSchedule ns = build_noise_schedule(T, b0, b1);
    Vec mu = {rng.normal() * 2.0};
    for (int t = 1; t <= T; ++t) {
      double kp = shift_coefficient(ShiftMode::PriorShift, ns, t);
      double kp1 = shift_coefficient(ShiftMode::PriorShift, ns, t - 1);
      double general = (-kp / std::sqrt(ns.alpha[t]) + kp1) * mu[0];
      double closed = (1.0 - 1.0 / std::sqrt(ns.alpha[t])) * mu[0];
      CHECK(std::abs(general - closed) <=
            1e-12 * std::max({1.0, std::abs(general), std::abs(closed)}));

      double kd = shift_coefficient(ShiftMode::DataNormalization, ns, t);
      double kd1 = shift_coefficient(ShiftMode::DataNormalization, ns, t - 1);
      double general_d = (-kd / std::sqrt(ns.alpha[t]) + kd1) * mu[0];
      double closed_d = (t == 1) ? mu[0] : 0.0;
      CHECK(std::abs(general_d - closed_d) <= 1e-12 * std::max(1.0, std::abs(mu[0])));
    }
  }
}

TEST_CASE("mode none zeroes everything") {
  NoiseSchedule ns = build_noise_schedule(30, 1e-3, 0.1);
  ShiftSchedule ss = build_shift_schedule(ShiftMode::None, ns);
  for (double k : ss.k) CHECK(k == 0.0);
  for (int t = 1; t <= ns.T; ++t) {
    Vec d = amendment_term(ShiftMode::None, ns, t, {3.0, -1.0});
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 0.0);
  }
}

TEST_CASE("mode-specific shape properties") {
  NoiseSchedule ns = build_noise_schedule(1000, 1e-4, 0.02);

  ShiftSchedule prior = build_shift_schedule(ShiftMode::PriorShift, ns);
  CHECK(prior.k[0] == 0.0);
  for (int t = 1; t <= ns.T; ++t) REQUIRE(prior.k[t] >= prior.k[t - 1]);
  CHECK(prior.k[ns.T] == Catch::Approx(1.0 - std::sqrt(ns.alpha_bar[ns.T])));

  ShiftSchedule quad = build_shift_schedule(ShiftMode::QuadraticShift, ns);
  CHECK(quad.k[0] == 0.0);
  for (double k : quad.k) REQUIRE(k <= 0.25 + 1e-15);
  CHECK(quad.k[ns.T] < 0.01);  // returns toward 0 once alpha_bar has decayed

  ShiftSchedule sine = build_shift_schedule(ShiftMode::Sine, ns);
  CHECK(sine.k[0] == 0.0);
  CHECK(sine.k[ns.T] == Catch::Approx(1.0));

  ShiftSchedule pw = build_shift_schedule(ShiftMode::Piecewise, ns);
  CHECK(pw.k[0] == 0.0);
  CHECK(pw.k[399] == 0.0);
  CHECK(pw.k[400] == 0.0);
  CHECK(pw.k[401] > 0.0);
  CHECK(pw.k[ns.T] == Catch::Approx(1.0));

  ShiftSchedule lin = build_shift_schedule(ShiftMode::Linear, ns);
  CHECK(lin.k[500] == Catch::Approx(0.5));
  ShiftSchedule sq = build_shift_schedule(ShiftMode::Square, ns);
  CHECK(sq.k[500] == Catch::Approx(0.25));
}

TEST_CASE("shift mode names round-trip") {
  for (ShiftMode m : all_shift_modes())
    CHECK(shift_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(shift_mode_from_string("bogus"), config_error);
}
