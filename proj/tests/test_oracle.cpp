#include <catch2/catch_amalgamated.hpp>

#include "shiftdiff/gmm.hpp"

using namespace shiftdiff;

namespace {

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

// 1-D quadrature oracle for E[x0 | x_t]: integrates the class-conditional
// mixture prior against the forward likelihood on a Simpson grid.
double quad_posterior_x0(const std::vector<GmmComponent>& comps, double abar, double s_t,
                         double x_t) {
  double sab = std::sqrt(abar), var = 1.0 - abar;
  auto joint = [&](double u) {
    double lik = std::exp(-0.5 * (x_t - sab * u - s_t) * (x_t - sab * u - s_t) / var) /
                 std::sqrt(2.0 * M_PI * var);
    double prior = 0.0;
    for (const auto& c : comps)
      prior += c.weight *
               std::exp(-0.5 * (u - c.mean[0]) * (u - c.mean[0]) / c.var) /
               std::sqrt(2.0 * M_PI * c.var);
    return lik * prior;
  };
  double lo = -60.0, hi = 60.0;
  int n = 600000;
  double h = (hi - lo) / n, z = 0.0, m1 = 0.0;
  for (int i = 0; i <= n; ++i) {
    double u = lo + h * i;
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    double f = joint(u) * w;
    z += f;
    m1 += f * u;
  }
  return m1 / z;
}

}  // namespace

TEST_CASE("gmm_sample single-component moments") {
  GmmSpec g;
  g.dim = 2;
  g.classes = {{{{1.0, -3.0}, 0.5, 1.0}}};
  Rng rng(10);
  const int n = 100000;
  Matrix s = gmm_sample(g, 0, n, rng);
  for (int d = 0; d < 2; ++d) {
    double mean = 0;
    for (int i = 0; i < n; ++i) mean += s.at(i, d);
    mean /= n;
    CHECK(std::abs(mean - g.classes[0][0].mean[d]) <= 4.0 * std::sqrt(0.5 / n));
  }
}

TEST_CASE("gmm_sample degenerate variance collapses to the mean") {
  GmmSpec g;
  g.dim = 1;
  g.classes = {{{{2.5}, 1e-18, 1.0}}};
  Rng rng(4);
  Matrix s = gmm_sample(g, 0, 100, rng);
  for (int i = 0; i < 100; ++i) CHECK(s.at(i, 0) == Catch::Approx(2.5).margin(1e-8));
}

TEST_CASE("gmm_sample equal-weight components average to the midpoint") {
  GmmSpec g;
  g.dim = 1;
  g.classes = {{{{-1.0}, 0.01, 0.5}, {{3.0}, 0.01, 0.5}}};
  Rng rng(8);
  const int n = 100000;
  Matrix s = gmm_sample(g, 0, n, rng);
  double mean = 0;
  for (int i = 0; i < n; ++i) mean += s.at(i, 0);
  mean /= n;
  CHECK(std::abs(mean - 1.0) < 0.03);
  CHECK_THROWS_AS(gmm_sample(g, 1, 1, rng), contract_error);
}

TEST_CASE("oracle posterior x0: scalar worked example and quadrature") {
  GmmSpec g;
  g.dim = 1;
  g.classes = {{{{0.0}, 1.0, 1.0}}};
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  ShiftSchedule ss = build_shift_schedule(ShiftMode::None, ns);
  ShiftPredictor pred = make_fixed_table(1, 1);
  OracleDenoiser den(g, ns, ss, pred);

  CHECK(den.posterior_x0({1.0}, 2, 0)[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(quad_posterior_x0(g.classes[0], 0.25, 0.0, 1.0) == Catch::Approx(0.5).margin(1e-6));

  // two-component class cross-checked against quadrature
  GmmSpec g2;
  g2.dim = 1;
  g2.classes = {{{{-2.0}, 0.3, 0.4}, {{1.5}, 0.8, 0.6}}};
  OracleDenoiser den2(g2, ns, ss, pred);
  for (double x : {-1.0, 0.0, 0.7, 2.5}) {
    double got = den2.posterior_x0({x}, 2, 0)[0];
    double want = quad_posterior_x0(g2.classes[0], 0.25, 0.0, x);
    CHECK(got == Catch::Approx(want).margin(1e-6));
  }
}

TEST_CASE("oracle posterior x0 limits") {
  ShiftPredictor pred = make_fixed_table(1, 1);
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  ShiftSchedule ss = build_shift_schedule(ShiftMode::None, ns);

  GmmSpec tight;
  tight.dim = 1;
  tight.classes = {{{{1.7}, 1e-14, 1.0}}};
  OracleDenoiser den(tight, ns, ss, pred);
  CHECK(den.posterior_x0({-5.0}, 2, 0)[0] == Catch::Approx(1.7).margin(1e-6));

  GmmSpec wide;
  wide.dim = 1;
  wide.classes = {{{{0.0}, 0.1, 1.0}}};
  NoiseSchedule ns2 = craft({1.0, 1.0 - 1e-9});
  ShiftSchedule ss2 = build_shift_schedule(ShiftMode::None, ns2);
  OracleDenoiser den2(wide, ns2, ss2, pred);
  CHECK(den2.posterior_x0({0.9}, 1, 0)[0] == Catch::Approx(0.9).margin(1e-5));
}

TEST_CASE("oracle g: worked example and noiseless center") {
  GmmSpec g;
  g.dim = 1;
  g.classes = {{{{0.0}, 1.0, 1.0}}};
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  ShiftSchedule ss = build_shift_schedule(ShiftMode::None, ns);
  ShiftPredictor pred = make_fixed_table(1, 1);
  OracleDenoiser den(g, ns, ss, pred);
  CHECK(den.g({1.0}, 2, 0)[0] == Catch::Approx(0.8660254).epsilon(1e-6));

  // zero-variance class at the shifted marginal mean: predicted noise is zero
  GmmSpec tight;
  tight.dim = 1;
  tight.classes = {{{{1.2}, 1e-16, 1.0}}};
  ShiftSchedule quad = build_shift_schedule(ShiftMode::QuadraticShift, ns);
  ShiftPredictor pe = make_fixed_table(1, 1);
  pe.table.at(0, 0) = 2.0;
  OracleDenoiser den2(tight, ns, quad, pe);
  double s = quad.k[2] * 2.0;
  double x_center = std::sqrt(0.25) * 1.2 + s;
  double gg = den2.g({x_center}, 2, 0)[0];
  CHECK(gg - s / std::sqrt(0.75) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("oracle g minimizes the regression loss among perturbations") {
  GmmSpec g = default_gmm();
  NoiseSchedule ns = build_noise_schedule(200, 1e-4, 0.02);
  ShiftSchedule ss = build_shift_schedule(ShiftMode::QuadraticShift, ns);
  ShiftPredictor pred = make_fixed_table(2, 2);
  pred.table.set_row(0, {2.0, 2.0});
  pred.table.set_row(1, {-2.0, -2.0});
  OracleDenoiser den(g, ns, ss, pred);

  Rng rng(77);
  for (int t : {20, 100, 180}) {
    double mse_star = 0, mse_add = 0, mse_mul = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      int cls = rng.uniform_int(2);
      Matrix x0m = gmm_sample(g, cls, 1, rng);
      Vec x0 = x0m.row_vec(0);
      Vec eps = rng.normal_vec(2);
      Vec s_t = ss.k[t] * pred.predict(cls);
      Vec x_t = sample_forward(ns, {s_t, t}, x0, t, eps);
      double sab = std::sqrt(ns.alpha_bar[t]), sv = std::sqrt(1.0 - ns.alpha_bar[t]);
      Vec gstar = den.g(x_t, t, cls);
      for (int d = 0; d < 2; ++d) {
        double target = (x_t[d] - sab * x0[d]) / sv;
        mse_star += (gstar[d] - target) * (gstar[d] - target);
        double ga = gstar[d] + 0.1;
        mse_add += (ga - target) * (ga - target);
        double gm = gstar[d] * 1.05;
        mse_mul += (gm - target) * (gm - target);
      }
    }
    CHECK(mse_star < mse_add);
    CHECK(mse_star < mse_mul);
  }
}

TEST_CASE("gmm spec validation") {
  GmmSpec g;
  g.dim = 2;
  g.classes = {{{{1.0, 2.0}, 0.5, 0.7}}};  // weights sum to 0.7
  CHECK_THROWS_AS(g.validate(), config_error);
  g.classes = {{{{1.0}, 0.5, 1.0}}};  // dim mismatch
  CHECK_THROWS_AS(g.validate(), config_error);
}
