#include <catch2/catch_amalgamated.hpp>

#include "shiftdiff/diffusion.hpp"
#include "shiftdiff/rng.hpp"
#include "shiftdiff/verify.hpp"

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

ShiftVector sv(Vec v, int t) { return ShiftVector{std::move(v), t}; }

}  // namespace

TEST_CASE("forward marginal worked examples") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});

  // zero shift, zero data
  GaussianParams p = forward_marginal(ns, sv({0.0}, 2), {0.0}, 2);
  CHECK(p.mean[0] == 0.0);
  CHECK(p.var_scale == Catch::Approx(0.75));

  // scalar x0=2, alpha_bar=0.25, s=0.5
  p = forward_marginal(ns, sv({0.5}, 2), {2.0}, 2);
  CHECK(p.mean[0] == Catch::Approx(1.5));
  CHECK(p.var_scale == Catch::Approx(0.75));

  CHECK_THROWS_AS(forward_marginal(ns, sv({0.5, 0.1}, 2), {2.0}, 2), shape_error);
  CHECK_THROWS_AS(forward_marginal(ns, sv({0.5}, 1), {2.0}, 2), contract_error);
}

TEST_CASE("forward marginal matches Monte-Carlo draws") {
  NoiseSchedule ns = build_noise_schedule(50, 1e-3, 0.2);
  int t = 30;
  Vec x0 = {1.0, -2.0};
  ShiftVector s = sv({0.7, 0.3}, t);
  GaussianParams p = forward_marginal(ns, s, x0, t);

  const int n = 100000;
  Rng rng(11);
  Vec sum(2, 0.0), sum2(2, 0.0);
  for (int i = 0; i < n; ++i) {
    Vec noise = rng.normal_vec(2);
    Vec x = sample_forward(ns, s, x0, t, noise);
    for (int d = 0; d < 2; ++d) {
      sum[d] += x[d];
      sum2[d] += x[d] * x[d];
    }
  }
  for (int d = 0; d < 2; ++d) {
    double mean = sum[d] / n;
    double var = sum2[d] / n - mean * mean;
    double se_mean = std::sqrt(p.var_scale / n);
    double se_var = p.var_scale * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(mean - p.mean[d]) <= 4.0 * se_mean);
    CHECK(std::abs(var - p.var_scale) <= 4.0 * se_var);
  }
}

TEST_CASE("sample_forward worked examples") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  // noise = 0 returns the marginal mean
  Vec x = sample_forward(ns, sv({0.5}, 2), {2.0}, 2, {0.0});
  CHECK(x[0] == Catch::Approx(1.5));
  // t = 0 is the identity
  CHECK(sample_forward(ns, sv({0.0}, 0), {2.0}, 0, {0.0})[0] == 2.0);
  // scalar arithmetic
  x = sample_forward(ns, sv({0.5}, 2), {2.0}, 2, {1.0});
  CHECK(x[0] == Catch::Approx(2.3660254).epsilon(1e-7));
}

TEST_CASE("forward kernel reduces to plain DDPM when shifts vanish") {
  NoiseSchedule ns = build_noise_schedule(10, 1e-3, 0.1);
  Vec xp = {1.2, -0.4};
  GaussianParams k = forward_kernel(ns, sv({0.0, 0.0}, 5), sv({0.0, 0.0}, 4), xp, 5);
  double sa = std::sqrt(ns.alpha[5]);
  CHECK(k.mean[0] == Catch::Approx(sa * xp[0]));
  CHECK(k.mean[1] == Catch::Approx(sa * xp[1]));
  CHECK(k.var_scale == Catch::Approx(ns.beta[5]));
}

TEST_CASE("kernel composition reproduces the marginal at t=3") {
  NoiseSchedule ns = build_noise_schedule(3, 0.01, 0.3);
  ShiftSchedule ss = build_shift_schedule(ShiftMode::QuadraticShift, ns);
  Vec mu = {0.8}, x0 = {1.7};

  Vec mean = x0;
  double var = 0.0;
  for (int t = 1; t <= 3; ++t) {
    GaussianParams k =
        forward_kernel(ns, sv(ss.k[t] * mu, t), sv(ss.k[t - 1] * mu, t - 1), mean, t);
    mean = k.mean;
    var = ns.alpha[t] * var + k.var_scale;
  }
  GaussianParams m = forward_marginal(ns, sv(ss.k[3] * mu, 3), x0, 3);
  CHECK(mean[0] == Catch::Approx(m.mean[0]).margin(1e-12));
  CHECK(var == Catch::Approx(m.var_scale).margin(1e-12));
}

TEST_CASE("kernel at t=1 with s_0 = 0") {
  NoiseSchedule ns = build_noise_schedule(5, 0.01, 0.1);
  Vec x0 = {2.0};
  GaussianParams k = forward_kernel(ns, sv({0.4}, 1), sv({0.0}, 0), x0, 1);
  CHECK(k.mean[0] == Catch::Approx(std::sqrt(ns.alpha[1]) * 2.0 + 0.4));
}

TEST_CASE("posterior params worked example") {
  // beta_t = 0.02, alpha_bar[t-1] = 0.5, alpha_bar[t] = 0.49
  NoiseSchedule ns = craft({1.0, 0.5, 0.49});
  GaussianParams p = posterior_params(ns, sv({0.0}, 2), sv({0.0}, 1), {1.0}, {1.0}, 2);
  CHECK(p.var_scale == Catch::Approx(0.01960784).epsilon(1e-6));
  // coefficients via linearity probes
  GaussianParams p_x0 = posterior_params(ns, sv({0.0}, 2), sv({0.0}, 1), {0.0}, {1.0}, 2);
  GaussianParams p_xt = posterior_params(ns, sv({0.0}, 2), sv({0.0}, 1), {1.0}, {0.0}, 2);
  CHECK(p_x0.mean[0] == Catch::Approx(0.0277297).epsilon(1e-5));
  CHECK(p_xt.mean[0] == Catch::Approx(0.9705382).epsilon(1e-6));
  CHECK_THROWS_AS(posterior_params(ns, sv({0.0}, 1), sv({0.0}, 0), {1.0}, {1.0}, 1),
                  contract_error);
}

TEST_CASE("posterior matches a brute-force Bayes grid") {
  NoiseSchedule ns = build_noise_schedule(20, 1e-3, 0.25);
  for (ShiftMode mode : {ShiftMode::None, ShiftMode::PriorShift, ShiftMode::QuadraticShift}) {
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    double err = verify::check_bayes_posterior_grid(ns, ss, 1.3, 0.4, -0.9, 7);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("eps-parameterized mean equals the Bayes posterior mean") {
  Rng rng(3);
  NoiseSchedule ns = build_noise_schedule(30, 1e-3, 0.2);
  for (ShiftMode mode : all_shift_modes()) {
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    Vec mu = {rng.normal(), rng.normal()};
    Vec x0 = {rng.normal(), rng.normal()};
    Vec eps = {rng.normal(), rng.normal()};
    int t = 2 + rng.uniform_int(ns.T - 1);
    CHECK(verify::check_eps_equivalence(ns, ss, mu, x0, eps, t) < 1e-12);
  }
}

TEST_CASE("eps form: zero noise and zero shift") {
  NoiseSchedule ns = build_noise_schedule(10, 1e-3, 0.1);
  Vec x_t = {1.4};
  Vec m = posterior_mean_from_eps(ns, sv({0.0}, 4), sv({0.0}, 3), x_t, {0.0}, 4);
  CHECK(m[0] == Catch::Approx(x_t[0] / std::sqrt(ns.alpha[4])));
}

TEST_CASE("shift terms in the eps form equal the amendment term") {
  NoiseSchedule ns = build_noise_schedule(25, 1e-3, 0.15);
  Vec mu = {0.9, -1.1};
  for (ShiftMode mode : all_shift_modes()) {
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    for (int t = 1; t <= ns.T; t += 7) {
      Vec x_t = {0.3, 0.4};
      ShiftVector st = sv(ss.k[t] * mu, t), sp = sv(ss.k[t - 1] * mu, t - 1);
      Vec with_shift = posterior_mean_from_eps(ns, st, sp, x_t, {0.0, 0.0}, t);
      Vec no_shift = posterior_mean_from_eps(ns, sv({0.0, 0.0}, t), sv({0.0, 0.0}, t - 1),
                                             x_t, {0.0, 0.0}, t);
      Vec d = amendment_term(mode, ns, t, mu);
      CHECK(with_shift[0] - no_shift[0] == Catch::Approx(d[0]).margin(1e-12));
      CHECK(with_shift[1] - no_shift[1] == Catch::Approx(d[1]).margin(1e-12));
    }
  }
}

TEST_CASE("x0_from_g inverts the g-target") {
  NoiseSchedule ns = build_noise_schedule(40, 1e-3, 0.2);
  ShiftSchedule ss = build_shift_schedule(ShiftMode::PriorShift, ns);
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    int t = 1 + rng.uniform_int(ns.T);
    Vec mu = {rng.normal()};
    Vec x0 = {2.0 * rng.normal()};
    Vec eps = {rng.normal()};
    ShiftVector st = sv(ss.k[t] * mu, t);
    Vec x_t = sample_forward(ns, st, x0, t, eps);
    double sab = std::sqrt(ns.alpha_bar[t]), svv = std::sqrt(1.0 - ns.alpha_bar[t]);
    Vec g = {(x_t[0] - sab * x0[0]) / svv};
    Vec back = x0_from_g(ns, st, x_t, g, t);
    REQUIRE(std::abs(back[0] - x0[0]) < 1e-10);
  }
  CHECK_THROWS_AS(x0_from_g(ns, sv({0.0}, 0), {1.0}, {0.0}, 0), contract_error);
}

TEST_CASE("x0_from_g with the pure-shift prediction recovers x0") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.25});
  ShiftVector st = sv({0.6}, 2);
  Vec x0 = {1.1};
  Vec x_t = sample_forward(ns, st, x0, 2, {0.0});
  Vec g = {st.values[0] / std::sqrt(0.75)};
  CHECK(x0_from_g(ns, st, x_t, g, 2)[0] == Catch::Approx(x0[0]).margin(1e-12));
}

TEST_CASE("reverse step with the exact target equals the posterior") {
  Rng rng(23);
  NoiseSchedule ns = build_noise_schedule(35, 1e-3, 0.25);
  for (ShiftMode mode : all_shift_modes()) {
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    Vec mu = {rng.normal(), rng.normal()};
    Vec x0 = {rng.normal(), rng.normal()};
    Vec eps = {rng.normal(), rng.normal()};
    int t = 2 + rng.uniform_int(ns.T - 1);
    ShiftVector st = sv(ss.k[t] * mu, t), sp = sv(ss.k[t - 1] * mu, t - 1);
    Vec x_t = sample_forward(ns, st, x0, t, eps);
    double sab = std::sqrt(ns.alpha_bar[t]), svv = std::sqrt(1.0 - ns.alpha_bar[t]);
    Vec g(2);
    for (int d = 0; d < 2; ++d) g[d] = (x_t[d] - sab * x0[d]) / svv;

    GaussianParams rev = reverse_step_params(ns, st, sp, x_t, g, t);
    GaussianParams post = posterior_params(ns, st, sp, x_t, x0, t);
    CHECK(rev.mean[0] == Catch::Approx(post.mean[0]).margin(1e-12));
    CHECK(rev.mean[1] == Catch::Approx(post.mean[1]).margin(1e-12));
    CHECK(rev.var_scale == Catch::Approx(post.var_scale).margin(1e-15));
  }
}

TEST_CASE("reverse step reduces to DDPM and uses beta_1 at t=1") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.49});
  Vec x_t = {0.7}, g = {0.2};
  GaussianParams rev = reverse_step_params(ns, sv({0.0}, 2), sv({0.0}, 1), x_t, g, 2);
  double want = (x_t[0] - ns.beta[2] / std::sqrt(1.0 - 0.49) * g[0]) / std::sqrt(ns.alpha[2]);
  CHECK(rev.mean[0] == Catch::Approx(want).margin(1e-14));
  CHECK(rev.var_scale == Catch::Approx(0.01960784).epsilon(1e-6));

  GaussianParams r1 = reverse_step_params(ns, sv({0.3}, 1), sv({0.0}, 0), x_t, g, 1);
  CHECK(r1.var_scale == Catch::Approx(ns.beta[1]));
  // alpha_bar[0] = 1 kills the s_t coefficient at t = 1
  GaussianParams r1_noshift = reverse_step_params(ns, sv({0.0}, 1), sv({0.0}, 0), x_t, g, 1);
  CHECK(r1.mean[0] == Catch::Approx(r1_noshift.mean[0]).margin(1e-14));
}

TEST_CASE("ddim sigma values") {
  NoiseSchedule ns = craft({1.0, 0.5, 0.49});
  CHECK(ddim_sigma(ns, 1, 2, 0.0) == 0.0);
  CHECK(ddim_sigma(ns, 1, 2, 1.0) == Catch::Approx(0.1400280).epsilon(1e-5));
  // consecutive-step simplification: sigma(1)^2 = (1-ab_{t-1}) beta_t / (1-ab_t)
  NoiseSchedule ns2 = build_noise_schedule(30, 1e-3, 0.2);
  for (int t = 2; t <= 30; t += 5) {
    double direct = ddim_sigma(ns2, t - 1, t, 1.0);
    double simplified =
        std::sqrt((1.0 - ns2.alpha_bar[t - 1]) * ns2.beta[t] / (1.0 - ns2.alpha_bar[t]));
    CHECK(direct == Catch::Approx(simplified).epsilon(1e-12));
  }
}

TEST_CASE("ddim eta=1 consecutive step is the ancestral step") {
  Rng rng(31);
  NoiseSchedule ns = build_noise_schedule(25, 1e-3, 0.3);
  for (ShiftMode mode : all_shift_modes()) {
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    Vec mu = {rng.normal()}, x_t = {rng.normal()}, g = {rng.normal()};
    int t = 2 + rng.uniform_int(ns.T - 1);
    CHECK(verify::check_ddim_eta1_ancestral(ns, ss, mu, x_t, g, t) < 1e-12);
  }
}

TEST_CASE("ddim deterministic jump with the exact target") {
  NoiseSchedule ns = build_noise_schedule(20, 1e-3, 0.2);
  ShiftSchedule ss = build_shift_schedule(ShiftMode::QuadraticShift, ns);
  Vec mu = {1.0}, x0 = {0.8}, eps = {-0.6};
  int t = 15, tp = 5;
  ShiftVector st = sv(ss.k[t] * mu, t), sp = sv(ss.k[tp] * mu, tp);
  Vec x_t = sample_forward(ns, st, x0, t, eps);
  double sab = std::sqrt(ns.alpha_bar[t]), svv = std::sqrt(1.0 - ns.alpha_bar[t]);
  Vec g = {(x_t[0] - sab * x0[0]) / svv};
  Vec x_prev = ddim_step(ns, st, sp, x_t, g, t, tp, 0.0, {0.0});
  double want = std::sqrt(ns.alpha_bar[tp]) * x0[0] + sp.values[0] +
                std::sqrt(1.0 - ns.alpha_bar[tp]) * eps[0];
  CHECK(x_prev[0] == Catch::Approx(want).margin(1e-12));

  // sigma contract
  double too_big = std::sqrt(1.0 - ns.alpha_bar[tp]) + 0.01;
  CHECK_THROWS_AS(ddim_step(ns, st, sp, x_t, g, t, tp, too_big, {0.0}), contract_error);
}

TEST_CASE("ddim with zero shift is the standard DDIM update") {
  NoiseSchedule ns = build_noise_schedule(20, 1e-3, 0.2);
  Vec x_t = {0.9}, g = {0.1};
  int t = 18, tp = 6;
  Vec got = ddim_step(ns, sv({0.0}, t), sv({0.0}, tp), x_t, g, t, tp, 0.0, {0.0});
  double ab = ns.alpha_bar[t], abp = ns.alpha_bar[tp];
  double x0 = (x_t[0] - std::sqrt(1.0 - ab) * g[0]) / std::sqrt(ab);
  double want = std::sqrt(abp) * x0 + std::sqrt(1.0 - abp) * g[0];
  CHECK(got[0] == Catch::Approx(want).margin(1e-13));
}

TEST_CASE("posterior marginalization consistency") {
  // E over x_t ~ q(x_t | x0, c) of the posterior reproduces q(x_{t-1} | x0, c)
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    int T = 4 + rng.uniform_int(20);
    NoiseSchedule ns = build_noise_schedule(T, 1e-4 + rng.uniform() * 0.005,
                                            0.05 + rng.uniform() * 0.25);
    ShiftMode mode = all_shift_modes()[trial % 8];
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    Vec mu = {2.0 * rng.normal()}, x0 = {rng.normal()};
    int t = 2 + rng.uniform_int(T - 1);
    ShiftVector st = sv(ss.k[t] * mu, t), sp = sv(ss.k[t - 1] * mu, t - 1);

    GaussianParams marg_t = forward_marginal(ns, st, x0, t);
    // posterior mean is affine in x_t: extract slope and intercept
    GaussianParams at0 = posterior_params(ns, st, sp, {0.0}, x0, t);
    GaussianParams at1 = posterior_params(ns, st, sp, {1.0}, x0, t);
    double slope = at1.mean[0] - at0.mean[0];
    double mean_out = slope * marg_t.mean[0] + at0.mean[0];
    double var_out = slope * slope * marg_t.var_scale + at0.var_scale;

    GaussianParams marg_prev = forward_marginal(ns, sp, x0, t - 1);
    CHECK(std::abs(mean_out - marg_prev.mean[0]) <=
          1e-10 * std::max(1.0, std::abs(marg_prev.mean[0])));
    CHECK(std::abs(var_out - marg_prev.var_scale) <= 1e-10);
  }
}
