#pragma once

#include <algorithm>

#include "shiftdiff/diffusion.hpp"
#include "shiftdiff/rng.hpp"

namespace shiftdiff {
namespace verify {

// Relative error with an absolute floor of 1.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// (a) Composing the per-step kernels t = 1..T reproduces the closed-form
// marginal mean and variance at every t.
inline double check_kernel_composition(const NoiseSchedule& ns, const ShiftSchedule& ss,
                                       const Vec& mu, const Vec& x0) {
  size_t d = x0.size();
  Vec mean = x0;
  double var = 0.0;
  double worst = 0.0;
  for (int t = 1; t <= ns.T; ++t) {
    ShiftVector st{ss.k[t] * mu, t};
    ShiftVector sp{ss.k[t - 1] * mu, t - 1};
    GaussianParams ker = forward_kernel(ns, st, sp, mean, t);
    mean = ker.mean;
    var = ns.alpha[t] * var + ker.var_scale;
    GaussianParams marg = forward_marginal(ns, st, x0, t);
    for (size_t i = 0; i < d; ++i) worst = std::max(worst, rel_err(mean[i], marg.mean[i]));
    worst = std::max(worst, rel_err(var, marg.var_scale));
  }
  return worst;
}

// (b) 1-D Bayes via Simpson quadrature on the product of the prior marginal
// and the kernel likelihood; independent of the closed-form posterior.
inline double check_bayes_posterior_grid(const NoiseSchedule& ns, const ShiftSchedule& ss,
                                         double mu, double x0, double x_t, int t) {
  double s_t = ss.k[t] * mu, s_p = ss.k[t - 1] * mu;
  double prior_mean = std::sqrt(ns.alpha_bar[t - 1]) * x0 + s_p;
  double prior_var = 1.0 - ns.alpha_bar[t - 1];
  double sa = std::sqrt(ns.alpha[t]);
  double lik_b = s_t - sa * s_p;
  double lik_var = ns.beta[t];

  auto logf = [&](double u) {
    double r1 = u - prior_mean;
    double r2 = x_t - (sa * u + lik_b);
    return -0.5 * r1 * r1 / prior_var - 0.5 * r2 * r2 / lik_var;
  };

  // locate the mode on a coarse grid, then refine; the log-integrand is an
  // exact quadratic so a second difference gives the curvature exactly
  double lo = std::min(prior_mean, (x_t - lik_b) / sa) - 12.0 * std::sqrt(prior_var + lik_var);
  double hi = std::max(prior_mean, (x_t - lik_b) / sa) + 12.0 * std::sqrt(prior_var + lik_var);
  int coarse = 20000;
  double best_u = lo, best_v = -1e300;
  for (int i = 0; i <= coarse; ++i) {
    double u = lo + (hi - lo) * i / coarse;
    double v = logf(u);
    if (v > best_v) {
      best_v = v;
      best_u = u;
    }
  }
  double h0 = (hi - lo) / coarse;
  double curv = (logf(best_u + h0) - 2.0 * logf(best_u) + logf(best_u - h0)) / (h0 * h0);
  double sigma = std::sqrt(-1.0 / curv);
  // Newton step for a quadratic lands on the exact mode
  double grad = (logf(best_u + h0) - logf(best_u - h0)) / (2.0 * h0);
  best_u += -grad / curv;

  int n = 4000;  // Simpson nodes (even)
  double a = best_u - 12.0 * sigma, b = best_u + 12.0 * sigma;
  double h = (b - a) / n;
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i <= n; ++i) {
    double u = a + h * i;
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    double f = std::exp(logf(u) - best_v) * w;
    z += f;
    m1 += f * u;
    m2 += f * u * u;
  }
  double q_mean = m1 / z;
  double q_var = m2 / z - q_mean * q_mean;

  ShiftVector st{{s_t}, t}, sp{{s_p}, t - 1};
  GaussianParams post = posterior_params(ns, st, sp, {x_t}, {x0}, t);
  return std::max(rel_err(q_mean, post.mean[0]), rel_err(q_var, post.var_scale));
}

// (c) Eq.(8) posterior mean equals the eps-parameterized mean when eps is the
// noise that generated x_t.
inline double check_eps_equivalence(const NoiseSchedule& ns, const ShiftSchedule& ss,
                                    const Vec& mu, const Vec& x0, const Vec& eps, int t) {
  ShiftVector st{ss.k[t] * mu, t}, sp{ss.k[t - 1] * mu, t - 1};
  Vec x_t = sample_forward(ns, st, x0, t, eps);
  GaussianParams post = posterior_params(ns, st, sp, x_t, x0, t);
  Vec m2 = posterior_mean_from_eps(ns, st, sp, x_t, eps, t);
  double worst = 0.0;
  for (size_t i = 0; i < x0.size(); ++i) worst = std::max(worst, rel_err(post.mean[i], m2[i]));
  return worst;
}

// (d) Prior-Shift amendment closed form d_t = (1 - 1/sqrt(a_t)) mu.
inline double check_amendment_prior_shift(const NoiseSchedule& ns, const Vec& mu) {
  double worst = 0.0;
  for (int t = 1; t <= ns.T; ++t) {
    Vec d = amendment_term(ShiftMode::PriorShift, ns, t, mu);
    double c = 1.0 - 1.0 / std::sqrt(ns.alpha[t]);
    for (size_t i = 0; i < mu.size(); ++i) worst = std::max(worst, rel_err(d[i], c * mu[i]));
  }
  return worst;
}

// (e) The implicit step with eta = 1 at consecutive timesteps matches the
// ancestral reverse kernel in both mean and standard deviation, for any g.
inline double check_ddim_eta1_ancestral(const NoiseSchedule& ns, const ShiftSchedule& ss,
                                        const Vec& mu, const Vec& x_t, const Vec& g, int t) {
  ShiftVector st{ss.k[t] * mu, t}, sp{ss.k[t - 1] * mu, t - 1};
  double sigma = ddim_sigma(ns, t - 1, t, 1.0);
  Vec zero(x_t.size(), 0.0);
  Vec ddim_mean = ddim_step(ns, st, sp, x_t, g, t, t - 1, sigma, zero);
  GaussianParams rev = reverse_step_params(ns, st, sp, x_t, g, t);
  double worst = rel_err(sigma, std::sqrt(rev.var_scale));
  for (size_t i = 0; i < x_t.size(); ++i)
    worst = std::max(worst, rel_err(ddim_mean[i], rev.mean[i]));
  return worst;
}

// (f) Iterating the SDE discretization X_t = sqrt(a_t) X_{t-1} + (1-sqrt(a_t)) mu
// + sqrt(1-a_t) z reproduces the k_t = 1 - sqrt(ab_t) marginal.
inline double check_sde_prior_discretization(const NoiseSchedule& ns, double mu, double x0) {
  double mean = x0, var = 0.0, worst = 0.0;
  for (int t = 1; t <= ns.T; ++t) {
    double sa = std::sqrt(ns.alpha[t]);
    mean = sa * mean + (1.0 - sa) * mu;
    var = ns.alpha[t] * var + (1.0 - ns.alpha[t]);
    double k = shift_coefficient(ShiftMode::PriorShift, ns, t);
    double want_mean = std::sqrt(ns.alpha_bar[t]) * x0 + k * mu;
    double want_var = 1.0 - ns.alpha_bar[t];
    worst = std::max({worst, rel_err(mean, want_mean), rel_err(var, want_var)});
  }
  return worst;
}

// (g) Data-Normalization amendments: d_1 = mu and d_t = 0 for t > 1.
inline double check_datanorm_dterms(const NoiseSchedule& ns, const Vec& mu) {
  double worst = 0.0;
  for (int t = 1; t <= ns.T; ++t) {
    Vec d = amendment_term(ShiftMode::DataNormalization, ns, t, mu);
    for (size_t i = 0; i < mu.size(); ++i) {
      double want = (t == 1) ? mu[i] : 0.0;
      worst = std::max(worst, rel_err(d[i], want));
    }
  }
  return worst;
}

struct IdentityReport {
  std::string name;
  double max_err = 0.0;
  bool pass = false;
};

// Runs all seven identity families over random schedules, modes, dimensions
// and shift vectors. Every family must hold to `tol` relative error.
inline std::vector<IdentityReport> verify_derivations(int trials, uint64_t seed,
                                                      double tol = 1e-9) {
  require(trials >= 1, "verify: trials must be >= 1");
  std::vector<IdentityReport> reps = {
      {"kernel_composition"}, {"bayes_posterior_grid"},   {"eps_equivalence"},
      {"amendment_prior_shift"}, {"ddim_eta1_ancestral"}, {"sde_prior_discretization"},
      {"data_normalization_dterms"}};

  Rng rng(seed, 0x5eed);
  for (int trial = 0; trial < trials; ++trial) {
    int T = 4 + rng.uniform_int(27);
    double b0 = 1e-4 + rng.uniform() * 5e-3;
    double b1 = b0 + rng.uniform() * 0.25;
    NoiseSchedule ns = build_noise_schedule(T, b0, b1);
    ShiftMode mode = all_shift_modes()[trial % 8];
    ShiftSchedule ss = build_shift_schedule(mode, ns);
    int d = 1 + rng.uniform_int(4);
    Vec mu(d), x0(d), eps(d), g(d), x_t(d);
    for (int i = 0; i < d; ++i) {
      mu[i] = 2.0 * rng.normal();
      x0[i] = rng.normal();
      eps[i] = rng.normal();
      g[i] = rng.normal();
      x_t[i] = 2.0 * rng.normal();
    }
    int t = 2 + rng.uniform_int(T - 1);  // [2, T]

    reps[0].max_err = std::max(reps[0].max_err, check_kernel_composition(ns, ss, mu, x0));
    reps[1].max_err = std::max(
        reps[1].max_err, check_bayes_posterior_grid(ns, ss, mu[0], x0[0], x_t[0], t));
    reps[2].max_err =
        std::max(reps[2].max_err, check_eps_equivalence(ns, ss, mu, x0, eps, t));
    reps[3].max_err = std::max(reps[3].max_err, check_amendment_prior_shift(ns, mu));
    reps[4].max_err =
        std::max(reps[4].max_err, check_ddim_eta1_ancestral(ns, ss, mu, x_t, g, t));
    reps[5].max_err =
        std::max(reps[5].max_err, check_sde_prior_discretization(ns, mu[0], x0[0]));
    reps[6].max_err = std::max(reps[6].max_err, check_datanorm_dterms(ns, mu));
  }
  for (auto& r : reps) r.pass = r.max_err <= tol;
  return reps;
}

}  // namespace verify
}  // namespace shiftdiff
