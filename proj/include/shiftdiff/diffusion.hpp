#pragma once

#include <cmath>

#include "shiftdiff/schedules.hpp"

namespace shiftdiff {

// Gaussian with covariance var_scale * diag(sigma_diag). An empty sigma_diag
// means the identity; full matrices are never materialized.
struct GaussianParams {
  Vec mean;
  double var_scale = 0.0;
  Vec sigma_diag;  // empty = ones
};

// Cumulative shift s_t = k_t * E(c), tagged with the timestep it belongs to.
struct ShiftVector {
  Vec values;
  int t = 0;
};

inline void check_shift(const ShiftVector& s, int t, size_t dim, const char* who) {
  if (s.t != t)
    throw contract_error(std::string(who) + ": shift tagged t=" + std::to_string(s.t) +
                         ", expected t=" + std::to_string(t));
  if (s.values.size() != dim)
    throw shape_error(std::string(who) + ": shift dim " + std::to_string(s.values.size()) +
                      " != data dim " + std::to_string(dim));
}

// q(x_t | x_0, c) = N(sqrt(ab_t) x0 + s_t, (1 - ab_t) Sigma)
inline GaussianParams forward_marginal(const NoiseSchedule& ns, const ShiftVector& shift,
                                       const Vec& x0, int t, const Vec& sigma_diag = {}) {
  ns.check_t(t, 1);
  check_shift(shift, t, x0.size(), "forward_marginal");
  double sab = std::sqrt(ns.alpha_bar[t]);
  GaussianParams out;
  out.mean.resize(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out.mean[i] = sab * x0[i] + shift.values[i];
  out.var_scale = 1.0 - ns.alpha_bar[t];
  out.sigma_diag = sigma_diag;
  return out;
}

// x_t = sqrt(ab_t) x0 + s_t + sqrt(1 - ab_t) * noise, noise ~ N(0, Sigma).
inline Vec sample_forward(const NoiseSchedule& ns, const ShiftVector& shift, const Vec& x0,
                          int t, const Vec& noise) {
  ns.check_t(t, 0);
  if (t == 0) return x0;  // alpha_bar[0] = 1, k_0 = 0: identity
  check_shift(shift, t, x0.size(), "sample_forward");
  require_shape(noise.size() == x0.size(), "sample_forward: noise dim mismatch");
  double sab = std::sqrt(ns.alpha_bar[t]);
  double sv = std::sqrt(1.0 - ns.alpha_bar[t]);
  Vec x(x0.size());
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = sab * x0[i] + shift.values[i] + sv * noise[i];
  return x;
}

// q(x_t | x_{t-1}, c) = N(sqrt(a_t) x_{t-1} + s_t - sqrt(a_t) s_{t-1}, b_t Sigma)
inline GaussianParams forward_kernel(const NoiseSchedule& ns, const ShiftVector& shift_t,
                                     const ShiftVector& shift_prev, const Vec& x_prev, int t,
                                     const Vec& sigma_diag = {}) {
  ns.check_t(t, 1);
  check_shift(shift_t, t, x_prev.size(), "forward_kernel");
  check_shift(shift_prev, t - 1, x_prev.size(), "forward_kernel");
  double sa = std::sqrt(ns.alpha[t]);
  GaussianParams out;
  out.mean.resize(x_prev.size());
  for (size_t i = 0; i < x_prev.size(); ++i)
    out.mean[i] = sa * x_prev[i] + shift_t.values[i] - sa * shift_prev.values[i];
  out.var_scale = ns.beta[t];
  out.sigma_diag = sigma_diag;
  return out;
}

// Bayes posterior q(x_{t-1} | x_t, x_0, c), t >= 2.
inline GaussianParams posterior_params(const NoiseSchedule& ns, const ShiftVector& shift_t,
                                       const ShiftVector& shift_prev, const Vec& x_t,
                                       const Vec& x0, int t, const Vec& sigma_diag = {}) {
  if (t < 2)
    throw contract_error("posterior_params: t must be >= 2 (t=1 uses the decoder term)");
  ns.check_t(t);
  check_shift(shift_t, t, x_t.size(), "posterior_params");
  check_shift(shift_prev, t - 1, x_t.size(), "posterior_params");
  require_shape(x0.size() == x_t.size(), "posterior_params: x0/x_t dim mismatch");

  double ab = ns.alpha_bar[t], abp = ns.alpha_bar[t - 1];
  double bt = ns.beta[t], sa = std::sqrt(ns.alpha[t]);
  double cx0 = std::sqrt(abp) * bt / (1.0 - ab);
  double cxt = sa * (1.0 - abp) / (1.0 - ab);

  GaussianParams out;
  out.mean.resize(x_t.size());
  for (size_t i = 0; i < x_t.size(); ++i)
    out.mean[i] = cx0 * x0[i] + cxt * x_t[i] - cxt * shift_t.values[i] + shift_prev.values[i];
  out.var_scale = (1.0 - abp) * bt / (1.0 - ab);
  out.sigma_diag = sigma_diag;
  return out;
}

// Posterior mean written in terms of the true noise (eps parameterization).
inline Vec posterior_mean_from_eps(const NoiseSchedule& ns, const ShiftVector& shift_t,
                                   const ShiftVector& shift_prev, const Vec& x_t,
                                   const Vec& eps, int t) {
  ns.check_t(t, 1);
  check_shift(shift_t, t, x_t.size(), "posterior_mean_from_eps");
  check_shift(shift_prev, t - 1, x_t.size(), "posterior_mean_from_eps");
  require_shape(eps.size() == x_t.size(), "posterior_mean_from_eps: eps dim mismatch");
  double isa = 1.0 / std::sqrt(ns.alpha[t]);
  double ce = ns.beta[t] / std::sqrt(1.0 - ns.alpha_bar[t]);
  Vec m(x_t.size());
  for (size_t i = 0; i < m.size(); ++i)
    m[i] = isa * (x_t[i] - ce * eps[i]) - isa * shift_t.values[i] + shift_prev.values[i];
  return m;
}

// Invert the g-target definition: x0 = (x_t - sqrt(1-ab_t) g) / sqrt(ab_t).
inline Vec x0_from_g(const NoiseSchedule& ns, const ShiftVector& shift_t, const Vec& x_t,
                     const Vec& g, int t) {
  ns.check_t(t, 1);
  check_shift(shift_t, t, x_t.size(), "x0_from_g");
  require_shape(g.size() == x_t.size(), "x0_from_g: g dim mismatch");
  double ab = ns.alpha_bar[t];
  if (!(ab > 0.0)) throw contract_error("x0_from_g: alpha_bar[t] must be positive");
  double sab = std::sqrt(ab), sv = std::sqrt(1.0 - ab);
  Vec x0(x_t.size());
  for (size_t i = 0; i < x0.size(); ++i) x0[i] = (x_t[i] - sv * g[i]) / sab;
  return x0;
}

// Model reverse kernel p(x_{t-1} | x_t, c) parameterized by g. At t = 1 the
// s_t coefficient vanishes (alpha_bar[0] = 1) and the variance is beta_1.
inline GaussianParams reverse_step_params(const NoiseSchedule& ns, const ShiftVector& shift_t,
                                          const ShiftVector& shift_prev, const Vec& x_t,
                                          const Vec& g, int t, const Vec& sigma_diag = {}) {
  ns.check_t(t, 1);
  check_shift(shift_t, t, x_t.size(), "reverse_step_params");
  check_shift(shift_prev, t - 1, x_t.size(), "reverse_step_params");
  require_shape(g.size() == x_t.size(), "reverse_step_params: g dim mismatch");

  double ab = ns.alpha_bar[t], abp = ns.alpha_bar[t - 1];
  double bt = ns.beta[t];
  double isa = 1.0 / std::sqrt(ns.alpha[t]);
  double cg = bt / std::sqrt(1.0 - ab);
  double cs = std::sqrt(ns.alpha[t]) * (1.0 - abp) / (1.0 - ab);

  GaussianParams out;
  out.mean.resize(x_t.size());
  for (size_t i = 0; i < x_t.size(); ++i)
    out.mean[i] = isa * (x_t[i] - cg * g[i]) - cs * shift_t.values[i] + shift_prev.values[i];
  out.var_scale = (t >= 2) ? (1.0 - abp) * bt / (1.0 - ab) : bt;
  out.sigma_diag = sigma_diag;
  return out;
}

// sigma_{tau_i}(eta) for the implicit sampler over a sub-sequence.
inline double ddim_sigma(const NoiseSchedule& ns, int tau_prev, int tau_i, double eta) {
  ns.check_t(tau_i, 1);
  ns.check_t(tau_prev, 0);
  require(tau_prev < tau_i, "ddim_sigma: tau_prev must be < tau_i");
  require(eta >= 0.0, "ddim_sigma: eta must be >= 0");
  double ab = ns.alpha_bar[tau_i], abp = ns.alpha_bar[tau_prev];
  return eta * std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
}

// Implicit (DDIM-style) jump from t to t_prev. With t_prev = t-1 and
// sigma = ddim_sigma(.., eta=1) this reproduces reverse_step_params exactly.
inline Vec ddim_step(const NoiseSchedule& ns, const ShiftVector& shift_t,
                     const ShiftVector& shift_prev, const Vec& x_t, const Vec& g, int t,
                     int t_prev, double sigma, const Vec& noise) {
  ns.check_t(t, 1);
  ns.check_t(t_prev, 0);
  require(t_prev < t, "ddim_step: t_prev must be < t");
  check_shift(shift_t, t, x_t.size(), "ddim_step");
  check_shift(shift_prev, t_prev, x_t.size(), "ddim_step");
  require_shape(g.size() == x_t.size(), "ddim_step: g dim mismatch");

  double ab = ns.alpha_bar[t], abp = ns.alpha_bar[t_prev];
  double rem = 1.0 - abp - sigma * sigma;
  if (rem < -1e-15)
    throw contract_error("ddim_step: sigma^2 exceeds 1 - alpha_bar[t_prev]");
  if (rem < 0.0) rem = 0.0;

  double sab = std::sqrt(ab), sabp = std::sqrt(abp);
  double sv = std::sqrt(1.0 - ab);
  double cdir = std::sqrt(rem);

  Vec x(x_t.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double x0 = (x_t[i] - sv * g[i]) / sab;
    double eps_pred = g[i] - shift_t.values[i] / sv;
    x[i] = sabp * x0 + shift_prev.values[i] + cdir * eps_pred;
    if (sigma > 0.0) {
      require_shape(noise.size() == x_t.size(), "ddim_step: noise dim mismatch");
      x[i] += sigma * noise[i];
    }
  }
  return x;
}

}  // namespace shiftdiff
