#pragma once

#include <cmath>

#include "shiftdiff/diffusion.hpp"
#include "shiftdiff/model.hpp"

namespace shiftdiff {

// Variational-bound weights: gamma_1 = 1/(2 a_1), gamma_t = b_t/(2 a_t (1-ab_{t-1})).
inline double gamma_weight(const NoiseSchedule& ns, int t) {
  ns.check_t(t, 1);
  if (t == 1) return 1.0 / (2.0 * ns.alpha[1]);
  return ns.beta[t] / (2.0 * ns.alpha[t] * (1.0 - ns.alpha_bar[t - 1]));
}

// KL[q(x_T | x0, c) || p(x_T)] in closed form. The shift s_T offsets both
// means identically and cancels.
inline double prior_kl(const NoiseSchedule& ns, const ShiftVector& shift_T, const Vec& x0,
                       const Vec& sigma_diag = {}) {
  check_shift(shift_T, ns.T, x0.size(), "prior_kl");
  double ab = ns.alpha_bar[ns.T];
  double d = static_cast<double>(x0.size());
  double quad = 0.0;
  for (size_t i = 0; i < x0.size(); ++i) {
    double inv_sigma = sigma_diag.empty() ? 1.0 : 1.0 / sigma_diag[i];
    quad += ab * x0[i] * x0[i] * inv_sigma;
  }
  return 0.5 * (-d * std::log(1.0 - ab) + d * (1.0 - ab) - d + quad);
}

struct BoundReport {
  int dim = 0;
  int T = 0;
  Vec per_t_terms;  // index t in [2, T]; entries 0 and 1 unused
  double decoder_term = 0.0;            // full -log p(x0 | x1, c) estimate
  double decoder_log_normalizer = 0.0;  // (1/2) log[(2 pi b_1)^d |Sigma|]
  double prior_term = 0.0;

  double total_nats() const {
    double s = decoder_term + prior_term;
    for (int t = 2; t < static_cast<int>(per_t_terms.size()); ++t) s += per_t_terms[t];
    return s;
  }
  double bits_per_dim() const { return total_nats() / (dim * std::log(2.0)); }
};

// Full bound with stratified t: every timestep gets mc_per_t Monte-Carlo draws
// of eps; the decoder and per-step terms use the closed-form expansions, the
// prior term is exact.
inline BoundReport variational_bound(const GModel& model, const ShiftTable& shifts,
                                     const NoiseSchedule& ns, const Vec& x0, Rng rng,
                                     int mc_per_t, const Vec& sigma_diag = {}) {
  require(mc_per_t >= 1, "variational_bound: mc_per_t must be >= 1");
  int d = static_cast<int>(x0.size());
  BoundReport rep;
  rep.dim = d;
  rep.T = ns.T;
  rep.per_t_terms.assign(ns.T + 1, 0.0);

  double log_det_sigma = 0.0;
  if (!sigma_diag.empty())
    for (double s : sigma_diag) log_det_sigma += std::log(s);
  rep.decoder_log_normalizer =
      0.5 * (d * std::log(2.0 * M_PI * ns.beta[1]) + log_det_sigma);
  rep.prior_term = prior_kl(ns, shift_at(shifts, ns.T), x0, sigma_diag);

  Matrix xt(mc_per_t, d), target(mc_per_t, d), g;
  Vec noise(d);
  for (int t = 1; t <= ns.T; ++t) {
    double sab = std::sqrt(ns.alpha_bar[t]);
    double sv = std::sqrt(1.0 - ns.alpha_bar[t]);
    const double* s_t = shifts.row(t);
    for (int m = 0; m < mc_per_t; ++m) {
      for (int i = 0; i < d; ++i) {
        double sd = sigma_diag.empty() ? 1.0 : std::sqrt(sigma_diag[i]);
        noise[i] = sd * rng.normal();
      }
      for (int i = 0; i < d; ++i) {
        xt.at(m, i) = sab * x0[i] + s_t[i] + sv * noise[i];
        target.at(m, i) = (xt.at(m, i) - sab * x0[i]) / sv;
      }
    }
    model.predict(xt, t, g);
    double mse = 0.0;
    for (int m = 0; m < mc_per_t; ++m)
      for (int i = 0; i < d; ++i) {
        double inv_sigma = sigma_diag.empty() ? 1.0 : 1.0 / sigma_diag[i];
        double r = g.at(m, i) - target.at(m, i);
        mse += r * r * inv_sigma;
      }
    mse /= mc_per_t;
    double term = gamma_weight(ns, t) * mse;
    if (t == 1) {
      rep.decoder_term = rep.decoder_log_normalizer + term;
    } else {
      rep.per_t_terms[t] = term;
    }
  }
  return rep;
}

// Fraction of samples whose nearest class mean (Euclidean) is the claimed one.
inline double conditional_accuracy(const Matrix& samples, const GmmSpec& gmm, int claimed_class) {
  require(samples.rows() > 0, "conditional_accuracy: empty batch");
  gmm.check_class(claimed_class);
  std::vector<Vec> means;
  means.reserve(gmm.num_classes());
  for (int c = 0; c < gmm.num_classes(); ++c) means.push_back(gmm.class_mean(c));
  int hits = 0;
  for (int i = 0; i < samples.rows(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < gmm.num_classes(); ++c) {
      double dist = 0.0;
      for (int d = 0; d < samples.cols(); ++d) {
        double diff = samples.at(i, d) - means[c][d];
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    if (best == claimed_class) ++hits;
  }
  return static_cast<double>(hits) / samples.rows();
}

}  // namespace shiftdiff
