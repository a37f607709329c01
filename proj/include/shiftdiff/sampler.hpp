#pragma once

#include <optional>

#include "shiftdiff/eval.hpp"
#include "shiftdiff/model.hpp"

namespace shiftdiff {

struct CriticalWindow {
  int t1 = 0;
  int t2 = 0;

  int width() const { return t2 - t1; }
  bool contains(int t) const { return t1 < t && t <= t2; }  // (t1, t2]
};

namespace detail {

// Chains own independent child streams of the caller's rng, so sharded
// execution and different batch sizes reproduce the same per-chain draws.
inline std::vector<Rng> chain_streams(const Rng& rng, int count) {
  std::vector<Rng> streams;
  streams.reserve(count);
  for (int i = 0; i < count; ++i) streams.push_back(rng.child(i));
  return streams;
}

inline void init_from_prior(Matrix& x, const ShiftTable& shifts, int t0,
                            std::vector<Rng>& streams, const Vec& sigma_diag) {
  int d = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    double* row = x.row(i);
    const double* s = shifts.row(t0);
    for (int k = 0; k < d; ++k) {
      double sd = sigma_diag.empty() ? 1.0 : std::sqrt(sigma_diag[k]);
      row[k] = s[k] + sd * streams[i].normal();
    }
  }
}

}  // namespace detail

// Algorithm: start x_T ~ N(s_T, Sigma), walk t = T..1 with the parameterized
// reverse kernel; no noise is added at the final step.
inline Matrix sample_ancestral_table(const GModel& model, const ShiftTable& shifts,
                                     const NoiseSchedule& ns, int count, const Rng& rng,
                                     const Vec& sigma_diag = {},
                                     const GModel* outside_model = nullptr,
                                     const CriticalWindow* window = nullptr) {
  int d = model.dim();
  require_shape(shifts.cols() == d && shifts.rows() == ns.T + 1,
                "sample: shift table shape mismatch");
  auto streams = detail::chain_streams(rng, count);
  Matrix x(count, d), g;
  detail::init_from_prior(x, shifts, ns.T, streams, sigma_diag);

  for (int t = ns.T; t >= 1; --t) {
    const GModel* m = &model;
    if (window && outside_model) m = window->contains(t) ? &model : outside_model;
    m->predict(x, t, g);

    double ab = ns.alpha_bar[t], abp = ns.alpha_bar[t - 1], bt = ns.beta[t];
    double isa = 1.0 / std::sqrt(ns.alpha[t]);
    double cg = bt / std::sqrt(1.0 - ab);
    double cs = std::sqrt(ns.alpha[t]) * (1.0 - abp) / (1.0 - ab);
    double sd_step = (t >= 2) ? std::sqrt((1.0 - abp) * bt / (1.0 - ab)) : 0.0;
    const double* s_t = shifts.row(t);
    const double* s_p = shifts.row(t - 1);

    for (int i = 0; i < count; ++i) {
      double* row = x.row(i);
      const double* gi = g.row(i);
      for (int k = 0; k < d; ++k) {
        double mean = isa * (row[k] - cg * gi[k]) - cs * s_t[k] + s_p[k];
        row[k] = mean;
      }
      if (t >= 2) {
        for (int k = 0; k < d; ++k) {
          double sd = sigma_diag.empty() ? 1.0 : std::sqrt(sigma_diag[k]);
          row[k] += sd_step * sd * streams[i].normal();
        }
      }
    }
  }
  return x;
}

inline Matrix sample_ancestral(const GModel& model, const ShiftPredictor& pred,
                               const ShiftSchedule& ss, const NoiseSchedule& ns,
                               int condition, int count, const Rng& rng,
                               const Vec& sigma_diag = {}) {
  return sample_ancestral_table(model, make_shift_table(ss, pred.predict(condition)), ns,
                                count, rng, sigma_diag);
}

// Evenly spaced ascending sub-sequence of [1, T] of length S, ending at T.
inline std::vector<int> make_subsequence(int T, int S) {
  require(S >= 1 && S <= T, "subsequence length must lie in [1, T]");
  std::vector<int> tau(S);
  for (int i = 0; i < S; ++i)
    tau[i] = static_cast<int>(std::llround(static_cast<double>(T) * (i + 1) / S));
  for (int i = 1; i < S; ++i) require(tau[i] > tau[i - 1], "subsequence not increasing");
  return tau;
}

// Implicit sampler over an ascending sub-sequence tau (tau.back() == T by
// convention); the final jump targets t = 0 where sigma is forced to 0.
inline Matrix sample_ddim_table(const GModel& model, const ShiftTable& shifts,
                                const NoiseSchedule& ns, const std::vector<int>& tau,
                                double eta, int count, const Rng& rng,
                                const Vec& sigma_diag = {}) {
  require(!tau.empty(), "sample_ddim: tau must not be empty");
  for (size_t i = 0; i < tau.size(); ++i) {
    ns.check_t(tau[i], 1);
    if (i > 0) require(tau[i] > tau[i - 1], "sample_ddim: tau must be strictly increasing");
  }
  require(tau.back() == ns.T, "sample_ddim: tau must end at T");

  int d = model.dim();
  auto streams = detail::chain_streams(rng, count);
  Matrix x(count, d), g;
  detail::init_from_prior(x, shifts, ns.T, streams, sigma_diag);

  for (int i = static_cast<int>(tau.size()) - 1; i >= 0; --i) {
    int t = tau[i];
    int tp = (i > 0) ? tau[i - 1] : 0;
    model.predict(x, t, g);

    double sigma = ddim_sigma(ns, tp, t, eta);
    double ab = ns.alpha_bar[t], abp = ns.alpha_bar[tp];
    double sab = std::sqrt(ab), sabp = std::sqrt(abp), sv = std::sqrt(1.0 - ab);
    double rem = 1.0 - abp - sigma * sigma;
    if (rem < 0.0) rem = 0.0;
    double cdir = std::sqrt(rem);
    const double* s_t = shifts.row(t);
    const double* s_p = shifts.row(tp);

    for (int q = 0; q < count; ++q) {
      double* row = x.row(q);
      const double* gq = g.row(q);
      for (int k = 0; k < d; ++k) {
        double x0 = (row[k] - sv * gq[k]) / sab;
        double eps_pred = gq[k] - s_t[k] / sv;
        row[k] = sabp * x0 + s_p[k] + cdir * eps_pred;
      }
      if (sigma > 0.0) {
        for (int k = 0; k < d; ++k) {
          double sd = sigma_diag.empty() ? 1.0 : std::sqrt(sigma_diag[k]);
          row[k] += sigma * sd * streams[q].normal();
        }
      }
    }
  }
  return x;
}

inline Matrix sample_ddim(const GModel& model, const ShiftPredictor& pred,
                          const ShiftSchedule& ss, const NoiseSchedule& ns, int condition,
                          const std::vector<int>& tau, double eta, int count, const Rng& rng,
                          const Vec& sigma_diag = {}) {
  return sample_ddim_table(model, make_shift_table(ss, pred.predict(condition)), ns, tau,
                           eta, count, rng, sigma_diag);
}

// Figure-1 style mixed sampling: unconditional dynamics outside the window,
// conditional inside (t1, t2]. Both models must share the unconditional
// forward process (mode None), so the shift table is zero.
inline Matrix sample_mixed(const GModel& uncond_model, const GModel& cond_model,
                           const NoiseSchedule& ns, const CriticalWindow& window, int count,
                           const Rng& rng, const Vec& sigma_diag = {}) {
  require(uncond_model.dim() == cond_model.dim(), "sample_mixed: model dims differ");
  require(window.t1 >= 0 && window.t1 <= window.t2 && window.t2 <= ns.T,
          "sample_mixed: window outside [0, T]");
  ShiftTable zero(ns.T + 1, uncond_model.dim());
  return sample_ancestral_table(cond_model, zero, ns, count, rng, sigma_diag,
                                &uncond_model, &window);
}

// Mean conditional accuracy of mixed sampling over all classes.
inline double mixed_window_accuracy(const GModel& uncond_model,
                                    const std::vector<const GModel*>& cond_models,
                                    const NoiseSchedule& ns, const GmmSpec& gmm,
                                    const CriticalWindow& w, int count_per_class,
                                    const Rng& rng) {
  double acc = 0.0;
  for (int c = 0; c < gmm.num_classes(); ++c) {
    Rng stream = rng.child(static_cast<uint64_t>(w.t1) * (ns.T + 1) + w.t2).child(c);
    Matrix s = sample_mixed(uncond_model, *cond_models[c], ns, w, count_per_class, stream);
    acc += conditional_accuracy(s, gmm, c);
  }
  return acc / gmm.num_classes();
}

// Shortest window on the stride grid whose mixed-sampling accuracy reaches the
// threshold; ties broken by smaller t1. Widths are scanned ascending, so the
// first hit wins.
inline std::optional<CriticalWindow> grid_search_window(
    const GModel& uncond_model, const std::vector<const GModel*>& cond_models,
    const NoiseSchedule& ns, const GmmSpec& gmm, int stride, double threshold,
    int count_per_class, const Rng& rng,
    std::vector<std::pair<CriticalWindow, double>>* trace = nullptr) {
  require(stride >= 1 && stride <= ns.T, "grid_search_window: invalid stride");
  require(static_cast<int>(cond_models.size()) == gmm.num_classes(),
          "grid_search_window: one conditional model per class required");
  for (int width = 0; width <= ns.T; width += stride) {
    for (int t1 = 0; t1 + width <= ns.T; t1 += stride) {
      CriticalWindow w{t1, t1 + width};
      double acc = mixed_window_accuracy(uncond_model, cond_models, ns, gmm, w,
                                         count_per_class, rng);
      if (trace) trace->push_back({w, acc});
      if (acc >= threshold) return w;
    }
    // make sure the full window [0, T] is always on the grid
    if (width < ns.T && width + stride > ns.T) width = ns.T - stride;
  }
  return std::nullopt;
}

// Trajectory interpolation: s_t is replaced by k_t * (lambda E(c1) + (1-lambda) E(c2))
// everywhere, including initialization and the amendment terms.
inline Matrix sample_interpolated(const GModel& model, const ShiftPredictor& pred,
                                  const ShiftSchedule& ss, const NoiseSchedule& ns, int c1,
                                  int c2, double lambda, int count, const Rng& rng,
                                  const Vec& sigma_diag = {}) {
  Vec e_hat = pred.interpolate(c1, c2, lambda);
  return sample_ancestral_table(model, make_shift_table(ss, e_hat), ns, count, rng,
                                sigma_diag);
}

}  // namespace shiftdiff
