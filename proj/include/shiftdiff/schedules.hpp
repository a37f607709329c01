#pragma once

#include <cmath>
#include <array>
#include <string>
#include <string_view>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

// Discretization tables for the forward process. All arrays are sized T+1 and
// indexed by timestep t in [0, T]; index 0 carries the conventions
// beta[0] = 0, alpha[0] = 1, alpha_bar[0] = 1 so that t = 0 means "data".
struct NoiseSchedule {
  int T = 0;
  Vec beta;
  Vec alpha;
  Vec alpha_bar;

  void check_t(int t, int lo = 0) const {
    if (t < lo || t > T)
      throw contract_error("timestep " + std::to_string(t) + " outside [" +
                           std::to_string(lo) + ", " + std::to_string(T) + "]");
  }
};

inline NoiseSchedule build_noise_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw config_error("schedule.T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start < 1.0))
    throw config_error("schedule.beta_start must lie in (0,1), got " + std::to_string(beta_start));
  if (!(beta_end > 0.0 && beta_end < 1.0))
    throw config_error("schedule.beta_end must lie in (0,1), got " + std::to_string(beta_end));
  if (beta_start > beta_end)
    throw config_error("schedule.beta_start must not exceed schedule.beta_end");

  NoiseSchedule ns;
  ns.T = T;
  ns.beta.assign(T + 1, 0.0);
  ns.alpha.assign(T + 1, 1.0);
  ns.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    ns.beta[t] = beta_start + frac * (beta_end - beta_start);
    ns.alpha[t] = 1.0 - ns.beta[t];
    ns.alpha_bar[t] = ns.alpha[t] * ns.alpha_bar[t - 1];
  }
  return ns;
}

enum class ShiftMode {
  None,
  PriorShift,
  DataNormalization,
  QuadraticShift,
  Linear,
  Square,
  Sine,
  Piecewise,
};

inline const std::array<ShiftMode, 8>& all_shift_modes() {
  static const std::array<ShiftMode, 8> modes = {
      ShiftMode::None,           ShiftMode::PriorShift,
      ShiftMode::DataNormalization, ShiftMode::QuadraticShift,
      ShiftMode::Linear,         ShiftMode::Square,
      ShiftMode::Sine,           ShiftMode::Piecewise};
  return modes;
}

inline const char* to_string(ShiftMode m) {
  switch (m) {
    case ShiftMode::None: return "none";
    case ShiftMode::PriorShift: return "prior_shift";
    case ShiftMode::DataNormalization: return "data_normalization";
    case ShiftMode::QuadraticShift: return "quadratic_shift";
    case ShiftMode::Linear: return "linear";
    case ShiftMode::Square: return "square";
    case ShiftMode::Sine: return "sine";
    case ShiftMode::Piecewise: return "piecewise";
  }
  return "?";
}

inline ShiftMode shift_mode_from_string(std::string_view s) {
  if (s == "none") return ShiftMode::None;
  if (s == "prior_shift") return ShiftMode::PriorShift;
  if (s == "data_normalization") return ShiftMode::DataNormalization;
  if (s == "quadratic_shift") return ShiftMode::QuadraticShift;
  if (s == "linear") return ShiftMode::Linear;
  if (s == "square") return ShiftMode::Square;
  if (s == "sine") return ShiftMode::Sine;
  if (s == "piecewise") return ShiftMode::Piecewise;
  throw config_error("shift.mode: unknown mode '" + std::string(s) + "'");
}

// Shift coefficient k_t. k_0 = 0 in every mode; for prior/quadratic that falls
// out of alpha_bar[0] = 1, for data normalization it is clamped explicitly.
inline double shift_coefficient(ShiftMode mode, const NoiseSchedule& ns, int t) {
  ns.check_t(t);
  double sab = std::sqrt(ns.alpha_bar[t]);
  double T = ns.T;
  switch (mode) {
    case ShiftMode::None: return 0.0;
    case ShiftMode::PriorShift: return 1.0 - sab;
    case ShiftMode::DataNormalization: return t == 0 ? 0.0 : -sab;
    case ShiftMode::QuadraticShift: return sab * (1.0 - sab);
    case ShiftMode::Linear: return t / T;
    case ShiftMode::Square: return (t / T) * (t / T);
    case ShiftMode::Sine: return 1.0 - std::cos(t * M_PI / (2.0 * T));
    case ShiftMode::Piecewise:
      return (t < 0.4 * T) ? 0.0 : (t - 0.4 * T) / (0.6 * T);
  }
  return 0.0;
}

// Precomputed k table; the k array is public so tests can perturb it.
struct ShiftSchedule {
  ShiftMode mode = ShiftMode::None;
  Vec k;  // size T+1

  int T() const { return static_cast<int>(k.size()) - 1; }
};

inline ShiftSchedule build_shift_schedule(ShiftMode mode, const NoiseSchedule& ns) {
  ShiftSchedule ss;
  ss.mode = mode;
  ss.k.resize(ns.T + 1);
  for (int t = 0; t <= ns.T; ++t) ss.k[t] = shift_coefficient(mode, ns, t);
  return ss;
}

// Per-step reverse amendment d_t = (-k_t / sqrt(alpha_t) + k_{t-1}) * E(c).
inline double amendment_coefficient(const ShiftSchedule& ss, const NoiseSchedule& ns, int t) {
  ns.check_t(t, 1);
  return -ss.k[t] / std::sqrt(ns.alpha[t]) + ss.k[t - 1];
}

inline Vec amendment_term(ShiftMode mode, const NoiseSchedule& ns, int t, const Vec& shift_vector) {
  ns.check_t(t, 1);
  double c = -shift_coefficient(mode, ns, t) / std::sqrt(ns.alpha[t]) +
             shift_coefficient(mode, ns, t - 1);
  return c * shift_vector;
}

}  // namespace shiftdiff
