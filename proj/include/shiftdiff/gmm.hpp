#pragma once

#include <cmath>

#include "shiftdiff/diffusion.hpp"
#include "shiftdiff/predictor.hpp"
#include "shiftdiff/rng.hpp"

namespace shiftdiff {

// Isotropic Gaussian mixture, one component list per class. Kept isotropic so
// every conditional formula below stays one line and auditable.
struct GmmComponent {
  Vec mean;
  double var = 1.0;
  double weight = 1.0;  // within-class weight
};

struct GmmSpec {
  int dim = 0;
  std::vector<std::vector<GmmComponent>> classes;
  Vec class_prior;  // empty = uniform

  int num_classes() const { return static_cast<int>(classes.size()); }

  void validate() const {
    if (dim < 1) throw config_error("data.dim must be >= 1");
    if (classes.empty()) throw config_error("data: at least one class required");
    for (size_t c = 0; c < classes.size(); ++c) {
      if (classes[c].empty())
        throw config_error("data: class " + std::to_string(c) + " has no components");
      double wsum = 0.0;
      for (const auto& comp : classes[c]) {
        if (static_cast<int>(comp.mean.size()) != dim)
          throw config_error("data: component mean dim mismatch in class " + std::to_string(c));
        if (!(comp.var > 0.0))
          throw config_error("data: component variance must be > 0 in class " + std::to_string(c));
        if (!(comp.weight > 0.0))
          throw config_error("data: component weight must be > 0 in class " + std::to_string(c));
        wsum += comp.weight;
      }
      if (std::abs(wsum - 1.0) > 1e-9)
        throw config_error("data: component weights of class " + std::to_string(c) +
                           " sum to " + std::to_string(wsum) + ", expected 1");
    }
    if (!class_prior.empty() && class_prior.size() != classes.size())
      throw config_error("data: class_prior length mismatch");
  }

  double prior(int c) const {
    return class_prior.empty() ? 1.0 / num_classes() : class_prior[c];
  }

  void check_class(int c) const {
    if (c < 0 || c >= num_classes())
      throw contract_error("class id " + std::to_string(c) + " outside [0, " +
                           std::to_string(num_classes()) + ")");
  }

  Vec class_mean(int c) const {
    check_class(c);
    Vec m(dim, 0.0);
    for (const auto& comp : classes[c])
      for (int i = 0; i < dim; ++i) m[i] += comp.weight * comp.mean[i];
    return m;
  }
};

// The default verification dataset: two well-separated classes in 2-D.
inline GmmSpec default_gmm() {
  GmmSpec g;
  g.dim = 2;
  g.classes = {{{{2.0, 2.0}, 0.1, 1.0}}, {{{-2.0, -2.0}, 0.1, 1.0}}};
  return g;
}

// i.i.d. draws from the class-conditional mixture.
inline Matrix gmm_sample(const GmmSpec& spec, int class_id, int count, Rng& rng) {
  spec.check_class(class_id);
  const auto& comps = spec.classes[class_id];
  Matrix out(count, spec.dim);
  for (int i = 0; i < count; ++i) {
    int j = 0;
    if (comps.size() > 1) {
      double u = rng.uniform(), acc = 0.0;
      for (size_t q = 0; q < comps.size(); ++q) {
        acc += comps[q].weight;
        if (u < acc || q + 1 == comps.size()) {
          j = static_cast<int>(q);
          break;
        }
      }
    }
    double sd = std::sqrt(comps[j].var);
    double* row = out.row(i);
    for (int d = 0; d < spec.dim; ++d) row[d] = comps[j].mean[d] + sd * rng.normal();
  }
  return out;
}

// Closed-form optimal denoiser for GMM data under the shifted forward process
// (Sigma = I). class_id >= 0 conditions on that class; class_id = -1 uses the
// full mixture with each component riding its own class shift, which is the
// ideal limit of a trained unconditional network.
class OracleDenoiser {
 public:
  OracleDenoiser(const GmmSpec& gmm, const NoiseSchedule& ns, const ShiftSchedule& ss,
                 const ShiftPredictor& predictor)
      : gmm_(&gmm), ns_(&ns), ss_(&ss), pred_(&predictor) {
    gmm.validate();
  }

  const GmmSpec& gmm() const { return *gmm_; }

  // E[x0 | x_t, c] via responsibility-weighted per-component conditional means.
  Vec posterior_x0(const Vec& x_t, int t, int class_id) const {
    ns_->check_t(t, 1);
    Workspace w;
    responsibilities(x_t, t, class_id, w);
    Vec ex0(gmm_->dim, 0.0);
    for (size_t j = 0; j < w.comp.size(); ++j) {
      const Term& m = w.comp[j];
      double a = ns_->alpha_bar[t];
      double shrink = std::sqrt(a) * m.var / m.marg_var;
      for (int d = 0; d < gmm_->dim; ++d) {
        double cm = m.mean[d] + shrink * (x_t[d] - m.shift[d] - std::sqrt(a) * m.mean[d]);
        ex0[d] += w.resp[j] * cm;
      }
    }
    return ex0;
  }

  // Optimal g prediction: (x_t - sqrt(ab_t) E[x0|x_t,c]) / sqrt(1 - ab_t).
  Vec g(const Vec& x_t, int t, int class_id) const {
    Vec ex0 = posterior_x0(x_t, t, class_id);
    double a = ns_->alpha_bar[t];
    double sab = std::sqrt(a), sv = std::sqrt(1.0 - a);
    Vec out(x_t.size());
    for (size_t d = 0; d < out.size(); ++d) out[d] = (x_t[d] - sab * ex0[d]) / sv;
    return out;
  }

 private:
  struct Term {
    Vec mean;
    Vec shift;
    double var;
    double marg_var;
    double log_prior;
  };
  struct Workspace {
    std::vector<Term> comp;
    Vec resp;
  };

  void gather(int class_id, int t, std::vector<Term>& out) const {
    auto add_class = [&](int c, double prior) {
      Vec s = ss_->k[t] * pred_->predict(c);
      for (const auto& comp : gmm_->classes[c])
        out.push_back({comp.mean, s, comp.var, 0.0, std::log(prior * comp.weight)});
    };
    if (class_id >= 0) {
      gmm_->check_class(class_id);
      add_class(class_id, 1.0);
    } else {
      for (int c = 0; c < gmm_->num_classes(); ++c) add_class(c, gmm_->prior(c));
    }
  }

  // Log-space responsibilities over components given x_t.
  void responsibilities(const Vec& x_t, int t, int class_id, Workspace& w) const {
    require_shape(static_cast<int>(x_t.size()) == gmm_->dim, "oracle: x_t dim mismatch");
    gather(class_id, t, w.comp);
    double a = ns_->alpha_bar[t];
    w.resp.resize(w.comp.size());
    double best = -1e300;
    for (size_t j = 0; j < w.comp.size(); ++j) {
      Term& m = w.comp[j];
      m.marg_var = a * m.var + (1.0 - a);
      double q = 0.0;
      for (int d = 0; d < gmm_->dim; ++d) {
        double diff = x_t[d] - std::sqrt(a) * m.mean[d] - m.shift[d];
        q += diff * diff;
      }
      w.resp[j] = m.log_prior - 0.5 * q / m.marg_var -
                  0.5 * gmm_->dim * std::log(m.marg_var);
      best = std::max(best, w.resp[j]);
    }
    double z = 0.0;
    for (double& r : w.resp) {
      r = std::exp(r - best);
      z += r;
    }
    for (double& r : w.resp) r /= z;
  }

  const GmmSpec* gmm_;
  const NoiseSchedule* ns_;
  const ShiftSchedule* ss_;
  const ShiftPredictor* pred_;
};

inline Vec oracle_posterior_x0(const OracleDenoiser& d, const Vec& x_t, int t, int class_id) {
  return d.posterior_x0(x_t, t, class_id);
}

inline Vec oracle_g(const OracleDenoiser& d, const Vec& x_t, int t, int class_id) {
  return d.g(x_t, t, class_id);
}

}  // namespace shiftdiff
