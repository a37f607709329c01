#pragma once

#include <memory>

#include "shiftdiff/gmm.hpp"
#include "shiftdiff/net.hpp"

namespace shiftdiff {

// Batch g-prediction at a fixed timestep; the condition (if any) is bound at
// construction so samplers and evaluators stay model-agnostic.
class GModel {
 public:
  virtual ~GModel() = default;
  virtual int dim() const = 0;
  virtual void predict(const Matrix& x, int t, Matrix& g) const = 0;

  Vec predict_one(const Vec& x, int t) const {
    Matrix in(1, static_cast<int>(x.size()));
    in.set_row(0, x);
    Matrix out;
    predict(in, t, out);
    return out.row_vec(0);
  }
};

// Analytic optimum. class_id >= 0 conditions on the class; -1 is the marginal
// (the ideal limit of an unconditional network).
class OracleGModel : public GModel {
 public:
  OracleGModel(const OracleDenoiser& oracle, int class_id, int dim)
      : oracle_(&oracle), class_id_(class_id), dim_(dim) {}

  int dim() const override { return dim_; }

  void predict(const Matrix& x, int t, Matrix& g) const override {
    g.resize(x.rows(), dim_);
    for (int i = 0; i < x.rows(); ++i)
      g.set_row(i, oracle_->g(x.row_vec(i), t, class_id_));
  }

 private:
  const OracleDenoiser* oracle_;
  int class_id_;
  int dim_;
};

// Trained denoiser snapshot (normally the EMA weights). condition = -1 for
// unconditional nets.
class MlpGModel : public GModel {
 public:
  MlpGModel(MlpDenoiser net, int condition = -1)
      : net_(std::move(net)), condition_(condition) {
    require(net_.config().conditional == (condition_ >= 0),
            "model: condition must be given iff the net is conditional");
  }

  int dim() const override { return net_.config().data_dim; }
  const MlpDenoiser& net() const { return net_; }

  void predict(const Matrix& x, int t, Matrix& g) const override {
    std::vector<int> conds;
    if (condition_ >= 0) conds = {condition_};
    net_.forward(x, {t}, conds, g, &scratch_);
  }

 private:
  MlpDenoiser net_;
  int condition_;
  mutable MlpDenoiser::Cache scratch_;  // reused across steps; not reentrant
};

// Exact-target model for noise-free trajectory checks: g(x_t) is the
// regression target computed from a fixed reference x0.
class ExactTargetModel : public GModel {
 public:
  ExactTargetModel(const NoiseSchedule& ns, Vec x0_ref)
      : ns_(&ns), x0_(std::move(x0_ref)) {}

  int dim() const override { return static_cast<int>(x0_.size()); }

  void predict(const Matrix& x, int t, Matrix& g) const override {
    double sab = std::sqrt(ns_->alpha_bar[t]);
    double sv = std::sqrt(1.0 - ns_->alpha_bar[t]);
    g.resize(x.rows(), dim());
    for (int i = 0; i < x.rows(); ++i)
      for (int d = 0; d < dim(); ++d)
        g.at(i, d) = (x.at(i, d) - sab * x0_[d]) / sv;
  }

 private:
  const NoiseSchedule* ns_;
  Vec x0_;
};

// s_t rows for t = 0..T.
using ShiftTable = Matrix;

inline ShiftTable make_shift_table(const ShiftSchedule& ss, const Vec& Ec) {
  ShiftTable tab(ss.T() + 1, static_cast<int>(Ec.size()));
  for (int t = 0; t <= ss.T(); ++t)
    for (size_t d = 0; d < Ec.size(); ++d) tab.at(t, static_cast<int>(d)) = ss.k[t] * Ec[d];
  return tab;
}

inline ShiftVector shift_at(const ShiftTable& tab, int t) {
  return ShiftVector{tab.row_vec(t), t};
}

}  // namespace shiftdiff
