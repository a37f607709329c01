#pragma once

#include <functional>

#include "shiftdiff/dataset.hpp"
#include "shiftdiff/model.hpp"
#include "shiftdiff/net.hpp"

namespace shiftdiff {

struct TrainConfig {
  // schedule
  int T = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // shift
  ShiftMode mode = ShiftMode::QuadraticShift;
  PredictorKind predictor_kind = PredictorKind::Trainable;
  // model
  int hidden = 128;
  int time_embed = 64;
  int conditional = -1;  // -1 auto (DataNormalization => on), 0 off, 1 on
  // training
  int steps = 20000;
  int batch = 256;
  uint64_t seed = 0;
  AdamConfig opt;
  Vec sigma_diag;  // empty = identity covariance
  int threads = 0;
  // io (wired by the CLI; empty = off)
  std::string checkpoint_path;
  std::string metrics_path;
  int checkpoint_every = 0;

  // Data-Normalization does not disentangle trajectories, so the condition
  // must be fed to the network; the other shift modes default to carrying the
  // condition in the trajectory only.
  bool resolve_conditional() const {
    if (conditional >= 0) return conditional != 0;
    return mode == ShiftMode::DataNormalization;
  }
};

struct TrainState {
  TrainConfig cfg;
  NoiseSchedule ns;
  ShiftSchedule ss;
  MlpDenoiser net;
  ShiftPredictor pred;
  Matrix pred_grads;
  MlpGrads grads;
  Optimizer opt;
  MlpDenoiser::Cache scratch;
  int64_t step_count = 0;
  Rng loop_rng{0};

  bool predictor_trainable() const { return pred.kind == PredictorKind::Trainable; }

  ParamSet trainable_params() {
    ParamSet p = net.params(&grads);
    if (predictor_trainable())
      p.push_back({"pred.table", pred.table.data(), pred_grads.data(), pred.table.size()});
    return p;
  }

  // Net with the EMA shadow weights; sampling always uses this.
  MlpDenoiser ema_net() const {
    MlpDenoiser copy = net;
    ParamSet ps = copy.params();
    size_t n_net = ps.size();
    for (size_t p = 0; p < n_net; ++p)
      std::copy(opt.shadow(p).begin(), opt.shadow(p).end(), ps[p].value);
    return copy;
  }

  // EMA view of the trainable predictor table (fixed tables pass through).
  ShiftPredictor ema_pred() const {
    ShiftPredictor copy = pred;
    if (predictor_trainable()) {
      size_t idx = MlpDenoiser::kParamBlocks;  // predictor shadow follows the net blocks
      std::copy(opt.shadow(idx).begin(), opt.shadow(idx).end(), copy.table.data());
    }
    return copy;
  }
};

inline TrainState init_train_state(const TrainConfig& cfg, const Dataset& data) {
  require(data.size() > 0, "train: dataset is empty");
  TrainState st;
  st.cfg = cfg;
  st.ns = build_noise_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
  st.ss = build_shift_schedule(cfg.mode, st.ns);

  MlpConfig mc;
  mc.data_dim = data.dim();
  mc.hidden = cfg.hidden;
  mc.time_embed = cfg.time_embed;
  mc.num_classes = data.num_classes;
  mc.conditional = cfg.resolve_conditional();

  Rng master(cfg.seed);
  st.net = MlpDenoiser(mc, master.child(1));
  switch (cfg.predictor_kind) {
    case PredictorKind::FixedTable:
      st.pred = make_fixed_table(data.num_classes, data.dim());
      break;
    case PredictorKind::ClassMean:
      st.pred = make_class_mean(data.x0, data.labels, data.num_classes);
      break;
    case PredictorKind::Trainable:
      st.pred = make_trainable(data.num_classes, data.dim());
      break;
  }
  st.grads.match(mc);
  st.pred_grads.resize(data.num_classes, data.dim());
  st.opt = Optimizer(cfg.opt, st.trainable_params());
  st.loop_rng = master.child(2);
  return st;
}

// Raw draws for one batch. Draw order per item: dataset index, then t, then
// the d noise components; the mode-None reference in the tests mirrors this.
struct TrainBatch {
  std::vector<int> idx, ts, cls;
  Matrix eps;
};

inline TrainBatch draw_train_batch(Rng& rng, const TrainConfig& cfg, const Dataset& data) {
  TrainBatch b;
  int n = cfg.batch, d = data.dim();
  b.idx.resize(n);
  b.ts.resize(n);
  b.cls.resize(n);
  b.eps.resize(n, d);
  for (int i = 0; i < n; ++i) {
    b.idx[i] = rng.uniform_int(data.size());
    b.cls[i] = data.labels[b.idx[i]];
    b.ts[i] = 1 + rng.uniform_int(cfg.T);
    double* e = b.eps.row(i);
    for (int k = 0; k < d; ++k) {
      double sd = cfg.sigma_diag.empty() ? 1.0 : std::sqrt(cfg.sigma_diag[k]);
      e[k] = sd * rng.normal();
    }
  }
  return b;
}

// x_t = sqrt(ab) x0 + s_t + sqrt(1-ab) eps and the regression target
// eps + s_t / sqrt(1-ab); with mode None both reduce bit-exactly to DDPM.
inline void assemble_train_batch(const TrainState& st, const Dataset& data,
                                 const TrainBatch& b, Matrix& xt, Matrix& target) {
  int n = st.cfg.batch, d = data.dim();
  xt.resize(n, d);
  target.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const double* x0 = data.x0.row(b.idx[i]);
    const double* e = b.eps.row(i);
    double ab = st.ns.alpha_bar[b.ts[i]];
    double sab = std::sqrt(ab), sv = std::sqrt(1.0 - ab);
    double kt = st.ss.k[b.ts[i]];
    const double* Ec = st.pred.table.row(b.cls[i]);
    for (int k = 0; k < d; ++k) {
      double s = kt * Ec[k];
      xt.at(i, k) = sab * x0[k] + s + sv * e[k];
      target.at(i, k) = e[k] + s / sv;
    }
  }
}

// Fills st.grads (and st.pred_grads for a trainable predictor); no update.
inline double batch_loss_and_grads(TrainState& st, const TrainBatch& b, const Matrix& xt,
                                   const Matrix& target) {
  std::vector<int> conds;
  if (st.net.config().conditional) conds = b.cls;

  Matrix dldg, dx_data;
  bool need_pred_grads = st.predictor_trainable();
  double loss = st.net.loss_and_grads(xt, b.ts, conds, target, st.cfg.sigma_diag, st.grads,
                                      need_pred_grads ? &dldg : nullptr,
                                      need_pred_grads ? &dx_data : nullptr, &st.scratch);

  if (need_pred_grads) {
    // s_t reaches the loss through the net input (x_t) and through the
    // regression target (s_t / sqrt(1 - ab_t)); dL/dtarget = -dL/dg.
    st.pred_grads.fill(0.0);
    int d = xt.cols();
    for (int i = 0; i < xt.rows(); ++i) {
      double kt = st.ss.k[b.ts[i]];
      if (kt == 0.0) continue;
      double sv = std::sqrt(1.0 - st.ns.alpha_bar[b.ts[i]]);
      double* grow = st.pred_grads.row(b.cls[i]);
      for (int k = 0; k < d; ++k)
        grow[k] += kt * (dx_data.at(i, k) - dldg.at(i, k) / sv);
    }
  }
  return loss;
}

// One Algorithm-1 step: draw, regress, update (theta and psi jointly).
inline double train_step(Rng& rng, TrainState& st, const Dataset& data) {
  TrainBatch b = draw_train_batch(rng, st.cfg, data);
  Matrix xt, target;
  assemble_train_batch(st, data, b, xt, target);
  double loss = batch_loss_and_grads(st, b, xt, target);
  st.opt.step(st.trainable_params());
  ++st.step_count;
  return loss;
}

using StepCallback = std::function<void(int64_t step, double loss)>;

inline TrainState train(const TrainConfig& cfg, const Dataset& data,
                        const StepCallback& on_step = nullptr) {
  if (cfg.threads > 0) worker_threads() = cfg.threads;
  if (cfg.mode == ShiftMode::DataNormalization && cfg.conditional == 0)
    throw config_error("model.conditional: data_normalization requires a conditional network");
  TrainState st = init_train_state(cfg, data);
  for (int s = 0; s < cfg.steps; ++s) {
    double loss = train_step(st.loop_rng, st, data);
    if (on_step) on_step(st.step_count, loss);
  }
  return st;
}

}  // namespace shiftdiff
