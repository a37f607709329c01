#pragma once

#include "shiftdiff/checkpoint.hpp"
#include "shiftdiff/config.hpp"
#include "shiftdiff/trainer.hpp"

namespace shiftdiff {

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

inline Vec parse_numbers(const std::string& s, const std::string& what) {
  Vec out;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    try {
      size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument("");
    } catch (...) {
      throw config_error(what + ": bad number '" + tok + "'");
    }
    tok.clear();
  };
  for (char ch : s) {
    if (ch == ' ' || ch == '\t' || ch == ',' || ch == ';') {
      flush();
    } else {
      tok.push_back(ch);
    }
  }
  flush();
  return out;
}

}  // namespace detail

// data.means uses '|' between classes and ';' between components of a class,
// e.g. "2 2 | -2 -2" or "0 0 ; 1 1 | 3 3". Variances and weights follow the
// same nesting with one scalar per component.
inline GmmSpec gmm_from_config(const Config& cfg) {
  GmmSpec g;
  g.dim = static_cast<int>(cfg.get_int("data.dim", 0));
  if (g.dim < 1) throw config_error("data.dim: required for gmm data");
  auto class_strs = detail::split_on(cfg.get_required("data.means"), '|');
  auto var_strs = detail::split_on(cfg.get_required("data.variances"), '|');
  if (var_strs.size() != class_strs.size())
    throw config_error("data.variances: class count differs from data.means");
  bool have_w = cfg.has("data.weights");
  auto w_strs = have_w ? detail::split_on(cfg.get_string("data.weights", ""), '|')
                       : std::vector<std::string>();
  if (have_w && w_strs.size() != class_strs.size())
    throw config_error("data.weights: class count differs from data.means");

  for (size_t c = 0; c < class_strs.size(); ++c) {
    auto comp_strs = detail::split_on(class_strs[c], ';');
    Vec vars = detail::parse_numbers(var_strs[c], "data.variances");
    if (vars.size() != comp_strs.size())
      throw config_error("data.variances: component count mismatch in class " + std::to_string(c));
    Vec ws;
    if (have_w) {
      ws = detail::parse_numbers(w_strs[c], "data.weights");
      if (ws.size() != comp_strs.size())
        throw config_error("data.weights: component count mismatch in class " + std::to_string(c));
    } else {
      ws.assign(comp_strs.size(), 1.0 / comp_strs.size());
    }
    std::vector<GmmComponent> comps;
    for (size_t q = 0; q < comp_strs.size(); ++q) {
      GmmComponent comp;
      comp.mean = detail::parse_numbers(comp_strs[q], "data.means");
      comp.var = vars[q];
      comp.weight = ws[q];
      comps.push_back(std::move(comp));
    }
    g.classes.push_back(std::move(comps));
  }
  if (cfg.has("data.class_priors"))
    g.class_prior = detail::parse_numbers(cfg.get_string("data.class_priors", ""), "data.class_priors");
  int declared = static_cast<int>(cfg.get_int("data.classes", g.num_classes()));
  if (declared != g.num_classes())
    throw config_error("data.classes: declared " + std::to_string(declared) + " but " +
                       std::to_string(g.num_classes()) + " classes were given");
  g.validate();
  return g;
}

inline Dataset dataset_from_config(const Config& cfg, Rng rng) {
  std::string kind = cfg.get_required("data.kind");
  if (kind == "gmm") {
    GmmSpec spec = gmm_from_config(cfg);
    int size = static_cast<int>(cfg.get_int("data.size", 10000));
    return make_gmm_dataset(spec, size, rng);
  }
  if (kind == "mnist") {
    return read_mnist_idx(cfg.get_required("data.mnist_images"),
                          cfg.get_required("data.mnist_labels"));
  }
  throw config_error("data.kind: expected gmm or mnist, got '" + kind + "'");
}

inline TrainConfig train_config_from_config(const Config& cfg) {
  TrainConfig tc;
  tc.T = static_cast<int>(cfg.get_int("schedule.T", 200));
  tc.beta_start = cfg.get_double("schedule.beta_start", 1e-4);
  tc.beta_end = cfg.get_double("schedule.beta_end", 0.02);
  tc.mode = shift_mode_from_string(cfg.get_string("shift.mode", "quadratic_shift"));
  tc.predictor_kind = predictor_kind_from_string(cfg.get_string("shift.predictor", "trainable"));
  tc.hidden = static_cast<int>(cfg.get_int("model.width", 128));
  tc.time_embed = static_cast<int>(cfg.get_int("model.time_embed", 64));
  tc.conditional = cfg.get_tristate("model.conditional");
  tc.steps = static_cast<int>(cfg.get_int("train.steps", 20000));
  tc.batch = static_cast<int>(cfg.get_int("train.batch", 256));
  tc.seed = cfg.get_seed();
  tc.opt.lr = cfg.get_double("train.lr", 1e-3);
  tc.opt.ema_decay = cfg.get_double("train.ema", 0.999);
  tc.opt.beta1 = cfg.get_double("train.beta1", 0.9);
  tc.opt.beta2 = cfg.get_double("train.beta2", 0.999);
  tc.threads = static_cast<int>(cfg.get_int("train.threads", 0));
  tc.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every", 0));
  tc.checkpoint_path = cfg.get_string("output.checkpoint", "");
  tc.metrics_path = cfg.get_string("output.metrics", "");
  return tc;
}

namespace detail {

inline TensorBlock block1(const std::string& name, const Vec& v) {
  return TensorBlock{name, {v.size()}, v};
}
inline TensorBlock block2(const std::string& name, const Matrix& m) {
  return TensorBlock{name,
                     {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())},
                     Vec(m.data(), m.data() + m.size())};
}

}  // namespace detail

inline CheckpointData checkpoint_from_state(TrainState& st, const Config& run_config) {
  Config meta = run_config;
  meta.set_int("ckpt.step_count", st.step_count);
  meta.set("ckpt.rng_algorithm", std::string(Rng::kAlgorithm) + " seed=" +
                                     std::to_string(st.cfg.seed));
  meta.set("ckpt.format", "sdpm-v1");

  CheckpointData ckpt;
  ckpt.meta = meta.serialize();
  ckpt.tensors.push_back(detail::block1("sched.beta", st.ns.beta));
  ckpt.tensors.push_back(detail::block1("sched.alpha_bar", st.ns.alpha_bar));
  ckpt.tensors.push_back(detail::block1("shift.k", st.ss.k));
  ckpt.tensors.push_back(detail::block2("pred.table", st.pred.table));

  ParamSet ps = st.trainable_params();
  for (size_t p = 0; p < ps.size(); ++p) {
    if (ps[p].name != "pred.table")  // stored above with its 2-D shape
      ckpt.tensors.push_back(TensorBlock{ps[p].name, {ps[p].n},
                                         Vec(ps[p].value, ps[p].value + ps[p].n)});
    ckpt.tensors.push_back(TensorBlock{"ema." + ps[p].name, {ps[p].n}, st.opt.shadow(p)});
    ckpt.tensors.push_back(TensorBlock{"adam_m." + ps[p].name, {ps[p].n}, st.opt.moment1(p)});
    ckpt.tensors.push_back(TensorBlock{"adam_v." + ps[p].name, {ps[p].n}, st.opt.moment2(p)});
  }
  return ckpt;
}

// Everything a sampler or evaluator needs from a stored run.
struct LoadedCheckpoint {
  Config config;
  TrainConfig tcfg;
  NoiseSchedule ns;
  ShiftSchedule ss;
  ShiftPredictor pred;      // EMA view when trainable
  MlpDenoiser net_ema;
  int64_t step_count = 0;
  GmmSpec gmm;              // dim == 0 for non-gmm data
  int num_classes = 0;
};

inline LoadedCheckpoint open_checkpoint(const CheckpointData& ckpt) {
  LoadedCheckpoint lc;
  lc.config = Config::parse_string(ckpt.meta, "<checkpoint metadata>");
  lc.tcfg = train_config_from_config(lc.config);
  lc.step_count = lc.config.get_int("ckpt.step_count", 0);

  lc.ns.T = lc.tcfg.T;
  lc.ns.beta = ckpt.get("sched.beta").data;
  lc.ns.alpha_bar = ckpt.get("sched.alpha_bar").data;
  if (static_cast<int>(lc.ns.beta.size()) != lc.tcfg.T + 1)
    throw io_error("checkpoint: sched.beta length disagrees with schedule.T");
  lc.ns.alpha.resize(lc.ns.beta.size());
  for (size_t t = 0; t < lc.ns.beta.size(); ++t) lc.ns.alpha[t] = 1.0 - lc.ns.beta[t];

  lc.ss.mode = lc.tcfg.mode;
  lc.ss.k = ckpt.get("shift.k").data;

  const TensorBlock& table = ckpt.get("pred.table");
  lc.pred.kind = lc.tcfg.predictor_kind;
  lc.pred.table.resize(static_cast<int>(table.dims[0]), static_cast<int>(table.dims[1]));
  const Vec& tdata = lc.pred.kind == PredictorKind::Trainable && ckpt.find("ema.pred.table")
                         ? ckpt.get("ema.pred.table").data
                         : table.data;
  std::copy(tdata.begin(), tdata.end(), lc.pred.table.data());
  lc.num_classes = lc.pred.table.rows();

  MlpConfig mc;
  mc.data_dim = lc.pred.table.cols();
  mc.hidden = lc.tcfg.hidden;
  mc.time_embed = lc.tcfg.time_embed;
  mc.num_classes = lc.num_classes;
  mc.conditional = lc.tcfg.resolve_conditional();
  lc.net_ema = MlpDenoiser(mc, Rng(0));
  ParamSet ps = lc.net_ema.params();
  for (auto& p : ps) {
    const TensorBlock& b = ckpt.get("ema." + p.name);
    if (b.data.size() != p.n)
      throw io_error("checkpoint: tensor '" + p.name + "' has wrong size");
    std::copy(b.data.begin(), b.data.end(), p.value);
  }

  if (lc.config.get_string("data.kind", "") == "gmm") lc.gmm = gmm_from_config(lc.config);
  return lc;
}

// Full restore for resuming training: rebuilds the state from the config and
// overwrites parameters, EMA shadows, adam moments and the step counter.
inline TrainState resume_train_state(const CheckpointData& ckpt, const Dataset& data) {
  Config cfg = Config::parse_string(ckpt.meta, "<checkpoint metadata>");
  TrainConfig tc = train_config_from_config(cfg);
  TrainState st = init_train_state(tc, data);

  st.ns.beta = ckpt.get("sched.beta").data;
  st.ns.alpha_bar = ckpt.get("sched.alpha_bar").data;
  for (size_t t = 0; t < st.ns.beta.size(); ++t) st.ns.alpha[t] = 1.0 - st.ns.beta[t];
  st.ss.k = ckpt.get("shift.k").data;

  const TensorBlock& table = ckpt.get("pred.table");
  std::copy(table.data.begin(), table.data.end(), st.pred.table.data());

  ParamSet ps = st.trainable_params();
  for (size_t p = 0; p < ps.size(); ++p) {
    const TensorBlock& raw = ckpt.get(ps[p].name);
    if (raw.data.size() != ps[p].n)
      throw io_error("checkpoint: tensor '" + ps[p].name + "' has wrong size");
    std::copy(raw.data.begin(), raw.data.end(), ps[p].value);
    st.opt.shadow_mutable(p) = ckpt.get("ema." + ps[p].name).data;
    st.opt.moment1_mutable(p) = ckpt.get("adam_m." + ps[p].name).data;
    st.opt.moment2_mutable(p) = ckpt.get("adam_v." + ps[p].name).data;
  }
  st.step_count = cfg.get_int("ckpt.step_count", 0);
  st.opt.set_step_count(st.step_count);
  return st;
}

}  // namespace shiftdiff
