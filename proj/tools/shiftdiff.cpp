// shiftdiff command-line interface: train, sample, eval, verify, mixed,
// grid-window, interpolate.

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "shiftdiff/sample_io.hpp"
#include "shiftdiff/sampler.hpp"
#include "shiftdiff/session.hpp"
#include "shiftdiff/verify.hpp"

using namespace shiftdiff;

namespace {

LoadedCheckpoint load(const std::string& path) {
  return open_checkpoint(load_checkpoint_file(path));
}

std::unique_ptr<GModel> model_for(const LoadedCheckpoint& lc, int condition) {
  bool conditional = lc.net_ema.config().conditional;
  return std::make_unique<MlpGModel>(lc.net_ema, conditional ? condition : -1);
}

std::string sample_header(const std::string& plan, int condition, int count,
                          uint64_t seed, const std::string& extra = "") {
  std::string h = "plan=" + plan + " condition=" + std::to_string(condition) +
                  " count=" + std::to_string(count) + " seed=" + std::to_string(seed);
  if (!extra.empty()) h += " " + extra;
  return h;
}

void maybe_write_pgms(const std::string& dir, const Matrix& samples) {
  if (dir.empty()) return;
  int side = static_cast<int>(std::lround(std::sqrt(samples.cols())));
  require(side * side == samples.cols(), "--pgm-dir: samples are not square images");
  for (int i = 0; i < samples.rows(); ++i)
    write_pgm(dir + "/sample_" + std::to_string(i) + ".pgm", samples.row(i), side, side);
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& metrics_override) {
  Config cfg = Config::parse_file(config_path);
  TrainConfig tc = train_config_from_config(cfg);
  if (!out_override.empty()) tc.checkpoint_path = out_override;
  if (!metrics_override.empty()) tc.metrics_path = metrics_override;
  if (tc.checkpoint_path.empty())
    throw config_error("output.checkpoint (or --out) is required for train");

  Rng master(tc.seed);
  Dataset data = dataset_from_config(cfg, master.child(0));
  std::cerr << "dataset: " << data.size() << " items, dim " << data.dim() << ", "
            << data.num_classes << " classes\n";

  MetricsWriter metrics(tc.metrics_path);
  auto t0 = std::chrono::steady_clock::now();
  TrainState st = init_train_state(tc, data);
  for (int s = 0; s < tc.steps; ++s) {
    double loss = train_step(st.loop_rng, st, data);
    metrics.write(st.step_count, loss);
    if (tc.checkpoint_every > 0 && st.step_count % tc.checkpoint_every == 0 &&
        st.step_count < tc.steps) {
      save_checkpoint_file(tc.checkpoint_path + ".step" + std::to_string(st.step_count),
                           checkpoint_from_state(st, cfg));
    }
    if (st.step_count % 1000 == 0 || st.step_count == tc.steps) {
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
      std::cerr << "step=" << st.step_count << " loss=" << loss << " wall_ms=" << ms
                << "\n";
    }
  }
  save_checkpoint_file(tc.checkpoint_path, checkpoint_from_state(st, cfg));
  std::cout << "checkpoint written to " << tc.checkpoint_path << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int condition, int count, double eta,
               int steps_subseq, uint64_t seed, const std::string& out,
               const std::string& pgm_dir) {
  LoadedCheckpoint lc = load(ckpt_path);
  lc.pred.check_condition(condition);
  auto model = model_for(lc, condition);
  Matrix samples;
  std::string plan;
  if (steps_subseq > 0) {
    plan = "ddim";
    std::vector<int> tau = make_subsequence(lc.ns.T, steps_subseq);
    samples = sample_ddim(*model, lc.pred, lc.ss, lc.ns, condition, tau, eta, count,
                          Rng(seed));
  } else {
    plan = "ancestral";
    samples = sample_ancestral(*model, lc.pred, lc.ss, lc.ns, condition, count, Rng(seed));
  }
  std::string extra = steps_subseq > 0
                          ? "eta=" + format_g17(eta) + " steps=" + std::to_string(steps_subseq)
                          : "";
  if (!out.empty()) {
    write_samples(out, samples, sample_header(plan, condition, count, seed, extra));
    std::cout << "wrote " << count << " samples to " << out << "\n";
  }
  maybe_write_pgms(pgm_dir, samples);
  if (lc.gmm.dim > 0)
    std::cout << "conditional_accuracy: " << conditional_accuracy(samples, lc.gmm, condition)
              << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, int condition, int count, int mc_per_t,
             uint64_t seed, const std::string& out) {
  LoadedCheckpoint lc = load(ckpt_path);
  lc.pred.check_condition(condition);
  auto model = model_for(lc, condition);
  Rng master(seed);
  Dataset data = dataset_from_config(lc.config, master.child(0));

  ShiftTable shifts = make_shift_table(lc.ss, lc.pred.predict(condition));
  Vec terms(lc.ns.T + 1, 0.0);
  double decoder = 0, prior = 0, nats = 0, bpd = 0;
  int used = 0;
  for (int i = 0; i < data.size() && used < count; ++i) {
    if (data.labels[i] != condition) continue;
    BoundReport rep = variational_bound(*model, shifts, lc.ns, data.x0.row_vec(i),
                                        master.child(1 + used), mc_per_t);
    for (int t = 2; t <= lc.ns.T; ++t) terms[t] += rep.per_t_terms[t];
    decoder += rep.decoder_term;
    prior += rep.prior_term;
    nats += rep.total_nats();
    bpd += rep.bits_per_dim();
    ++used;
  }
  require(used > 0, "eval: no data items with the requested condition");
  std::cout << "items: " << used << "\n";
  std::cout << "decoder_nats: " << decoder / used << "\n";
  std::cout << "prior_nats: " << prior / used << "\n";
  std::cout << "total_nats: " << nats / used << "\n";
  std::cout << "bits_per_dim: " << bpd / used << "\n";
  if (!out.empty()) {
    std::ofstream tab(out, std::ios::trunc);
    if (!tab) throw io_error("cannot write report table to " + out);
    tab << "t,gamma,weighted_term\n";
    for (int t = 2; t <= lc.ns.T; ++t)
      tab << t << "," << format_g17(gamma_weight(lc.ns, t)) << ","
          << format_g17(terms[t] / used) << "\n";
    std::cout << "table written to " << out << "\n";
  }
  return 0;
}

int cmd_verify(int trials, uint64_t seed) {
  auto reports = verify::verify_derivations(trials, seed);
  bool all = true;
  for (const auto& r : reports) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " max_err=" << r.max_err
              << "\n";
    all = all && r.pass;
  }
  if (!all) {
    for (const auto& r : reports)
      if (!r.pass) std::cerr << "error: identity check failed: " << r.name << "\n";
    return 1;
  }
  return 0;
}

void check_mixable(const LoadedCheckpoint& u, const LoadedCheckpoint& c) {
  require(u.tcfg.mode == ShiftMode::None && c.tcfg.mode == ShiftMode::None,
          "mixed: both models must be trained with shift.mode = none");
  require(!u.net_ema.config().conditional, "mixed: --checkpoint must be unconditional");
  require(c.net_ema.config().conditional, "mixed: --cond-checkpoint must be conditional");
  require(u.ns.T == c.ns.T && u.ns.beta == c.ns.beta,
          "mixed: the two models use different schedules");
}

int cmd_mixed(const std::string& uncond_path, const std::string& cond_path, int condition,
              int t1, int t2, int count, uint64_t seed, const std::string& out) {
  LoadedCheckpoint u = load(uncond_path);
  LoadedCheckpoint c = load(cond_path);
  check_mixable(u, c);
  MlpGModel uncond(u.net_ema, -1);
  MlpGModel cond(c.net_ema, condition);
  Matrix samples = sample_mixed(uncond, cond, u.ns, {t1, t2}, count, Rng(seed));
  if (!out.empty())
    write_samples(out, samples,
                  sample_header("mixed", condition, count, seed,
                                "t1=" + std::to_string(t1) + " t2=" + std::to_string(t2)));
  if (u.gmm.dim > 0)
    std::cout << "conditional_accuracy: " << conditional_accuracy(samples, u.gmm, condition)
              << "\n";
  return 0;
}

int cmd_grid_window(const std::string& uncond_path, const std::string& cond_path,
                    int stride, double threshold, int count, uint64_t seed) {
  LoadedCheckpoint u = load(uncond_path);
  LoadedCheckpoint c = load(cond_path);
  check_mixable(u, c);
  require(u.gmm.dim > 0, "grid-window: accuracy needs gmm data");
  if (stride <= 0) stride = std::max(1, u.ns.T / 20);

  MlpGModel uncond(u.net_ema, -1);
  std::vector<std::unique_ptr<GModel>> cond_models;
  std::vector<const GModel*> cond_ptrs;
  for (int cls = 0; cls < u.gmm.num_classes(); ++cls) {
    cond_models.push_back(std::make_unique<MlpGModel>(c.net_ema, cls));
    cond_ptrs.push_back(cond_models.back().get());
  }
  auto w = grid_search_window(uncond, cond_ptrs, u.ns, u.gmm, stride, threshold, count,
                              Rng(seed));
  if (!w) {
    std::cout << "window: none found\n";
  } else {
    double acc =
        mixed_window_accuracy(uncond, cond_ptrs, u.ns, u.gmm, *w, count, Rng(seed));
    std::cout << "window: t1=" << w->t1 << " t2=" << w->t2 << " accuracy=" << acc << "\n";
  }
  return 0;
}

int cmd_interpolate(const std::string& ckpt_path, int c1, int c2, double lambda, int count,
                    uint64_t seed, const std::string& out) {
  LoadedCheckpoint lc = load(ckpt_path);
  require(!lc.net_ema.config().conditional,
          "interpolate: the model must carry the condition in the trajectory "
          "(unconditional network)");
  MlpGModel model(lc.net_ema, -1);
  Matrix samples =
      sample_interpolated(model, lc.pred, lc.ss, lc.ns, c1, c2, lambda, count, Rng(seed));
  if (!out.empty())
    write_samples(out, samples,
                  sample_header("interpolate", c1, count, seed,
                                "c2=" + std::to_string(c2) + " lambda=" + format_g17(lambda)));
  if (lc.gmm.dim > 0) {
    Vec mean(samples.cols(), 0.0);
    for (int i = 0; i < samples.rows(); ++i)
      for (int d = 0; d < samples.cols(); ++d) mean[d] += samples.at(i, d) / samples.rows();
    std::cout << "batch_mean:";
    for (double m : mean) std::cout << " " << m;
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shifted-trajectory diffusion models"};
  app.require_subcommand(1);

  std::string config_path, ckpt, cond_ckpt, out, metrics, pgm_dir;
  int condition = 0, count = 1000, steps_subseq = 0, t1 = 0, t2 = 0;
  int trials = 200, stride = 0, c1 = 0, c2 = 1, mc_per_t = 8, eval_count = 16;
  double eta = 0.0, lambda = 0.5, threshold = 0.9;
  uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out, "checkpoint path (overrides output.checkpoint)");
  train->add_option("--metrics", metrics, "metrics path (overrides output.metrics)");

  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--checkpoint", ckpt)->required();
  sample->add_option("--condition", condition);
  sample->add_option("--count", count);
  sample->add_option("--eta", eta, "implicit-sampler noise scale");
  sample->add_option("--steps-subseq", steps_subseq, "implicit sub-sequence length");
  sample->add_option("--seed", seed);
  sample->add_option("--out", out, "sample file");
  sample->add_option("--pgm-dir", pgm_dir, "write square samples as pgm files");

  auto* eval = app.add_subcommand("eval", "variational bound of a checkpoint");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--condition", condition);
  eval->add_option("--count", eval_count, "data items to average over");
  eval->add_option("--mc-per-t", mc_per_t);
  eval->add_option("--seed", seed);
  eval->add_option("--out", out, "per-timestep table file");

  auto* verify_cmd = app.add_subcommand("verify", "run the derivation identity suite");
  verify_cmd->add_option("--trials", trials);
  verify_cmd->add_option("--seed", seed);

  auto* mixed = app.add_subcommand("mixed", "critical-stage mixed sampling");
  mixed->add_option("--checkpoint", ckpt, "unconditional model")->required();
  mixed->add_option("--cond-checkpoint", cond_ckpt, "conditional model")->required();
  mixed->add_option("--condition", condition);
  mixed->add_option("--t1", t1)->required();
  mixed->add_option("--t2", t2)->required();
  mixed->add_option("--count", count);
  mixed->add_option("--seed", seed);
  mixed->add_option("--out", out);

  auto* gw = app.add_subcommand("grid-window", "search for the shortest critical window");
  gw->add_option("--checkpoint", ckpt, "unconditional model")->required();
  gw->add_option("--cond-checkpoint", cond_ckpt, "conditional model")->required();
  gw->add_option("--stride", stride, "grid stride (default T/20)");
  gw->add_option("--threshold", threshold);
  gw->add_option("--count", count, "samples per class per window");
  gw->add_option("--seed", seed);

  auto* interp = app.add_subcommand("interpolate", "trajectory-interpolated sampling");
  interp->add_option("--checkpoint", ckpt)->required();
  interp->add_option("--c1", c1);
  interp->add_option("--c2", c2);
  interp->add_option("--lambda", lambda);
  interp->add_option("--count", count);
  interp->add_option("--seed", seed);
  interp->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(config_path, out, metrics);
    if (app.got_subcommand(sample))
      return cmd_sample(ckpt, condition, count, eta, steps_subseq, seed, out, pgm_dir);
    if (app.got_subcommand(eval))
      return cmd_eval(ckpt, condition, eval_count, mc_per_t, seed, out);
    if (app.got_subcommand(verify_cmd)) return cmd_verify(trials, seed);
    if (app.got_subcommand(mixed))
      return cmd_mixed(ckpt, cond_ckpt, condition, t1, t2, count, seed, out);
    if (app.got_subcommand(gw))
      return cmd_grid_window(ckpt, cond_ckpt, stride, threshold, count, seed);
    if (app.got_subcommand(interp))
      return cmd_interpolate(ckpt, c1, c2, lambda, count, seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
