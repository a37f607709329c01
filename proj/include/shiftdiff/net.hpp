#pragma once

#include <cmath>
#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>

#include "shiftdiff/common.hpp"
#include "shiftdiff/rng.hpp"

namespace shiftdiff {

// 0 = pick from hardware. Set once at startup (config train.threads).
inline int& worker_threads() {
  static int n = 0;
  return n;
}

inline int effective_threads() {
  int n = worker_threads();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n < 1 ? 1 : n;
}

// Persistent worker pool; spawning a thread per dispatch costs more than the
// work itself at this problem size. Workers only enter the chunk loop while
// holding the generation they were woken for, and a run returns only after
// every participant has left the loop, so counters can be reset safely.
class WorkerPool {
 public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  // Runs fn(chunk) for chunk = 0..n_chunks-1. Chunks are fixed units of work,
  // so per-chunk accumulators reduced in chunk order give results that do not
  // depend on the number of workers.
  void run(int n_chunks, const std::function<void(int)>& fn, int max_workers) {
    int helpers = std::min({max_workers - 1, n_chunks - 1, kMaxHelpers});
    if (helpers <= 0) {
      for (int c = 0; c < n_chunks; ++c) fn(c);
      return;
    }
    ensure_started(helpers);
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_ = &fn;
      n_chunks_ = n_chunks;
      next_chunk_.store(0, std::memory_order_relaxed);
      ++generation_;
    }
    cv_.notify_all();
    chunk_loop(fn, n_chunks);  // the calling thread participates
    {
      std::unique_lock<std::mutex> lock(mu_);
      done_cv_.wait(lock, [&] { return inside_ == 0; });
      job_ = nullptr;
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  static constexpr int kMaxHelpers = 15;

  void ensure_started(int helpers) {
    while (static_cast<int>(threads_.size()) < helpers)
      threads_.emplace_back([this] { helper_loop(); });
  }

  void chunk_loop(const std::function<void(int)>& fn, int n) {
    for (;;) {
      int c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
      if (c >= n) break;
      fn(c);
    }
  }

  void helper_loop() {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* fn = nullptr;
      int n = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = job_;
        n = n_chunks_;
        if (fn) ++inside_;
      }
      if (!fn) continue;
      chunk_loop(*fn, n);
      {
        std::lock_guard<std::mutex> lock(mu_);
        --inside_;
      }
      done_cv_.notify_all();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* job_ = nullptr;
  std::atomic<int> next_chunk_{0};
  int n_chunks_ = 0;
  int inside_ = 0;
  bool stop_ = false;
  uint64_t generation_ = 0;
};

template <typename Fn>
void parallel_chunks(int n_chunks, const Fn& fn) {
  if (n_chunks <= 0) return;
  int nt = effective_threads();
  if (nt <= 1 || n_chunks == 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::function<void(int)> f = fn;
  WorkerPool::instance().run(n_chunks, f, nt);
}

struct MlpConfig {
  int data_dim = 0;
  int hidden = 128;
  int time_embed = 64;
  int num_classes = 0;
  bool conditional = false;  // one-hot condition concatenated to the input

  int input_dim() const {
    return data_dim + time_embed + (conditional ? num_classes : 0);
  }
};

struct MlpGrads {
  Matrix w1, w2, w3;
  Vec b1, b2, b3;

  void match(const MlpConfig& c) {
    w1.resize(c.hidden, c.input_dim());
    w2.resize(c.hidden, c.hidden);
    w3.resize(c.data_dim, c.hidden);
    b1.assign(c.hidden, 0.0);
    b2.assign(c.hidden, 0.0);
    b3.assign(c.data_dim, 0.0);
    w1.fill(0.0);
    w2.fill(0.0);
    w3.fill(0.0);
  }
  void zero() {
    w1.fill(0.0);
    w2.fill(0.0);
    w3.fill(0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
    std::fill(b3.begin(), b3.end(), 0.0);
  }
  void add(const MlpGrads& o) {
    auto axpy = [](Matrix& a, const Matrix& b) {
      for (size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
    };
    axpy(w1, o.w1);
    axpy(w2, o.w2);
    axpy(w3, o.w3);
    for (size_t i = 0; i < b1.size(); ++i) b1[i] += o.b1[i];
    for (size_t i = 0; i < b2.size(); ++i) b2[i] += o.b2[i];
    for (size_t i = 0; i < b3.size(); ++i) b3[i] += o.b3[i];
  }
};

// Named view over a set of parameter/gradient arrays; the optimizer and the
// checkpoint format both walk these.
struct ParamRef {
  std::string name;
  double* value;
  double* grad;  // may be null when no gradients are tracked
  size_t n;
};
using ParamSet = std::vector<ParamRef>;

// g_theta(x_t, t[, c]): two hidden SiLU layers over [x, time-embedding, one-hot].
class MlpDenoiser {
 public:
  MlpDenoiser() = default;

  MlpDenoiser(const MlpConfig& cfg, Rng rng) : cfg_(cfg) {
    require(cfg.data_dim >= 1, "net: data_dim must be >= 1");
    require(cfg.time_embed >= 4 && cfg.time_embed % 2 == 0,
            "net: time_embed must be even and >= 4");
    require(!cfg.conditional || cfg.num_classes >= 1,
            "net: conditional flag requires num_classes >= 1");
    w1_.resize(cfg.hidden, cfg.input_dim());
    w2_.resize(cfg.hidden, cfg.hidden);
    w3_.resize(cfg.data_dim, cfg.hidden);
    b1_.assign(cfg.hidden, 0.0);
    b2_.assign(cfg.hidden, 0.0);
    b3_.assign(cfg.data_dim, 0.0);
    init_uniform(w1_, rng);
    init_uniform(w2_, rng);
    init_uniform(w3_, rng);
  }

  const MlpConfig& config() const { return cfg_; }

  static constexpr size_t kParamBlocks = 6;

  ParamSet params(MlpGrads* g = nullptr) {
    return {{"net.w1", w1_.data(), g ? g->w1.data() : nullptr, w1_.size()},
            {"net.b1", b1_.data(), g ? g->b1.data() : nullptr, b1_.size()},
            {"net.w2", w2_.data(), g ? g->w2.data() : nullptr, w2_.size()},
            {"net.b2", b2_.data(), g ? g->b2.data() : nullptr, b2_.size()},
            {"net.w3", w3_.data(), g ? g->w3.data() : nullptr, w3_.size()},
            {"net.b3", b3_.data(), g ? g->b3.data() : nullptr, b3_.size()}};
  }

  void time_embedding(double t, double* out) const {
    int half = cfg_.time_embed / 2;
    for (int i = 0; i < half; ++i) {
      double f = std::exp(-std::log(10000.0) * i / (half - 1));
      out[i] = std::sin(t * f);
      out[half + i] = std::cos(t * f);
    }
  }

  // Embeddings for integer timesteps are reused heavily during training and
  // sampling; cache them (filled on the assembly thread only).
  const double* cached_embedding(int t) const {
    if (t < 0 || t > 100000) return nullptr;
    if (static_cast<size_t>(t) >= emb_cache_.size()) emb_cache_.resize(t + 1);
    Vec& slot = emb_cache_[t];
    if (slot.empty()) {
      slot.resize(cfg_.time_embed);
      time_embedding(t, slot.data());
    }
    return slot.data();
  }

  // Assembles [x, emb(t), onehot(c)] rows. ts/conds have size 1 (broadcast)
  // or x.rows(). conds ignored unless the net is conditional.
  void assemble_input(const Matrix& x, const std::vector<int>& ts,
                      const std::vector<int>& conds, Matrix& in) const {
    int n = x.rows();
    require_shape(x.cols() == cfg_.data_dim, "net: x dim mismatch");
    require(ts.size() == 1 || static_cast<int>(ts.size()) == n, "net: ts size mismatch");
    if (cfg_.conditional)
      require(conds.size() == 1 || static_cast<int>(conds.size()) == n,
              "net: conditional net needs a condition per item");
    else
      require(conds.empty(), "net: condition passed to an unconditional net");
    in.resize(n, cfg_.input_dim());
    for (int i = 0; i < n; ++i) {
      double* row = in.row(i);
      std::copy(x.row(i), x.row(i) + cfg_.data_dim, row);
      int t = ts.size() == 1 ? ts[0] : ts[i];
      const double* emb = cached_embedding(t);
      if (emb) {
        std::copy(emb, emb + cfg_.time_embed, row + cfg_.data_dim);
      } else {
        time_embedding(t, row + cfg_.data_dim);
      }
      if (cfg_.conditional) {
        int c = conds.size() == 1 ? conds[0] : conds[i];
        require(c >= 0 && c < cfg_.num_classes, "net: condition id out of range");
        double* onehot = row + cfg_.data_dim + cfg_.time_embed;
        std::fill(onehot, onehot + cfg_.num_classes, 0.0);
        onehot[c] = 1.0;
      }
    }
  }

  struct Cache {
    Matrix in, z1, s1, h1, z2, s2, h2;  // s* hold the sigmoids for backward
  };

  void forward(const Matrix& x, const std::vector<int>& ts, const std::vector<int>& conds,
               Matrix& out, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    assemble_input(x, ts, conds, c.in);
    int n = x.rows();
    c.z1.resize(n, cfg_.hidden);
    c.s1.resize(n, cfg_.hidden);
    c.h1.resize(n, cfg_.hidden);
    c.z2.resize(n, cfg_.hidden);
    c.s2.resize(n, cfg_.hidden);
    c.h2.resize(n, cfg_.hidden);
    out.resize(n, cfg_.data_dim);

    refresh_transposes();
    int n_chunks = (n + kChunk - 1) / kChunk;
    parallel_chunks(n_chunks, [&](int chunk) {
      int lo = chunk * kChunk, hi = std::min(n, lo + kChunk);
      for (int i = lo; i < hi; ++i) {
        affine_t(w1t_, b1_, c.in.row(i), c.z1.row(i));
        silu(c.z1.row(i), c.s1.row(i), c.h1.row(i), cfg_.hidden);
        affine_t(w2t_, b2_, c.h1.row(i), c.z2.row(i));
        silu(c.z2.row(i), c.s2.row(i), c.h2.row(i), cfg_.hidden);
        affine_t(w3t_, b3_, c.h2.row(i), out.row(i));
      }
    });
  }

  // Sigma-inverse-weighted mean squared error over the batch plus exact
  // reverse-mode gradients. Optionally returns dL/dg and the gradient with
  // respect to the data slice of the input (both needed for a trainable
  // shift predictor, whose output enters x_t and the regression target).
  double loss_and_grads(const Matrix& x, const std::vector<int>& ts,
                        const std::vector<int>& conds, const Matrix& target,
                        const Vec& sigma_diag, MlpGrads& grads, Matrix* dldg_out = nullptr,
                        Matrix* dx_data_out = nullptr, Cache* scratch = nullptr) const {
    int n = x.rows();
    require(n > 0, "loss_and_grads: empty batch");
    require_shape(target.rows() == n && target.cols() == cfg_.data_dim,
                  "loss_and_grads: target shape mismatch");
    require_shape(sigma_diag.empty() || static_cast<int>(sigma_diag.size()) == cfg_.data_dim,
                  "loss_and_grads: sigma_diag dim mismatch");

    Cache local;
    Cache& cache = scratch ? *scratch : local;
    Matrix g;
    forward(x, ts, conds, g, &cache);

    Matrix dldg(n, cfg_.data_dim);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* gi = g.row(i);
      const double* ti = target.row(i);
      double* di = dldg.row(i);
      for (int d = 0; d < cfg_.data_dim; ++d) {
        double inv_sigma = sigma_diag.empty() ? 1.0 : 1.0 / sigma_diag[d];
        double r = gi[d] - ti[d];
        loss += r * r * inv_sigma;
        di[d] = 2.0 * r * inv_sigma / n;
      }
    }
    loss /= n;

    backward(cache, dldg, grads, dx_data_out);
    if (dldg_out) *dldg_out = std::move(dldg);
    return loss;
  }

  // Accumulates parameter gradients for the given output gradient. Per-chunk
  // partial accumulators are reduced in chunk order, so results do not depend
  // on the number of worker threads.
  void backward(const Cache& cache, const Matrix& dout, MlpGrads& grads,
                Matrix* dx_data_out = nullptr) const {
    int n = dout.rows();
    grads.match(cfg_);
    if (dx_data_out) refresh_transposes();
    int n_chunks = (n + kChunk - 1) / kChunk;
    partial_.resize(n_chunks);
    std::vector<MlpGrads>& partial = partial_;
    Matrix dx_data;
    if (dx_data_out) dx_data.resize(n, cfg_.data_dim);

    parallel_chunks(n_chunks, [&](int chunk) {
      MlpGrads& pg = partial[chunk];
      pg.match(cfg_);
      int lo = chunk * kChunk, hi = std::min(n, lo + kChunk);
      int m = hi - lo;

      // phase 1: per-item deltas for the whole chunk; weight rows are walked
      // in the outer loop so they stay hot across items
      thread_local Matrix dz2, dz1, dh1;
      dz2.resize(m, cfg_.hidden);
      dz1.resize(m, cfg_.hidden);
      dh1.resize(m, cfg_.hidden);
      dh1.fill(0.0);
      Vec dh(cfg_.hidden);
      for (int i = 0; i < m; ++i) {
        const double* dg_i = dout.row(lo + i);
        std::fill(dh.begin(), dh.end(), 0.0);
        for (int o = 0; o < cfg_.data_dim; ++o)
          axpy(dg_i[o], w3_.row(o), dh.data(), cfg_.hidden);
        silu_backward(cache.z2.row(lo + i), cache.s2.row(lo + i), dh.data(), dz2.row(i),
                      cfg_.hidden);
      }
      for (int o = 0; o + 4 <= cfg_.hidden; o += 4) {
        for (int i = 0; i < m; ++i) {
          double a[4] = {dz2.at(i, o), dz2.at(i, o + 1), dz2.at(i, o + 2),
                         dz2.at(i, o + 3)};
          gather4(w2_.row(o), w2_.row(o + 1), w2_.row(o + 2), w2_.row(o + 3), a,
                  dh1.row(i), cfg_.hidden);
        }
      }
      for (int o = cfg_.hidden & ~3; o < cfg_.hidden; ++o)
        for (int i = 0; i < m; ++i)
          axpy(dz2.at(i, o), w2_.row(o), dh1.row(i), cfg_.hidden);
      for (int i = 0; i < m; ++i) {
        silu_backward(cache.z1.row(lo + i), cache.s1.row(lo + i), dh1.row(i), dz1.row(i),
                      cfg_.hidden);
        if (dx_data_out) {
          double* dx = dx_data.row(lo + i);
          for (int k = 0; k < cfg_.data_dim; ++k) {
            // w1t rows are contiguous over the hidden outputs
            const double* wt = w1t_.row(k);
            const double* dzr = dz1.row(i);
            double s = 0.0;
            for (int o = 0; o < cfg_.hidden; ++o) s += dzr[o] * wt[o];
            dx[k] = s;
          }
        }
      }

      // phase 2: weight gradients; each accumulator row stays hot across the
      // chunk instead of being re-streamed per item
      for (int o = 0; o < cfg_.data_dim; ++o) {
        double* wrow = pg.w3.row(o);
        double bacc = 0.0;
        for (int i = 0; i < m; ++i) {
          double d = dout.at(lo + i, o);
          bacc += d;
          axpy(d, cache.h2.row(lo + i), wrow, cfg_.hidden);
        }
        pg.b3[o] += bacc;
      }
      accumulate_layer(dz2, cache.h1, lo, m, cfg_.hidden, pg.w2, pg.b2);
      accumulate_layer(dz1, cache.in, lo, m, cfg_.input_dim(), pg.w1, pg.b1);
    });

    for (const auto& pg : partial) grads.add(pg);
    if (dx_data_out) *dx_data_out = std::move(dx_data);
  }

 private:
  static constexpr int kChunk = 32;

  // dW[o] += sum_i dz[i][o] * act[lo+i]; four output rows share each streamed
  // activation row.
  static void accumulate_layer(const Matrix& dz, const Matrix& act, int lo, int m,
                               int width, Matrix& dw, Vec& db) {
    int H = dz.cols();
    int o = 0;
    for (; o + 4 <= H; o += 4) {
      double b0 = 0, b1 = 0, b2 = 0, b3 = 0;
      for (int i = 0; i < m; ++i) {
        double a[4] = {dz.at(i, o), dz.at(i, o + 1), dz.at(i, o + 2), dz.at(i, o + 3)};
        b0 += a[0];
        b1 += a[1];
        b2 += a[2];
        b3 += a[3];
        axpy4(act.row(lo + i), a, dw.row(o), dw.row(o + 1), dw.row(o + 2), dw.row(o + 3),
              width);
      }
      db[o] += b0;
      db[o + 1] += b1;
      db[o + 2] += b2;
      db[o + 3] += b3;
    }
    for (; o < H; ++o) {
      double b = 0;
      for (int i = 0; i < m; ++i) {
        double d = dz.at(i, o);
        b += d;
        axpy(d, act.row(lo + i), dw.row(o), width);
      }
      db[o] += b;
    }
  }

  static void silu(const double* z, double* s_out, double* h, int n) {
    for (int i = 0; i < n; ++i) {
      double s = 1.0 / (1.0 + std::exp(-z[i]));
      s_out[i] = s;
      h[i] = z[i] * s;
    }
  }

  static void silu_backward(const double* z, const double* s, const double* dh, double* dz,
                            int n) {
    for (int i = 0; i < n; ++i) dz[i] = dh[i] * s[i] * (1.0 + z[i] * (1.0 - s[i]));
  }

  // y += a * x over contiguous ranges; restrict lets the compiler vectorize
  // without alias versioning.
  static void axpy(double a, const double* __restrict x, double* __restrict y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
  }

  // Four accumulator rows against one shared input row: x is loaded once per
  // lane instead of once per output.
  static void axpy4(const double* __restrict x, const double* a, double* __restrict y0,
                    double* __restrict y1, double* __restrict y2, double* __restrict y3,
                    int n) {
    for (int i = 0; i < n; ++i) {
      double xi = x[i];
      y0[i] += a[0] * xi;
      y1[i] += a[1] * xi;
      y2[i] += a[2] * xi;
      y3[i] += a[3] * xi;
    }
  }

  // y += a0 x0 + a1 x1 + a2 x2 + a3 x3, evaluated in ascending order.
  static void gather4(const double* __restrict x0, const double* __restrict x1,
                      const double* __restrict x2, const double* __restrict x3,
                      const double* a, double* __restrict y, int n) {
    for (int i = 0; i < n; ++i)
      y[i] += a[0] * x0[i] + a[1] * x1[i] + a[2] * x2[i] + a[3] * x3[i];
  }

  // out = Wt^T in + b with Wt stored input-major: the inner loop is a
  // contiguous axpy over the outputs, which vectorizes cleanly.
  static void affine_t(const Matrix& wt, const Vec& b, const double* in, double* out) {
    int I = wt.rows(), O = wt.cols();
    std::copy(b.begin(), b.end(), out);
    for (int k = 0; k < I; ++k) axpy(in[k], wt.row(k), out, O);
  }

  // Input-major copies of the weights, rebuilt on entry to forward (the
  // optimizer mutates the primary layout between steps).
  void refresh_transposes() const {
    auto tr = [](const Matrix& w, Matrix& wt) {
      wt.resize(w.cols(), w.rows());
      for (int o = 0; o < w.rows(); ++o)
        for (int k = 0; k < w.cols(); ++k) wt.at(k, o) = w.at(o, k);
    };
    tr(w1_, w1t_);
    tr(w2_, w2t_);
    tr(w3_, w3t_);
  }

  static void init_uniform(Matrix& w, Rng& rng) {
    double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (size_t i = 0; i < w.size(); ++i)
      w.data()[i] = (2.0 * rng.uniform() - 1.0) * scale;
  }

  MlpConfig cfg_;
  Matrix w1_, w2_, w3_;
  Vec b1_, b2_, b3_;
  mutable Matrix w1t_, w2t_, w3t_;
  mutable std::vector<Vec> emb_cache_;
  mutable std::vector<MlpGrads> partial_;  // backward scratch; not reentrant
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_decay = 0.999;
};

// Bias-corrected adaptive-moment updates plus an EMA shadow of the parameters.
// The shadow starts at the initial parameters; sampling always reads it.
class Optimizer {
 public:
  Optimizer() = default;

  Optimizer(const AdamConfig& cfg, const ParamSet& params) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.n, 0.0);
      v_.emplace_back(p.n, 0.0);
      shadow_.emplace_back(p.value, p.value + p.n);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  void step(const ParamSet& params) {
    require(params.size() == m_.size(), "optimizer: param set changed");
    ++step_;
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t p = 0; p < params.size(); ++p) {
      require(params[p].grad != nullptr, "optimizer: missing gradients");
      double* w = params[p].value;
      const double* g = params[p].grad;
      double* m = m_[p].data();
      double* v = v_[p].data();
      double* sh = shadow_[p].data();
      size_t n = params[p].n;
      // elementwise update; fixed 4096-wide segments keep any threading exact
      int n_seg = static_cast<int>((n + 4095) / 4096);
      parallel_chunks(n_seg, [&](int seg) {
        size_t lo = static_cast<size_t>(seg) * 4096, hi = std::min(n, lo + 4096);
        for (size_t i = lo; i < hi; ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
          sh[i] = cfg_.ema_decay * sh[i] + (1.0 - cfg_.ema_decay) * w[i];
        }
      });
    }
  }

  const Vec& shadow(size_t p) const { return shadow_[p]; }
  Vec& shadow_mutable(size_t p) { return shadow_[p]; }
  const Vec& moment1(size_t p) const { return m_[p]; }
  Vec& moment1_mutable(size_t p) { return m_[p]; }
  const Vec& moment2(size_t p) const { return v_[p]; }
  Vec& moment2_mutable(size_t p) { return v_[p]; }
  void set_step_count(int64_t s) { step_ = s; }

  // Copies EMA weights into a congruent parameter set (e.g. a sampling net).
  void write_shadow(const ParamSet& params) const {
    require(params.size() == shadow_.size(), "optimizer: param set changed");
    for (size_t p = 0; p < params.size(); ++p)
      std::copy(shadow_[p].begin(), shadow_[p].end(), params[p].value);
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<Vec> m_, v_, shadow_;
};

}  // namespace shiftdiff
