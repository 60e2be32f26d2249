#include "nnme/estimators.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace nnme {

namespace {

int g_workers = 0;

constexpr int kRowBlock = 16;

}  // namespace

int worker_threads() {
  if (g_workers > 0) return g_workers;
  if (const char* env = std::getenv("NNME_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return g_workers = n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return g_workers = hw > 0 ? static_cast<int>(hw) : 1;
}

void set_worker_threads(int n) { g_workers = n > 0 ? n : 0; }

void parallel_blocks(int n_blocks, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_threads(), n_blocks);
  if (workers <= 1) {
    for (int b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<int> next{0};
  auto run = [&] {
    for (;;) {
      const int b = next.fetch_add(1);
      if (b >= n_blocks) return;
      fn(b);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
}

void populate_mc_batch(const MemModel& model, const Dataset& data,
                       const std::vector<int>& rows, int K,
                       std::uint64_t draw_seed, McBatch& batch) {
  check_shape(K >= 1, "mc batch: K must be >= 1");
  const int d = model.dim();
  const int B = static_cast<int>(rows.size());
  batch.rows = rows;
  batch.K = K;
  batch.d = d;
  batch.mu.resize(B, d);
  batch.var.resize(B, d);
  batch.raw.resize(B, d);
  batch.z.resize(static_cast<Eigen::Index>(B) * K, d);
  batch.x.resize(static_cast<Eigen::Index>(B) * K, d);
  batch.logw.resize(static_cast<Eigen::Index>(B) * K);
  batch.fvals.resize(static_cast<Eigen::Index>(B) * K);
  batch.model_version = model.snapshot_version();

  const int n_blocks = (B + kRowBlock - 1) / kRowBlock;
  parallel_blocks(n_blocks, [&](int blk) {
    thread_local GradTape enc_tape, dec_tape;
    VectorXd mu, var, w, xs, zs;
    const int lo = blk * kRowBlock;
    const int hi = std::min(B, lo + kRowBlock);
    for (int b = lo; b < hi; ++b) {
      const int row = rows[b];
      w = data.w.row(row).transpose();
      const double y = data.y[row];
      const double su2 = data.su2.size() ? data.su2[row] : -1.0;
      const double se2 = data.se2.size() ? data.se2[row] : -1.0;
      model.proposal_params(w, y, enc_tape, mu, var);
      batch.mu.row(b) = mu.transpose();
      batch.var.row(b) = var.transpose();
      batch.raw.row(b) = enc_tape.output().tail(d).transpose();
      Rng zrng(derive_seed(draw_seed, static_cast<std::uint64_t>(row)));
      zs.resize(d);
      for (int k = 0; k < K; ++k) {
        for (int j = 0; j < d; ++j) zs[j] = zrng.normal();
        xs = MemModel::proposal_sample(mu, var, zs);
        const int id = batch.flat(b, k);
        batch.z.row(id) = zs.transpose();
        batch.x.row(id) = xs.transpose();
        model.decoder().forward(xs, dec_tape);
        const double f = dec_tape.output()[0];
        batch.fvals[id] = f;
        // log beta with log q evaluated via the z substitution: the
        // (x - mu)^2 / var term is exactly z^2.
        double logq = 0.0;
        for (int j = 0; j < d; ++j)
          logq += -0.5 * std::log(2.0 * M_PI * var[j]) - 0.5 * zs[j] * zs[j];
        const double prior_term = model.prior().log_density(xs);
        const double u_term = model.merr().log_pdf(w - xs, su2);
        const double eps_term =
            log_normal_pdf(y, f, model.response_var(se2));
        batch.logw[id] = prior_term + u_term + eps_term - logq;
      }
    }
  });
}

double elbo_estimate(const McBatch& batch, int* degenerate_rows) {
  double total = 0.0;
  int degenerate = 0;
  for (int b = 0; b < batch.B(); ++b) {
    const double lse = log_sum_exp(std::span<const double>(
        batch.logw.data() + batch.flat(b, 0), batch.K));
    if (!std::isfinite(lse)) ++degenerate;
    total += lse - std::log(static_cast<double>(batch.K));
  }
  if (degenerate_rows) *degenerate_rows = degenerate;
  return total;
}

void ModelGrads::set_zero() {
  theta.set_zero();
  gamma.setZero();
  phi.set_zero();
}

void ModelGrads::add(const ModelGrads& other) {
  theta.add_scaled(other.theta, 1.0);
  gamma += other.gamma;
  phi.add_scaled(other.phi, 1.0);
}

ModelGrads make_model_grads(const MemModel& model) {
  ModelGrads g;
  g.theta = model.decoder().make_grads();
  g.gamma = VectorXd::Zero(static_cast<Eigen::Index>(model.gamma_count()));
  g.phi = model.encoder().make_grads();
  return g;
}

namespace {

bool grads_finite(const ModelGrads& g) {
  for (const auto& m : g.theta.dW)
    if (!m.allFinite()) return false;
  for (const auto& v : g.theta.db)
    if (!v.allFinite()) return false;
  if (!g.gamma.allFinite()) return false;
  for (const auto& m : g.phi.dW)
    if (!m.allFinite()) return false;
  for (const auto& v : g.phi.db)
    if (!v.allFinite()) return false;
  return true;
}

}  // namespace

GradDiagnostics accumulate_gradients(const MemModel& model,
                                     const Dataset& data, const McBatch& batch,
                                     const GradOptions& opts,
                                     ModelGrads& grads) {
  if (batch.model_version != model.snapshot_version())
    throw TapeError("gradient pass: batch is stale (model changed since populate)");
  const int d = batch.d;
  const int K = batch.K;
  const int B = batch.B();
  const bool want_phi = opts.phi != PhiEstimator::None;
  const int n_blocks = (B + kRowBlock - 1) / kRowBlock;

  std::vector<ModelGrads> partials(n_blocks);
  std::vector<int> skipped(n_blocks, 0);

  parallel_blocks(n_blocks, [&](int blk) {
    ModelGrads& part = partials[blk];
    part = make_model_grads(model);
    ModelGrads row_acc = make_model_grads(model);
    GradTape dec_tape, enc_tape;
    VectorXd w, xs, f_xgrad, prior_xg, prior_pg, G;
    VectorXd wt(K);
    VectorXd enc_out_grad(2 * d);
    const int lo = blk * kRowBlock;
    const int hi = std::min(B, lo + kRowBlock);
    for (int b = lo; b < hi; ++b) {
      const int row = batch.rows[b];
      w = data.w.row(row).transpose();
      const double y = data.y[row];
      const double su2 = data.su2.size() ? data.su2[row] : -1.0;
      const double se2 = data.se2.size() ? data.se2[row] : -1.0;
      const double v_eps = model.response_var(se2);

      if (opts.weights == WeightMode::SelfNormalized) {
        softmax_from_logs(
            std::span<const double>(batch.logw.data() + batch.flat(b, 0), K),
            std::span<double>(wt.data(), K));
      } else {
        wt.setConstant(1.0 / K);
      }
      double wsum = 0.0;
      for (int k = 0; k < K; ++k) wsum += wt[k];
      if (!(wsum > 0.0) || !wt.allFinite()) {
        ++skipped[blk];
        continue;
      }

      row_acc.set_zero();
      enc_out_grad.setZero();
      bool row_ok = true;

      for (int k = 0; k < K; ++k) {
        const double wtk = wt[k];
        if (wtk == 0.0 && opts.weights == WeightMode::SelfNormalized) continue;
        const int id = batch.flat(b, k);
        xs = batch.x.row(id).transpose();

        model.decoder().forward(xs, dec_tape);
        const double f = dec_tape.output()[0];
        const double resid_scale = (y - f) / v_eps;
        static const VectorXd kOne = VectorXd::Ones(1);
        model.decoder().backward(dec_tape, kOne,
                                 opts.theta ? &row_acc.theta : nullptr,
                                 wtk * resid_scale, &f_xgrad);

        const bool want_gamma = opts.gamma && model.gamma_count() > 0;
        if (want_phi || want_gamma) {
          model.prior().log_density_grad(xs, want_phi ? &prior_xg : nullptr,
                                         want_gamma ? &prior_pg : nullptr);
          if (want_gamma && prior_pg.size() > 0)
            row_acc.gamma += wtk * prior_pg;
        }

        if (want_phi) {
          // G = d/dx log p(w,y,x) at x_ik
          G = prior_xg + model.merr().x_grad(w - xs, su2) +
              resid_scale * f_xgrad;
          if (!G.allFinite()) {
            row_ok = false;
            break;
          }
          if (opts.phi == PhiEstimator::Dreg) {
            const double c = wtk * wtk;
            for (int j = 0; j < d; ++j) {
              const double sj = std::sqrt(batch.var(b, j));
              const double Dj = G[j] + batch.z(id, j) / sj;
              enc_out_grad[j] += c * Dj;
              enc_out_grad[d + j] += c * Dj * batch.z(id, j) / (2.0 * sj);
            }
          } else {
            for (int j = 0; j < d; ++j) {
              const double vj = batch.var(b, j);
              const double sj = std::sqrt(vj);
              enc_out_grad[j] += wtk * G[j];
              enc_out_grad[d + j] +=
                  wtk * (G[j] * batch.z(id, j) / (2.0 * sj) + 0.5 / vj);
            }
          }
        }
      }

      if (row_ok && want_phi) {
        // chain the variance head through softplus: dvar/draw = sigmoid(raw)
        for (int j = 0; j < d; ++j)
          enc_out_grad[d + j] *= sigmoid(batch.raw(b, j));
        // rebuild the encoder tape for this row (model is unchanged)
        VectorXd mu_chk, var_chk;
        model.proposal_params(w, y, enc_tape, mu_chk, var_chk);
        model.encoder().backward(enc_tape, enc_out_grad, &row_acc.phi, 1.0,
                                 nullptr);
      }

      if (row_ok && grads_finite(row_acc)) {
        part.add(row_acc);
      } else {
        ++skipped[blk];
      }
    }
  });

  for (int blk = 0; blk < n_blocks; ++blk) grads.add(partials[blk]);
  GradDiagnostics diag;
  for (int s : skipped) diag.skipped_rows += s;
  return diag;
}

GradDiagnostics grad_plain(const MemModel& model, const Dataset& data,
                           const McBatch& batch, ModelGrads& grads,
                           bool include_phi) {
  GradOptions opts;
  opts.theta = true;
  opts.gamma = true;
  opts.phi = include_phi ? PhiEstimator::Plain : PhiEstimator::None;
  return accumulate_gradients(model, data, batch, opts, grads);
}

GradDiagnostics grad_dreg(const MemModel& model, const Dataset& data,
                          const McBatch& batch, ModelGrads& grads) {
  GradOptions opts;
  opts.theta = false;
  opts.gamma = false;
  opts.phi = PhiEstimator::Dreg;
  return accumulate_gradients(model, data, batch, opts, grads);
}

double row_weighted_sq_residual(const McBatch& batch, const Dataset& data,
                                int b) {
  const int K = batch.K;
  thread_local std::vector<double> wt;
  wt.resize(K);
  softmax_from_logs(
      std::span<const double>(batch.logw.data() + batch.flat(b, 0), K),
      std::span<double>(wt.data(), K));
  const double y = data.y[batch.rows[b]];
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    const double r = y - batch.fvals[batch.flat(b, k)];
    acc += wt[k] * r * r;
  }
  return acc;
}

BatchDiagnostics batch_diagnostics(const McBatch& batch) {
  const int K = batch.K;
  BatchDiagnostics diag;
  diag.ess.resize(batch.B());
  diag.entropy.resize(batch.B());
  std::vector<double> wt(K);
  for (int b = 0; b < batch.B(); ++b) {
    softmax_from_logs(
        std::span<const double>(batch.logw.data() + batch.flat(b, 0), K),
        std::span<double>(wt.data(), K));
    double sq = 0.0, ent = 0.0;
    for (int k = 0; k < K; ++k) {
      sq += wt[k] * wt[k];
      if (wt[k] > 0.0) ent -= wt[k] * std::log(wt[k]);
    }
    diag.ess[b] = sq > 0.0 ? 1.0 / sq : 0.0;
    diag.entropy[b] = ent;
  }
  return diag;
}

double sigma2_update(const McBatch& batch, const Dataset& data) {
  double acc = 0.0;
  for (int b = 0; b < batch.B(); ++b)
    acc += row_weighted_sq_residual(batch, data, b);
  return acc / batch.B();
}

double tau2_update(const McBatch& batch, const Dataset& data) {
  if (data.se2.size() == 0)
    throw ConfigError("tau2_update: dataset has no per-row se2 column");
  double acc = 0.0;
  for (int b = 0; b < batch.B(); ++b)
    acc += row_weighted_sq_residual(batch, data, b) - data.se2[batch.rows[b]];
  return std::max(acc / batch.B(), 0.0);
}

// ---------------------------------------------------------------------------
// Quadrature oracle (d = 1)
// ---------------------------------------------------------------------------

namespace {

// 15-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr int kGL = 15;
const double kGLx[kGL] = {
    0.0,
    -0.2011940939974345, 0.2011940939974345,
    -0.3941513470775634, 0.3941513470775634,
    -0.5709721726085388, 0.5709721726085388,
    -0.7244177313601701, 0.7244177313601701,
    -0.8482065834104272, 0.8482065834104272,
    -0.9372733924007060, 0.9372733924007060,
    -0.9879925180204854, 0.9879925180204854};
const double kGLw[kGL] = {
    0.2025782419255613,
    0.1984314853271116, 0.1984314853271116,
    0.1861610000155622, 0.1861610000155622,
    0.1662692058169939, 0.1662692058169939,
    0.1395706779261543, 0.1395706779261543,
    0.1071592204671719, 0.1071592204671719,
    0.0703660474881081, 0.0703660474881081,
    0.0307532419961173, 0.0307532419961173};

struct LogIntegrand {
  const MemModel* model;
  VectorXd w;
  double y, su2, se2;
  double shift;  // subtracted before exponentiation

  double operator()(double xv) const {
    VectorXd x(1);
    x[0] = xv;
    return std::exp(
        model->joint_log_density(w, y, x, su2, se2).total() - shift);
  }
};

double gl_panel(const LogIntegrand& f, double a, double b) {
  const double h = 0.5 * (b - a);
  const double c = 0.5 * (a + b);
  double s = 0.0;
  for (int i = 0; i < kGL; ++i) s += kGLw[i] * f(c + h * kGLx[i]);
  return s * h;
}

double adaptive_gl(const LogIntegrand& f, double a, double b, double whole,
                   double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gl_panel(f, a, m);
  const double right = gl_panel(f, m, b);
  if (depth >= 48 || std::abs(left + right - whole) <= tol)
    return left + right;
  return adaptive_gl(f, a, m, left, 0.5 * tol, depth + 1) +
         adaptive_gl(f, m, b, right, 0.5 * tol, depth + 1);
}

}  // namespace

double marginal_loglik_quadrature(const MemModel& model, const VectorXd& w,
                                  double y, double su2_row, double se2_row) {
  if (model.dim() != 1)
    throw ConfigError("marginal_loglik_quadrature supports d = 1 only");
  double u_var = 1.0;
  switch (model.merr().kind) {
    case MeasurementError::Kind::Diagonal:
      u_var = model.merr().var_diag[0];
      break;
    case MeasurementError::Kind::PerRow:
      check_shape(su2_row >= 0, "quadrature: per-row su2 required");
      u_var = su2_row * model.merr().row_scale[0];
      break;
    case MeasurementError::Kind::Custom:
      u_var = 1.0;
      break;
  }
  const double sd = std::sqrt(std::max(u_var, 1e-30));
  // +-8 sd of p_U around w, widened by an O(1) margin so priors centred away
  // from w (standardized data) stay covered; extra width only adds accuracy.
  const double a = w[0] - 8.0 * sd - 8.0;
  const double b = w[0] + 8.0 * sd + 8.0;

  LogIntegrand f{&model, w, y, su2_row, se2_row, 0.0};
  // scale by the max over a coarse scan to keep exp() in range
  double peak = kNegInf;
  const int n_scan = 256;
  for (int i = 0; i <= n_scan; ++i) {
    VectorXd x(1);
    x[0] = a + (b - a) * i / n_scan;
    peak = std::max(peak,
                    model.joint_log_density(w, y, x, su2_row, se2_row).total());
  }
  if (!std::isfinite(peak)) return kNegInf;
  f.shift = peak;

  const double whole = gl_panel(f, a, b);
  const double integral =
      adaptive_gl(f, a, b, whole, std::max(whole, 1e-300) * 1e-10, 0);
  if (!(integral > 0.0)) return kNegInf;
  return peak + std::log(integral);
}

}  // namespace nnme
