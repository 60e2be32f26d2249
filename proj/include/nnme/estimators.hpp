#pragma once

#include "nnme/mem_model.hpp"

namespace nnme {

// Number of worker threads used for row-level parallelism. Results are
// bitwise identical for any setting: rows are processed in fixed blocks and
// block partials are reduced in index order.
int worker_threads();
void set_worker_threads(int n);

// Fork-join over [0, n_blocks); blocks may run on any worker.
void parallel_blocks(int n_blocks, const std::function<void(int)>& fn);

// One Monte Carlo batch: per-row proposal parameters, z draws, importance
// samples x_ik and log weights. All caches are deterministic functions of
// (model snapshot, dataset, row list, K, draw_seed): the z stream for row i
// is seeded by derive_seed(draw_seed, global row index).
struct McBatch {
  std::vector<int> rows;
  int K = 0;
  int d = 0;
  MatrixXd mu, var, raw;  // B x d (raw = encoder scale-head pre-softplus)
  MatrixXd z, x;          // (B*K) x d, sample index = b*K + k
  VectorXd logw;          // B*K
  VectorXd fvals;         // B*K, decoder output at x_ik
  std::uint64_t model_version = 0;

  int B() const { return static_cast<int>(rows.size()); }
  int flat(int b, int k) const { return b * K + k; }
};

void populate_mc_batch(const MemModel& model, const Dataset& data,
                       const std::vector<int>& rows, int K,
                       std::uint64_t draw_seed, McBatch& batch);

// sum_i [ logsumexp_k(log beta_ik) - log K ]. If every weight of some row is
// -inf the total is -inf and *degenerate_rows counts them.
double elbo_estimate(const McBatch& batch, int* degenerate_rows = nullptr);

struct ModelGrads {
  MlpGrads theta;   // decoder
  VectorXd gamma;   // prior (unconstrained scale)
  MlpGrads phi;     // encoder

  void set_zero();
  void add(const ModelGrads& other);
};

ModelGrads make_model_grads(const MemModel& model);

enum class PhiEstimator { None, Plain, Dreg };
enum class WeightMode { SelfNormalized, Uniform };

struct GradOptions {
  bool theta = true;
  bool gamma = true;
  PhiEstimator phi = PhiEstimator::None;
  WeightMode weights = WeightMode::SelfNormalized;
};

struct GradDiagnostics {
  int skipped_rows = 0;  // rows dropped for non-finite contributions
};

// Fused gradient pass: accumulates the requested parameter-group gradients
// of the IWAE objective over the batch, in ascent convention.
//   theta/gamma: sum_i sum_k wt_ik * grad log p       (plain estimator)
//   phi plain:   sum_i sum_k wt_ik * total d/dphi log(p/q) through x(phi,z)
//   phi dreg:    sum_i sum_k wt_ik^2 * [d/dx log(p/q)] * dx/dphi
// with wt = softmax_k(log beta) or 1/K under WeightMode::Uniform.
GradDiagnostics accumulate_gradients(const MemModel& model,
                                     const Dataset& data, const McBatch& batch,
                                     const GradOptions& opts,
                                     ModelGrads& grads);

// Spec-surface wrappers.
GradDiagnostics grad_plain(const MemModel& model, const Dataset& data,
                           const McBatch& batch, ModelGrads& grads,
                           bool include_phi = false);
GradDiagnostics grad_dreg(const MemModel& model, const Dataset& data,
                          const McBatch& batch, ModelGrads& grads);

// Per-row self-normalized weighted squared residual sum_k wt_ik (y_i-f_ik)^2.
double row_weighted_sq_residual(const McBatch& batch, const Dataset& data,
                                int b);

// Importance-weight health of one batch: per-row effective sample size
// 1 / sum_k wt^2 and weight entropy -sum_k wt log wt.
struct BatchDiagnostics {
  VectorXd ess;      // B
  VectorXd entropy;  // B
  double mean_ess() const { return ess.size() ? ess.mean() : 0.0; }
  double mean_entropy() const { return entropy.size() ? entropy.mean() : 0.0; }
};
BatchDiagnostics batch_diagnostics(const McBatch& batch);

// sigma2_update: mean over batch rows of the weighted squared residuals.
double sigma2_update(const McBatch& batch, const Dataset& data);

// tau2_update: mean of (weighted squared residual - se2_i), clamped at 0.
double tau2_update(const McBatch& batch, const Dataset& data);

// d = 1 oracle for the marginal log-likelihood: adaptive Gauss-Legendre of
// the joint density over a window around w covering +-8 sd of p_U plus the
// prior's O(1) standardized range.
double marginal_loglik_quadrature(const MemModel& model, const VectorXd& w,
                                  double y, double su2_row = -1.0,
                                  double se2_row = -1.0);

}  // namespace nnme
