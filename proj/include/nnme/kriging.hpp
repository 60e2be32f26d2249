#pragma once

#include "nnme/mem_model.hpp"

namespace nnme {

// Radial-basis kriging hyper-parameters. `kale` selects the measurement-error
// adjusted kernels; sigma0_sq is the known measurement variance.
struct KrigingParams {
  double tau2 = 1.0;    // kernel amplitude
  double beta = 1.0;    // inverse squared length scale
  double nugget = 0.1;  // observation noise variance sigma^2_k
  double sigma0_sq = 0.0;
  bool kale = false;
};

struct KrigingOptions {
  int n_cap = 2500;      // cubic solve guard
  int multistarts = 5;
  int nm_max_iter = 200;
  std::uint64_t seed = 1;
};

// Kernel entries (exposed for direct-substitution tests).
double kile_kernel(const VectorXd& a, const VectorXd& b, double tau2,
                   double beta);
// KALE training kernel: exactly tau2 on the diagonal.
double kale_kernel(const VectorXd& wi, const VectorXd& wj, double tau2,
                   double beta, double sigma0_sq, int d);
double kale_cross_kernel(const VectorXd& x, const VectorXd& wi, double tau2,
                         double beta, double sigma0_sq, int d);

// Gaussian (pseudo-)log-likelihood of the centred responses under the
// chosen kernel Gram matrix plus nugget.
double kriging_log_likelihood(const KrigingParams& p, const MatrixXd& w,
                              const VectorXd& y_centred);

KrigingParams kile_fit(const Dataset& data, const KrigingOptions& opts = {});
KrigingParams kale_fit(const Dataset& data, double sigma0_sq,
                       const KrigingOptions& opts = {});

// Caches the Cholesky solve; prediction over a grid is then O(n) per point.
class KrigingPredictor {
 public:
  KrigingPredictor(const KrigingParams& params, const Dataset& data);

  double predict(const VectorXd& x) const;
  const KrigingParams& params() const { return params_; }

 private:
  KrigingParams params_;
  MatrixXd w_;
  VectorXd alpha_;  // (K + nugget I)^-1 (y - mean)
  double y_mean_;
};

double kile_predict(const KrigingParams& params, const Dataset& data,
                    const VectorXd& x);
double kale_predict(const KrigingParams& params, const Dataset& data,
                    const VectorXd& x);

// Cholesky with escalating jitter (1e-10 -> 1e-6); throws NumericError if the
// matrix stays non-PD.
Eigen::LLT<MatrixXd> chol_with_jitter(MatrixXd gram);

// Derivative-free Nelder-Mead minimizer (compact; used for the log-parameter
// likelihood search).
VectorXd nelder_mead(const std::function<double(const VectorXd&)>& f,
                     const VectorXd& start, double step, int max_iter);

}  // namespace nnme
