#pragma once

#include "nnme/region.hpp"
#include "nnme/trainer.hpp"

namespace nnme {

struct PosteriorMeanResult {
  double value = 0.0;
  bool fallback_used = false;
};

// E[f_hat(x) | w] with the posterior approximated either by N(w, sigma0^2 I)
// (prior == nullptr, the flat-prior option) or by importance-weighting draws
// from the fitted prior with weights proportional to p_U(w - x*). If every
// prior draw has zero weight the flat-prior option is used as a fallback and
// flagged. std_rec maps prior draws (standardized space) back to data units.
PosteriorMeanResult predict_posterior_mean(const RealFn& f_hat,
                                           const Prior* prior,
                                           const Standardization* std_rec,
                                           const VectorXd& w, double sigma0_sq,
                                           int K, std::uint64_t seed);

struct BootstrapBand {
  VectorXd lo, hi;
  int successes = 0;
  bool reliable = true;
};

// Parametric bootstrap conditioning on the encoder posterior means: fixes
// x*_i = mu(w_i, y_i), redraws (w*, y*) from the fitted model with the known
// per-row variances, refits B times with fresh seeds, and returns pointwise
// percentile bands on the grid.
BootstrapBand bootstrap_band(const Dataset& data, const FitResult& fit,
                             const TrainConfig& config, int B, double level,
                             const MatrixXd& grid, std::uint64_t seed);

struct PredictionErrorCv {
  double mean = 0.0;
  double se = 0.0;
  std::vector<double> per_rep;
};

// Repeated 5-fold prediction error of posterior-mean predictions.
PredictionErrorCv prediction_error_cv(const Dataset& data,
                                      const TrainConfig& config, int folds,
                                      int reps, bool use_fitted_prior,
                                      int k_pred, std::uint64_t seed);

}  // namespace nnme
