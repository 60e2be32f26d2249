#include "nnme/kriging.hpp"

#include <algorithm>

namespace nnme {

double kile_kernel(const VectorXd& a, const VectorXd& b, double tau2,
                   double beta) {
  return tau2 * std::exp(-beta * (a - b).squaredNorm());
}

double kale_kernel(const VectorXd& wi, const VectorXd& wj, double tau2,
                   double beta, double sigma0_sq, int d) {
  if (wi == wj) return tau2;
  const double denom = 1.0 + 4.0 * beta * sigma0_sq;
  return tau2 * std::exp(-beta * (wi - wj).squaredNorm() / denom) /
         std::pow(denom, 0.5 * d);
}

double kale_cross_kernel(const VectorXd& x, const VectorXd& wi, double tau2,
                         double beta, double sigma0_sq, int d) {
  const double denom = 1.0 + beta * sigma0_sq;
  return tau2 * std::exp(-beta * (x - wi).squaredNorm() / denom) /
         std::pow(denom, 0.5 * d);
}

Eigen::LLT<MatrixXd> chol_with_jitter(MatrixXd gram) {
  Eigen::LLT<MatrixXd> llt(gram);
  if (llt.info() == Eigen::Success) return llt;
  for (double jitter = 1e-10; jitter <= 1e-6 + 1e-18; jitter *= 10.0) {
    MatrixXd g = gram;
    g.diagonal().array() += jitter;
    llt.compute(g);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError("kriging: Gram matrix not positive definite after jitter");
}

namespace {

MatrixXd gram_matrix(const KrigingParams& p, const MatrixXd& w) {
  const int n = static_cast<int>(w.rows());
  const int d = static_cast<int>(w.cols());
  MatrixXd g(n, n);
  for (int i = 0; i < n; ++i) {
    g(i, i) = p.tau2 + p.nugget;
    for (int j = i + 1; j < n; ++j) {
      const VectorXd a = w.row(i).transpose();
      const VectorXd b = w.row(j).transpose();
      const double v = p.kale ? kale_kernel(a, b, p.tau2, p.beta, p.sigma0_sq, d)
                              : kile_kernel(a, b, p.tau2, p.beta);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

KrigingParams fit_impl(const Dataset& data, bool kale, double sigma0_sq,
                       const KrigingOptions& opts) {
  data.validate();
  const int n = data.n();
  if (n > opts.n_cap)
    throw ConfigError("kriging: n exceeds the configured cap (cubic solve)");
  check_shape(n >= 2, "kriging: need at least two rows");

  const double y_mean = data.y.mean();
  const VectorXd yc = data.y.array() - y_mean;
  const double y_var =
      std::max(yc.squaredNorm() / n, 1e-10);

  // median pairwise squared distance on a subsample for the length scale
  Rng rng(opts.seed);
  std::vector<double> d2;
  const int sub = std::min(n, 200);
  for (int t = 0; t < sub * 4; ++t) {
    const int i = static_cast<int>(rng.below(n));
    const int j = static_cast<int>(rng.below(n));
    if (i == j) continue;
    d2.push_back((data.w.row(i) - data.w.row(j)).squaredNorm());
  }
  std::sort(d2.begin(), d2.end());
  const double med = d2.empty() ? 1.0 : std::max(d2[d2.size() / 2], 1e-8);

  auto neg_loglik = [&](const VectorXd& logp) {
    KrigingParams p;
    p.tau2 = std::exp(logp[0]);
    p.beta = std::exp(logp[1]);
    p.nugget = std::exp(logp[2]);
    p.kale = kale;
    p.sigma0_sq = sigma0_sq;
    if (!std::isfinite(p.tau2) || !std::isfinite(p.beta) ||
        !std::isfinite(p.nugget))
      return 1e300;
    try {
      return -kriging_log_likelihood(p, data.w, yc);
    } catch (const NumericError&) {
      return 1e300;
    }
  };

  VectorXd base(3);
  base << std::log(y_var), std::log(1.0 / med), std::log(0.1 * y_var);

  double best_val = 1e300;
  VectorXd best = base;
  for (int s = 0; s < opts.multistarts; ++s) {
    VectorXd start = base;
    if (s > 0)
      for (int i = 0; i < 3; ++i) start[i] += rng.normal(0.0, 1.5);
    const VectorXd sol = nelder_mead(neg_loglik, start, 0.7, opts.nm_max_iter);
    const double val = neg_loglik(sol);
    if (val < best_val) {
      best_val = val;
      best = sol;
    }
  }

  KrigingParams p;
  p.tau2 = std::exp(best[0]);
  p.beta = std::exp(best[1]);
  p.nugget = std::exp(best[2]);
  p.kale = kale;
  p.sigma0_sq = sigma0_sq;
  return p;
}

}  // namespace

double kriging_log_likelihood(const KrigingParams& p, const MatrixXd& w,
                              const VectorXd& y_centred) {
  const int n = static_cast<int>(w.rows());
  const auto llt = chol_with_jitter(gram_matrix(p, w));
  const VectorXd alpha = llt.solve(y_centred);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * y_centred.dot(alpha) - 0.5 * logdet -
         0.5 * n * std::log(2.0 * M_PI);
}

KrigingParams kile_fit(const Dataset& data, const KrigingOptions& opts) {
  return fit_impl(data, false, 0.0, opts);
}

KrigingParams kale_fit(const Dataset& data, double sigma0_sq,
                       const KrigingOptions& opts) {
  return fit_impl(data, true, sigma0_sq, opts);
}

KrigingPredictor::KrigingPredictor(const KrigingParams& params,
                                   const Dataset& data)
    : params_(params), w_(data.w) {
  y_mean_ = data.y.mean();
  const VectorXd yc = data.y.array() - y_mean_;
  const auto llt = chol_with_jitter(gram_matrix(params_, w_));
  alpha_ = llt.solve(yc);
}

double KrigingPredictor::predict(const VectorXd& x) const {
  check_shape(x.size() == w_.cols(), "kriging predict: dimension mismatch");
  if (!x.allFinite()) throw NumericError("kriging predict: non-finite input");
  const int n = static_cast<int>(w_.rows());
  const int d = static_cast<int>(w_.cols());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd wi = w_.row(i).transpose();
    const double k =
        params_.kale
            ? kale_cross_kernel(x, wi, params_.tau2, params_.beta,
                                params_.sigma0_sq, d)
            : kile_kernel(x, wi, params_.tau2, params_.beta);
    acc += k * alpha_[i];
  }
  return y_mean_ + acc;
}

double kile_predict(const KrigingParams& params, const Dataset& data,
                    const VectorXd& x) {
  return KrigingPredictor(params, data).predict(x);
}

double kale_predict(const KrigingParams& params, const Dataset& data,
                    const VectorXd& x) {
  return KrigingPredictor(params, data).predict(x);
}

VectorXd nelder_mead(const std::function<double(const VectorXd&)>& f,
                     const VectorXd& start, double step, int max_iter) {
  const int n = static_cast<int>(start.size());
  std::vector<VectorXd> pts(n + 1, start);
  std::vector<double> vals(n + 1);
  for (int i = 1; i <= n; ++i) pts[i][i - 1] += step;
  for (int i = 0; i <= n; ++i) vals[i] = f(pts[i]);

  auto order = [&] {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return vals[a] < vals[b]; });
    std::vector<VectorXd> p2(n + 1);
    std::vector<double> v2(n + 1);
    for (int i = 0; i <= n; ++i) {
      p2[i] = pts[idx[i]];
      v2[i] = vals[idx[i]];
    }
    pts = std::move(p2);
    vals = std::move(v2);
  };

  for (int it = 0; it < max_iter; ++it) {
    order();
    if (std::abs(vals[n] - vals[0]) < 1e-10 * (1.0 + std::abs(vals[0]))) break;
    VectorXd centroid = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += pts[i];
    centroid /= n;

    const VectorXd refl = centroid + (centroid - pts[n]);
    const double frefl = f(refl);
    if (frefl < vals[0]) {
      const VectorXd expd = centroid + 2.0 * (centroid - pts[n]);
      const double fexp = f(expd);
      if (fexp < frefl) {
        pts[n] = expd;
        vals[n] = fexp;
      } else {
        pts[n] = refl;
        vals[n] = frefl;
      }
    } else if (frefl < vals[n - 1]) {
      pts[n] = refl;
      vals[n] = frefl;
    } else {
      const VectorXd contr = centroid + 0.5 * (pts[n] - centroid);
      const double fcon = f(contr);
      if (fcon < vals[n]) {
        pts[n] = contr;
        vals[n] = fcon;
      } else {
        for (int i = 1; i <= n; ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          vals[i] = f(pts[i]);
        }
      }
    }
  }
  order();
  return pts[0];
}

}  // namespace nnme
