#include "nnme/eval.hpp"

#include <algorithm>
#include <cstring>
#include <map>

namespace nnme {

double Rect::area() const {
  double a = 1.0;
  for (Eigen::Index j = 0; j < lo.size(); ++j) a *= hi[j] - lo[j];
  return a;
}

bool Rect::contains(const VectorXd& x) const {
  for (Eigen::Index j = 0; j < lo.size(); ++j)
    if (x[j] < lo[j] || x[j] > hi[j]) return false;
  return true;
}

EvalRegion EvalRegion::interval(double lo, double hi, int points) {
  EvalRegion r;
  Rect rect;
  rect.lo = VectorXd::Constant(1, lo);
  rect.hi = VectorXd::Constant(1, hi);
  r.add_rect(std::move(rect), {points});
  return r;
}

EvalRegion EvalRegion::box(VectorXd lo, VectorXd hi, std::vector<int> counts) {
  EvalRegion r;
  Rect rect{std::move(lo), std::move(hi)};
  r.add_rect(std::move(rect), std::move(counts));
  return r;
}

void EvalRegion::add_rect(Rect rect, std::vector<int> counts) {
  check_shape(rect.lo.size() == rect.hi.size() &&
                  counts.size() == static_cast<std::size_t>(rect.lo.size()),
              "eval region: rect/count shape mismatch");
  for (Eigen::Index j = 0; j < rect.lo.size(); ++j)
    check_shape(rect.hi[j] > rect.lo[j], "eval region: degenerate rectangle");
  for (int c : counts) check_shape(c >= 1, "eval region: need >= 1 grid point per axis");
  if (!rects_.empty())
    check_shape(rect.dim() == dim(), "eval region: mixed dimensions");
  rects_.push_back(std::move(rect));
  counts_.push_back(std::move(counts));
}

int EvalRegion::dim() const {
  check_shape(!rects_.empty(), "eval region: empty");
  return rects_.front().dim();
}

MatrixXd EvalRegion::grid_points() const {
  const int d = dim();
  std::vector<VectorXd> points;
  for (std::size_t r = 0; r < rects_.size(); ++r) {
    const Rect& rect = rects_[r];
    const auto& counts = counts_[r];
    long total = 1;
    for (int c : counts) total *= c;
    // cell-midpoint lattice: each point owns an equal-area cell, so the
    // mean-times-area Riemann sum is second-order accurate
    VectorXd p(d);
    for (long idx = 0; idx < total; ++idx) {
      long rem = idx;
      for (int j = d - 1; j >= 0; --j) {
        const int c = counts[j];
        const long pos = rem % c;
        rem /= c;
        p[j] = rect.lo[j] + (rect.hi[j] - rect.lo[j]) * (pos + 0.5) / c;
      }
      points.push_back(p);
    }
  }
  // drop exact duplicates (overlap regions)
  std::map<std::vector<double>, int> seen;
  MatrixXd out(points.size(), d);
  Eigen::Index n = 0;
  std::vector<double> key(d);
  for (const auto& p : points) {
    for (int j = 0; j < d; ++j) key[j] = p[j];
    if (seen.emplace(key, 1).second) {
      out.row(n++) = p.transpose();
    }
  }
  out.conservativeResize(n, d);
  return out;
}

double EvalRegion::area() const {
  // inclusion-exclusion over all non-empty subsets
  const std::size_t m = rects_.size();
  check_shape(m >= 1 && m <= 20, "eval region: rect count out of range");
  const int d = dim();
  double total = 0.0;
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    VectorXd lo = VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
    VectorXd hi = VectorXd::Constant(d, std::numeric_limits<double>::infinity());
    int bits = 0;
    for (std::size_t r = 0; r < m; ++r) {
      if (!(mask & (std::size_t{1} << r))) continue;
      ++bits;
      lo = lo.cwiseMax(rects_[r].lo);
      hi = hi.cwiseMin(rects_[r].hi);
    }
    double a = 1.0;
    for (int j = 0; j < d; ++j) a *= std::max(hi[j] - lo[j], 0.0);
    total += (bits % 2 ? 1.0 : -1.0) * a;
  }
  return total;
}

double ise(const RealFn& f_hat, const RealFn& f_true,
           const EvalRegion& region) {
  const MatrixXd grid = region.grid_points();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const VectorXd x = grid.row(i).transpose();
    const double diff = f_hat(x) - f_true(x);
    acc += diff * diff;
  }
  return acc / grid.rows() * region.area();
}

double ise_on_grid(const RealFn& f_hat, const MatrixXd& grid,
                   const VectorXd& truth, double area) {
  check_shape(grid.rows() == truth.size(), "ise_on_grid: size mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const double diff = f_hat(grid.row(i).transpose()) - truth[i];
    acc += diff * diff;
  }
  return acc / grid.rows() * area;
}

PosteriorMeanResult predict_posterior_mean(const RealFn& f_hat,
                                           const Prior* prior,
                                           const Standardization* std_rec,
                                           const VectorXd& w, double sigma0_sq,
                                           int K, std::uint64_t seed) {
  check_shape(K >= 1, "posterior mean: K must be >= 1");
  PosteriorMeanResult res;
  if (sigma0_sq <= 0.0) {
    res.value = f_hat(w);
    return res;
  }
  Rng rng(seed);
  const int d = static_cast<int>(w.size());
  if (prior == nullptr) {
    // option 1: x ~ N(w, sigma0^2 I)
    double acc = 0.0;
    VectorXd x(d);
    const double sd = std::sqrt(sigma0_sq);
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < d; ++j) x[j] = w[j] + sd * rng.normal();
      acc += f_hat(x);
    }
    res.value = acc / K;
    return res;
  }
  // option 2: x ~ fitted prior, self-normalized weights prop to p_U(w - x)
  std::vector<double> logw(K);
  std::vector<double> fv(K);
  for (int k = 0; k < K; ++k) {
    VectorXd x_std = prior->sample(rng);
    const VectorXd x = std_rec ? std_rec->to_orig_x(x_std) : x_std;
    fv[k] = f_hat(x);
    logw[k] = -0.5 * (w - x).squaredNorm() / sigma0_sq;
  }
  std::vector<double> wt(K);
  softmax_from_logs(logw, wt);
  double wsum = 0.0;
  for (double v : wt) wsum += v;
  const double max_logw = *std::max_element(logw.begin(), logw.end());
  if (!(wsum > 0.0) || max_logw < -700.0) {
    // prior mass disjoint from w: fall back to option 1
    res = predict_posterior_mean(f_hat, nullptr, nullptr, w, sigma0_sq, K,
                                 derive_seed(seed, 0xFA11BACCULL));
    res.fallback_used = true;
    return res;
  }
  double acc = 0.0;
  for (int k = 0; k < K; ++k) acc += wt[k] * fv[k];
  res.value = acc;
  return res;
}

BootstrapBand bootstrap_band(const Dataset& data, const FitResult& fit,
                             const TrainConfig& config, int B, double level,
                             const MatrixXd& grid, std::uint64_t seed) {
  check_shape(B >= 100, "bootstrap: B must be >= 100");
  check_shape(level > 0.0 && level < 1.0, "bootstrap: bad level");
  const int n = data.n();
  const int d = data.d();
  const Dataset std_data = data.standardized(fit.std_rec);

  // x*_i = posterior means from the fitted encoder, mapped back
  MatrixXd x_star(n, d);
  GradTape tape;
  VectorXd mu, var;
  for (int i = 0; i < n; ++i) {
    fit.model.proposal_params(std_data.w.row(i).transpose(), std_data.y[i],
                              tape, mu, var);
    x_star.row(i) = fit.std_rec.to_orig_x(mu).transpose();
  }
  VectorXd f_star(n);
  for (int i = 0; i < n; ++i) f_star[i] = fit.predict(x_star.row(i).transpose());

  const double sigma2_orig = fit.sigma2_orig();
  const double tau2_orig = fit.tau2_orig();

  MatrixXd preds(B, grid.rows());
  std::vector<char> ok(B, 0);
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 0xB007, b));
    Dataset boot = data;
    for (int i = 0; i < n; ++i) {
      const double su2 =
          data.su2.size() ? data.su2[i] : config.sigma0 * config.sigma0;
      const double se2_extra = data.se2.size() ? data.se2[i] : 0.0;
      const double resp_var =
          fit.model.noise().hetero ? tau2_orig + se2_extra : sigma2_orig;
      for (int j = 0; j < d; ++j)
        boot.w(i, j) = x_star(i, j) + rng.normal(0.0, std::sqrt(su2));
      boot.y[i] = f_star[i] + rng.normal(0.0, std::sqrt(resp_var));
    }
    try {
      TrainConfig cfg = config;
      cfg.seed = derive_seed(seed, 0x5EED, b);
      const FitResult refit = train(boot, cfg);
      for (Eigen::Index g = 0; g < grid.rows(); ++g)
        preds(b, g) = refit.predict(grid.row(g).transpose());
      ok[b] = 1;
    } catch (const std::exception&) {
      ok[b] = 0;
    }
  }

  BootstrapBand band;
  band.lo.resize(grid.rows());
  band.hi.resize(grid.rows());
  band.successes = 0;
  for (char c : ok) band.successes += c;
  band.reliable = band.successes >= static_cast<int>(0.8 * B);
  const double a = (1.0 - level) / 2.0;
  std::vector<double> col;
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    col.clear();
    for (int b = 0; b < B; ++b)
      if (ok[b]) col.push_back(preds(b, g));
    std::sort(col.begin(), col.end());
    const auto q = [&](double p) {
      const double idx = p * (col.size() - 1);
      const std::size_t lo_i = static_cast<std::size_t>(idx);
      const double frac = idx - lo_i;
      return col[lo_i] * (1.0 - frac) +
             col[std::min(lo_i + 1, col.size() - 1)] * frac;
    };
    band.lo[g] = q(a);
    band.hi[g] = q(1.0 - a);
  }
  return band;
}

PredictionErrorCv prediction_error_cv(const Dataset& data,
                                      const TrainConfig& config, int folds,
                                      int reps, bool use_fitted_prior,
                                      int k_pred, std::uint64_t seed) {
  check_shape(folds >= 2 && reps >= 1, "prediction_error_cv: bad folds/reps");
  std::vector<double> rep_errors(reps);
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(derive_seed(seed, 0xCE11, rep));
    std::vector<int> perm(data.n());
    for (int i = 0; i < data.n(); ++i) perm[i] = i;
    rng.shuffle(perm);
    double fold_mse_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<int> train_idx, test_idx;
      for (int i = 0; i < data.n(); ++i) {
        if (i % folds == f)
          test_idx.push_back(perm[i]);
        else
          train_idx.push_back(perm[i]);
      }
      TrainConfig cfg = config;
      cfg.seed = derive_seed(seed, 0xF01D, rep * 97 + f);
      const AnyFit fit = fit_method(data.rows(train_idx), cfg);
      double mse = 0.0;
      for (std::size_t t = 0; t < test_idx.size(); ++t) {
        const int row = test_idx[t];
        const VectorXd w = data.w.row(row).transpose();
        const double su2 = data.su2.size() ? data.su2[row]
                                           : config.sigma0 * config.sigma0;
        double pred;
        if (fit.method == Method::Kile || fit.method == Method::Kale ||
            fit.method == Method::Nn || fit.method == Method::Mjl) {
          pred = fit.predict(w);  // these methods predict at w directly
        } else {
          const Prior* prior =
              use_fitted_prior ? &fit.nn->model.prior() : nullptr;
          pred = predict_posterior_mean(
                     [&](const VectorXd& x) { return fit.predict(x); }, prior,
                     use_fitted_prior ? &fit.nn->std_rec : nullptr, w, su2,
                     k_pred, derive_seed(seed, 0x9EED, row))
                     .value;
        }
        const double r = data.y[row] - pred;
        mse += r * r;
      }
      fold_mse_sum += mse / test_idx.size();
    }
    rep_errors[rep] = fold_mse_sum / folds;
  }
  PredictionErrorCv out;
  double mean = 0.0;
  for (double v : rep_errors) mean += v;
  mean /= reps;
  double ss = 0.0;
  for (double v : rep_errors) ss += (v - mean) * (v - mean);
  out.mean = mean;
  out.se = reps > 1 ? std::sqrt(ss / (reps - 1.0) / reps) : 0.0;
  out.per_rep = std::move(rep_errors);
  return out;
}

}  // namespace nnme
