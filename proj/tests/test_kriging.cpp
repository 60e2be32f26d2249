#include "doctest.h"
#include "nnme/kriging.hpp"
#include "oracles.hpp"

using namespace nnme;

namespace {

Dataset small_gp_data(Rng& rng, int n, int d, double beta, double noise_sd,
                      double sigma0 = 0.0) {
  MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.uniform(0.0, 1.0);
  MatrixXd gram(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      gram(i, j) = std::exp(-beta * (x.row(i) - x.row(j)).squaredNorm()) +
                   (i == j ? 1e-8 : 0.0);
  const Eigen::LLT<MatrixXd> llt(gram);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  VectorXd f = llt.matrixL() * z;
  f.array() -= f.mean();  // mean-zero truth so far-field behavior is 0

  Dataset ds;
  ds.w.resize(n, d);
  ds.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j)
      ds.w(i, j) = x(i, j) + (sigma0 > 0 ? rng.normal(0, sigma0) : 0.0);
    ds.y[i] = f[i] + (noise_sd > 0 ? rng.normal(0, noise_sd) : 0.0);
  }
  return ds;
}

}  // namespace

TEST_CASE("noiseless BLUP interpolates the training data") {
  // well-separated points keep the Gram matrix well conditioned, so the
  // zero-nugget solve interpolates to solver precision
  Dataset ds;
  const int n = 8;
  ds.w.resize(n, 1);
  ds.y.resize(n);
  Rng rng(2);
  for (int i = 0; i < n; ++i) {
    ds.w(i, 0) = static_cast<double>(i) / (n - 1);
    ds.y[i] = rng.normal();
  }
  ds.y.array() -= ds.y.mean();
  KrigingParams p;
  p.tau2 = 1.0;
  p.beta = 30.0;
  p.nugget = 0.0;
  KrigingPredictor pred(p, ds);
  for (int i = 0; i < ds.n(); ++i) {
    const double fhat = pred.predict(ds.w.row(i).transpose());
    CHECK(fhat == doctest::Approx(ds.y[i]).epsilon(1e-5));
  }
}

TEST_CASE("3-point prediction matches a hand-solved linear system") {
  Dataset ds;
  ds.w.resize(3, 1);
  ds.w << 0.0, 0.5, 1.0;
  ds.y.resize(3);
  ds.y << 1.0, -0.5, 0.25;
  const double mean = ds.y.mean();
  KrigingParams p;
  p.tau2 = 2.0;
  p.beta = 3.0;
  p.nugget = 0.1;
  const double xs = 0.3;

  // independent oracle: solve the 3x3 system with Cramer's rule
  auto k = [&](double a, double b) {
    return p.tau2 * std::exp(-p.beta * (a - b) * (a - b));
  };
  double K[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      K[i][j] = k(ds.w(i, 0), ds.w(j, 0)) + (i == j ? p.nugget : 0.0);
  const VectorXd yc = ds.y.array() - mean;
  auto det3 = [](double m[3][3]) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const double D = det3(K);
  VectorXd alpha(3);
  for (int c = 0; c < 3; ++c) {
    double M[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M[i][j] = (j == c) ? yc[i] : K[i][j];
    alpha[c] = det3(M) / D;
  }
  double oracle = mean;
  for (int i = 0; i < 3; ++i) oracle += k(xs, ds.w(i, 0)) * alpha[i];

  const double pred = kile_predict(p, ds, (VectorXd(1) << xs).finished());
  CHECK(std::abs(pred - oracle) < 1e-10);
}

TEST_CASE("far-field prediction decays to the prior mean") {
  Rng rng(5);
  Dataset ds = small_gp_data(rng, 10, 1, 4.0, 0.05);
  ds.y.array() -= ds.y.mean();  // prior mean 0
  KrigingParams p;
  p.tau2 = 1.0;
  p.beta = 4.0;
  p.nugget = 0.01;
  const double far = kile_predict(p, ds, (VectorXd(1) << 50.0).finished());
  CHECK(std::abs(far) < 1e-12);
}

TEST_CASE("kale kernel reduces to kile at sigma0 = 0") {
  Rng rng(7);
  Dataset ds = small_gp_data(rng, 15, 2, 8.0, 0.1);
  KrigingParams p;
  p.tau2 = 1.3;
  p.beta = 6.0;
  p.nugget = 0.05;
  KrigingParams pk = p;
  pk.kale = true;
  pk.sigma0_sq = 0.0;
  for (int t = 0; t < 5; ++t) {
    VectorXd x(2);
    x << rng.uniform(0, 1), rng.uniform(0, 1);
    CHECK(std::abs(kile_predict(p, ds, x) - kale_predict(pk, ds, x)) < 1e-8);
  }
}

TEST_CASE("kale kernel diagonal is exactly tau2 and off-diagonal matches the display") {
  VectorXd a(2), b(2);
  a << 0.1, 0.2;
  b << 0.1, 0.2;
  CHECK(kale_kernel(a, b, 1.7, 16.0, 0.5, 2) == 1.7);

  // d = 2, beta = 16, sigma0 = 0.1, distance 0.3
  b << 0.1 + 0.3, 0.2;
  const double denom = 1.0 + 4.0 * 16.0 * 0.01;
  const double expected = 1.0 * std::exp(-16.0 * 0.09 / denom) / denom;
  CHECK(kale_kernel(a, b, 1.0, 16.0, 0.01, 2) ==
        doctest::Approx(expected).epsilon(1e-14));

  const double cross_denom = 1.0 + 16.0 * 0.01;
  const double cross_expected =
      1.0 * std::exp(-16.0 * 0.09 / cross_denom) / cross_denom;
  CHECK(kale_cross_kernel(a, b, 1.0, 16.0, 0.01, 2) ==
        doctest::Approx(cross_expected).epsilon(1e-14));
}

TEST_CASE("kale converges to kile as sigma0^2 -> 0 (fitted-parameter form)") {
  Rng rng(11);
  Dataset ds = small_gp_data(rng, 30, 1, 8.0, 0.1);
  KrigingParams p;
  p.tau2 = 0.9;
  p.beta = 7.0;
  p.nugget = 0.02;
  KrigingParams pk = p;
  pk.kale = true;
  pk.sigma0_sq = 1e-10;
  double max_diff = 0.0;
  for (int g = 0; g < 100; ++g) {
    VectorXd x(1);
    x << g / 99.0;
    max_diff = std::max(
        max_diff, std::abs(kile_predict(p, ds, x) - kale_predict(pk, ds, x)));
  }
  CHECK(max_diff < 1e-6);
}

TEST_CASE("predictions are linear in y") {
  Rng rng(13);
  Dataset ds = small_gp_data(rng, 20, 1, 5.0, 0.1);
  KrigingParams p;
  p.tau2 = 1.0;
  p.beta = 5.0;
  p.nugget = 0.05;
  Dataset scaled = ds;
  scaled.y *= 3.5;
  VectorXd x(1);
  x << 0.37;
  CHECK(kile_predict(p, scaled, x) ==
        doctest::Approx(3.5 * kile_predict(p, ds, x)).epsilon(1e-10));
}

TEST_CASE("fitted likelihood beats random parameter draws") {
  Rng rng(17);
  Dataset ds = small_gp_data(rng, 60, 1, 16.0, 0.1);
  KrigingOptions opts;
  opts.seed = 3;
  opts.multistarts = 4;
  opts.nm_max_iter = 120;
  const KrigingParams fitted = kile_fit(ds, opts);
  const VectorXd yc = ds.y.array() - ds.y.mean();
  const double fitted_ll = kriging_log_likelihood(fitted, ds.w, yc);
  Rng draw(99);
  for (int t = 0; t < 20; ++t) {
    KrigingParams p;
    p.tau2 = std::exp(draw.normal(0.0, 2.0));
    p.beta = std::exp(draw.normal(1.0, 2.0));
    p.nugget = std::exp(draw.normal(-2.0, 2.0));
    CHECK(fitted_ll >= kriging_log_likelihood(p, ds.w, yc) - 1e-9);
  }
}

TEST_CASE("kale fit recovers a sensible predictor on noisy-covariate data") {
  Rng rng(23);
  Dataset ds = small_gp_data(rng, 80, 1, 16.0, 0.1, /*sigma0=*/0.1);
  KrigingOptions opts;
  opts.seed = 5;
  opts.multistarts = 3;
  opts.nm_max_iter = 100;
  const KrigingParams p = kale_fit(ds, 0.01, opts);
  CHECK(p.kale);
  CHECK(p.tau2 > 0);
  CHECK(p.beta > 0);
  CHECK(p.nugget >= 0);
  // prediction at the data median should be finite and of data scale
  const double pred = kale_predict(p, ds, (VectorXd(1) << 0.5).finished());
  CHECK(std::isfinite(pred));
  CHECK(std::abs(pred) < 10.0);
}

TEST_CASE("n-cap and non-finite inputs are rejected") {
  Rng rng(29);
  Dataset ds = small_gp_data(rng, 10, 1, 4.0, 0.1);
  KrigingOptions opts;
  opts.n_cap = 5;
  CHECK_THROWS_AS(kile_fit(ds, opts), ConfigError);

  KrigingParams p;
  KrigingPredictor pred(p, ds);
  VectorXd bad(1);
  bad << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(pred.predict(bad), NumericError);
}
