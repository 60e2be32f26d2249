#include "nnme/simgen.hpp"

#include <algorithm>

#include "nnme/kriging.hpp"

namespace nnme {

double berry_function(double x) {
  const double s = x > 0.5 ? 1.0 : (x < 0.5 ? -1.0 : 0.0);  // sgn(2x-1)
  const double t = 6.0 * x - 3.0;
  return std::sin((3.0 * x - 1.5) * M_PI) / (1.0 + 4.0 * t * t * (s + 1.0));
}

double sin_pi(double x) { return std::sin(M_PI * x); }

double trivariate_product(const VectorXd& x) {
  check_shape(x.size() == 3, "trivariate function needs d = 3");
  const double v = x[0] * x[1] + x[2];
  return v * v;
}

VectorXd gp_draw(const MatrixXd& points, double beta, double tau2, Rng& rng) {
  const int m = static_cast<int>(points.rows());
  check_shape(m >= 1, "gp_draw: need at least one point");
  MatrixXd gram(m, m);
  for (int i = 0; i < m; ++i) {
    gram(i, i) = tau2;
    for (int j = i + 1; j < m; ++j) {
      const double v =
          tau2 * std::exp(-beta * (points.row(i) - points.row(j)).squaredNorm());
      gram(i, j) = v;
      gram(j, i) = v;
    }
  }
  Eigen::LLT<MatrixXd> llt(gram);
  for (double jitter = 1e-10; llt.info() != Eigen::Success; jitter *= 10.0) {
    if (jitter > 1e-8 + 1e-20)
      throw NumericError("gp_draw: Gram matrix not PD after jitter");
    MatrixXd g = gram;
    g.diagonal().array() += jitter;
    llt.compute(g);
  }
  VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rng.normal();
  return llt.matrixL() * z;
}

SplicedGp gp_draw_spliced(const VectorXd& x_sorted, const VectorXd& grid,
                          double beta1, double beta2, Rng& rng, double tau2) {
  const int n = static_cast<int>(x_sorted.size());
  check_shape(n >= 2 && n % 2 == 0, "spliced gp: need even n >= 2");
  for (int i = 1; i < n; ++i)
    check_shape(x_sorted[i - 1] <= x_sorted[i], "spliced gp: x must be sorted");
  const int m = n / 2;             // junction at index m-1 (x_m, 1-based)
  const double xj = x_sorted[m - 1];

  std::vector<int> grid1, grid2;
  for (Eigen::Index g = 0; g < grid.size(); ++g)
    (grid[g] <= xj ? grid1 : grid2).push_back(static_cast<int>(g));

  // first piece: data indices 0..m-1 plus the low grid points
  MatrixXd pts1(m + grid1.size(), 1);
  for (int i = 0; i < m; ++i) pts1(i, 0) = x_sorted[i];
  for (std::size_t g = 0; g < grid1.size(); ++g)
    pts1(m + g, 0) = grid[grid1[g]];
  const VectorXd f1 = gp_draw(pts1, beta1, tau2, rng);

  // second piece: junction plus data indices m..n-1 plus the high grid points
  const int n2 = n - m + 1;
  MatrixXd pts2(n2 + grid2.size(), 1);
  for (int i = 0; i < n2; ++i) pts2(i, 0) = x_sorted[m - 1 + i];
  for (std::size_t g = 0; g < grid2.size(); ++g)
    pts2(n2 + g, 0) = grid[grid2[g]];
  const VectorXd f2 = gp_draw(pts2, beta2, tau2, rng);

  // second half rebased onto the first half's junction value; the shared
  // value at x_j is f1[m-1] exactly (no rounding in the i = 0 term)
  const double fj = f1[m - 1];
  SplicedGp out;
  out.f_data.resize(n);
  for (int i = 0; i < m; ++i) out.f_data[i] = f1[i];
  for (int i = m; i < n; ++i) out.f_data[i] = fj + (f2[i - m + 1] - f2[0]);
  out.f_grid.resize(grid.size());
  for (std::size_t g = 0; g < grid1.size(); ++g)
    out.f_grid[grid1[g]] = f1[m + g];
  for (std::size_t g = 0; g < grid2.size(); ++g)
    out.f_grid[grid2[g]] = fj + (f2[n2 + g] - f2[0]);
  return out;
}

Mlp nn_surface(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5F1E1D));
  std::vector<int> widths{2, 32, 32, 32, 32, 32, 1};
  std::vector<Act> acts(6, Act::Relu);
  acts.back() = Act::Linear;
  Mlp net(widths, acts);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double sd = l == 0 ? 1.0 : 0.2;
    MatrixXd w(net.weight(l).rows(), net.weight(l).cols());
    VectorXd b(net.bias(l).size());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal(0, sd);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal(0, sd);
    net.set_weight(l, w);
    net.set_bias(l, b);
  }
  return net;
}

XSampler uniform_box_law(int d, double lo, double hi) {
  return [d, lo, hi](Rng& rng) {
    VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = rng.uniform(lo, hi);
    return x;
  };
}

XSampler beta22_law() {
  return [](Rng& rng) {
    VectorXd x(1);
    x[0] = rng.beta(2.0, 2.0);
    return x;
  };
}

GaussianMixturePrior gaussian_mixture_2d_prior() {
  VectorXd logits(2);
  logits << std::log(0.7), std::log(0.3);
  MatrixXd means(2, 2);
  means << -0.4, 0.2, 0.2, 0.4;
  MatrixXd log_vars(2, 2);
  log_vars << std::log(0.04), std::log(0.09), std::log(0.09), std::log(0.04);
  return GaussianMixturePrior(logits, means, log_vars);
}

XSampler gaussian_mixture_2d_law() {
  auto prior = std::make_shared<GaussianMixturePrior>(gaussian_mixture_2d_prior());
  return [prior](Rng& rng) { return prior->sample(rng); };
}

MatrixXd sample_x(const XSampler& law, int n, int d, Rng& rng) {
  check_shape(n >= 1, "sample_x: n must be >= 1");
  MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    const VectorXd row = law(rng);
    check_shape(row.size() == d, "sample_x: law dimension mismatch");
    x.row(i) = row.transpose();
  }
  return x;
}

Dataset add_noise(const MatrixXd& x, const VectorXd& f, double sigma0,
                  double sigma, Rng& rng) {
  check_shape(x.rows() == f.size(), "add_noise: shape mismatch");
  check_shape(sigma0 >= 0 && sigma >= 0, "add_noise: negative sd");
  Dataset ds;
  ds.w.resize(x.rows(), x.cols());
  ds.y.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      ds.w(i, j) = x(i, j) + (sigma0 > 0 ? rng.normal(0, sigma0) : 0.0);
    ds.y[i] = f[i] + (sigma > 0 ? rng.normal(0, sigma) : 0.0);
  }
  return ds;
}

Dataset add_noise_hetero(const MatrixXd& x, const VectorXd& f,
                         const std::vector<double>& su2_pool,
                         const std::vector<double>& se2_pool, double tau2,
                         Rng& rng) {
  check_shape(!su2_pool.empty() && !se2_pool.empty(),
              "add_noise_hetero: empty variance pools");
  check_shape(tau2 >= 0, "add_noise_hetero: tau2 must be >= 0");
  Dataset ds;
  const Eigen::Index n = x.rows();
  ds.w.resize(n, x.cols());
  ds.y.resize(n);
  ds.su2.resize(n);
  ds.se2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.su2[i] = su2_pool[rng.below(su2_pool.size())];
    ds.se2[i] = se2_pool[rng.below(se2_pool.size())];
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      ds.w(i, j) = x(i, j) + rng.normal(0, std::sqrt(ds.su2[i]));
    ds.y[i] = f[i] + rng.normal(0, std::sqrt(tau2 + ds.se2[i]));
  }
  return ds;
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{
      "exp1-sin",      "exp2-trivariate", "ex1-berry",
      "ex2-gp-spliced", "ex3-nn-surface",  "ex3-gp-mixture",
      "appc-gp-uniform", "sea-synthetic"};
  return names;
}

namespace {

VectorXd apply_fn(const MatrixXd& x, const std::function<double(const VectorXd&)>& f) {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = f(x.row(i).transpose());
  return out;
}

}  // namespace

SimulatedData make_scenario(const ScenarioSpec& spec) {
  if (spec.n < 1) throw ConfigError("scenario: n must be >= 1");
  Rng rng(derive_seed(spec.seed, 0x5CE9A210ULL));
  SimulatedData out;

  auto pick = [](double v, double dflt) { return v >= 0 ? v : dflt; };

  if (spec.name == "exp1-sin") {
    out.sigma0 = pick(spec.sigma0, 0.1);
    out.sigma = pick(spec.sigma, 0.1);
    const MatrixXd x = sample_x(uniform_box_law(1, -2.0, 2.0), spec.n, 1, rng);
    auto f = [](const VectorXd& v) { return sin_pi(v[0]); };
    out.data = add_noise(x, apply_fn(x, f), out.sigma0, out.sigma, rng);
    out.region = EvalRegion::interval(-2.0, 2.0,
                                      spec.grid_res > 0 ? spec.grid_res : 1000);
    out.truth_x = out.region.grid_points();
    out.truth_f = apply_fn(out.truth_x, f);
  } else if (spec.name == "exp2-trivariate") {
    out.sigma0 = pick(spec.sigma0, 0.1);
    out.sigma = pick(spec.sigma, 0.1);
    const MatrixXd x = sample_x(uniform_box_law(3, -1.0, 1.0), spec.n, 3, rng);
    out.data = add_noise(x, apply_fn(x, trivariate_product), out.sigma0,
                         out.sigma, rng);
    const int res = spec.grid_res > 0 ? spec.grid_res : 21;
    out.region = EvalRegion::box(VectorXd::Constant(3, -1.0),
                                 VectorXd::Constant(3, 1.0), {res, res, res});
    out.truth_x = out.region.grid_points();
    out.truth_f = apply_fn(out.truth_x, trivariate_product);
  } else if (spec.name == "ex1-berry") {
    out.sigma0 = pick(spec.sigma0, 0.2);
    out.sigma = pick(spec.sigma, 0.1);
    const XSampler law = spec.x_law == "beta" ? beta22_law()
                                              : uniform_box_law(1, 0.0, 1.0);
    if (!spec.x_law.empty() && spec.x_law != "beta" && spec.x_law != "uniform")
      throw ConfigError("ex1-berry: x_law must be uniform or beta");
    const MatrixXd x = sample_x(law, spec.n, 1, rng);
    auto f = [](const VectorXd& v) { return berry_function(v[0]); };
    out.data = add_noise(x, apply_fn(x, f), out.sigma0, out.sigma, rng);
    out.region = EvalRegion::interval(0.0, 1.0,
                                      spec.grid_res > 0 ? spec.grid_res : 1000);
    out.truth_x = out.region.grid_points();
    out.truth_f = apply_fn(out.truth_x, f);
  } else if (spec.name == "ex2-gp-spliced") {
    if (spec.n % 2) throw ConfigError("ex2-gp-spliced: n must be even");
    out.sigma0 = pick(spec.sigma0, 0.05);
    out.sigma = pick(spec.sigma, 0.2);
    MatrixXd x = sample_x(uniform_box_law(1, 0.0, 1.0), spec.n, 1, rng);
    std::sort(x.col(0).begin(), x.col(0).end());
    out.region = EvalRegion::interval(0.0, 1.0,
                                      spec.grid_res > 0 ? spec.grid_res : 1000);
    out.truth_x = out.region.grid_points();
    const SplicedGp gp =
        gp_draw_spliced(x.col(0), out.truth_x.col(0), 16.0, 64.0, rng);
    out.data = add_noise(x, gp.f_data, out.sigma0, out.sigma, rng);
    out.truth_f = gp.f_grid;
  } else if (spec.name == "ex3-nn-surface") {
    out.sigma0 = pick(spec.sigma0, 0.1);
    out.sigma = pick(spec.sigma, 0.2);
    const Mlp surface = nn_surface(spec.seed);
    auto f = [&surface](const VectorXd& v) { return surface.forward(v)[0]; };
    const MatrixXd x = sample_x(uniform_box_law(2, -1.0, 1.0), spec.n, 2, rng);
    out.data = add_noise(x, apply_fn(x, f), out.sigma0, out.sigma, rng);
    const int res = spec.grid_res > 0 ? spec.grid_res : 72;
    out.region = EvalRegion::box(VectorXd::Constant(2, -1.0),
                                 VectorXd::Constant(2, 1.0), {res, res});
    out.truth_x = out.region.grid_points();
    out.truth_f = apply_fn(out.truth_x, f);
  } else if (spec.name == "ex3-gp-mixture" || spec.name == "appc-gp-uniform") {
    out.sigma0 = pick(spec.sigma0, 0.1);
    out.sigma = pick(spec.sigma, 0.2);
    MatrixXd x;
    if (spec.name == "ex3-gp-mixture") {
      x = sample_x(gaussian_mixture_2d_law(), spec.n, 2, rng);
      const int res = spec.grid_res > 0 ? spec.grid_res : 72;
      EvalRegion region;
      region.add_rect(
          {(VectorXd(2) << -1.0, -1.0).finished(),
           (VectorXd(2) << 0.2, 0.5).finished()},
          {res, res});
      region.add_rect(
          {(VectorXd(2) << -0.5, -0.2).finished(),
           (VectorXd(2) << 1.0, 1.0).finished()},
          {res, res});
      out.region = std::move(region);
    } else {
      x = sample_x(uniform_box_law(2, -1.0, 1.0), spec.n, 2, rng);
      const int res = spec.grid_res > 0 ? spec.grid_res : 72;
      out.region = EvalRegion::box(VectorXd::Constant(2, -1.0),
                                   VectorXd::Constant(2, 1.0), {res, res});
    }
    out.truth_x = out.region.grid_points();
    // joint GP draw over data and grid points
    MatrixXd all(x.rows() + out.truth_x.rows(), 2);
    all.topRows(x.rows()) = x;
    all.bottomRows(out.truth_x.rows()) = out.truth_x;
    const VectorXd f_all = gp_draw(all, 16.0, 1.0, rng);
    out.data = add_noise(x, f_all.head(x.rows()), out.sigma0, out.sigma, rng);
    out.truth_f = f_all.tail(out.truth_x.rows());
  } else if (spec.name == "sea-synthetic") {
    out.tau2 = 0.04;
    VectorXd logits(2);
    logits << 0.0, 0.0;
    MatrixXd ls(2, 1), lr(2, 1);
    ls << std::log(4.0), std::log(12.0);
    lr << std::log(6.0), std::log(6.0);
    GammaMixturePrior xlaw(logits, ls, lr);
    MatrixXd x(spec.n, 1);
    for (int i = 0; i < spec.n; ++i) x.row(i) = xlaw.sample(rng).transpose();
    auto f = [](const VectorXd& v) {
      return std::sin(2.0 * M_PI * v[0]) + v[0];
    };
    std::vector<double> su2_pool, se2_pool;
    for (int i = 0; i < 20; ++i) {
      su2_pool.push_back(0.002 + (0.03 - 0.002) * i / 19.0);
      se2_pool.push_back(0.002 + (0.02 - 0.002) * i / 19.0);
    }
    out.data = add_noise_hetero(x, apply_fn(x, f), su2_pool, se2_pool,
                                out.tau2, rng);
    out.region = EvalRegion::interval(0.1, 2.2,
                                      spec.grid_res > 0 ? spec.grid_res : 500);
    out.truth_x = out.region.grid_points();
    out.truth_f = apply_fn(out.truth_x, f);
  } else {
    throw ConfigError("unknown scenario: " + spec.name);
  }
  out.data.validate();
  return out;
}

}  // namespace nnme
