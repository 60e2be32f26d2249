#pragma once

#include <string>

#include "nnme/mem_model.hpp"
#include "nnme/region.hpp"

namespace nnme {

// ----- deterministic test functions ------------------------------------------

// sin((3x - 1.5) pi) / (1 + 4 (6x - 3)^2 (sgn(2x - 1) + 1)), with sgn(0) = 0.
double berry_function(double x);
double sin_pi(double x);
double trivariate_product(const VectorXd& x);  // (x1 x2 + x3)^2

// ----- Gaussian-process function draws ---------------------------------------

// Exact multivariate-normal draw at `points` under tau2 * exp(-beta |a-b|^2)
// via jittered Cholesky.
VectorXd gp_draw(const MatrixXd& points, double beta, double tau2, Rng& rng);

// Two-kernel spliced 1-D GP: data x must be sorted ascending with even n.
// The first half (indices 0..n/2-1) comes from GP(beta1), the second half
// (n/2-1..n-1) from GP(beta2) shifted so both halves share the value at the
// junction point x_{n/2-1}. Grid values are drawn jointly and split at the
// junction location.
struct SplicedGp {
  VectorXd f_data;
  VectorXd f_grid;
};
SplicedGp gp_draw_spliced(const VectorXd& x_sorted, const VectorXd& grid,
                          double beta1, double beta2, Rng& rng,
                          double tau2 = 1.0);

// Random relu surface on [-1,1]^2: five 32-wide hidden layers; first-layer
// weights and biases from N(0,1), the rest from N(0, 0.2^2).
Mlp nn_surface(std::uint64_t seed);

// ----- covariate laws and noise ----------------------------------------------

using XSampler = std::function<VectorXd(Rng&)>;

XSampler uniform_box_law(int d, double lo, double hi);
XSampler beta22_law();
// the 2-component bivariate Gaussian mixture of the 2-D experiments
XSampler gaussian_mixture_2d_law();
GaussianMixturePrior gaussian_mixture_2d_prior();

MatrixXd sample_x(const XSampler& law, int n, int d, Rng& rng);

// w = x + N(0, sigma0^2 I), y = f + N(0, sigma^2)
Dataset add_noise(const MatrixXd& x, const VectorXd& f, double sigma0,
                  double sigma, Rng& rng);

// Heteroscedastic variant: per-row variances drawn from the supplied pools;
// y noise variance tau2 + se2_i, w noise variance su2_i.
Dataset add_noise_hetero(const MatrixXd& x, const VectorXd& f,
                         const std::vector<double>& su2_pool,
                         const std::vector<double>& se2_pool, double tau2,
                         Rng& rng);

// ----- named scenarios --------------------------------------------------------

struct ScenarioSpec {
  std::string name;
  int n = 2000;
  double sigma0 = -1.0;  // < 0: scenario default
  double sigma = -1.0;
  std::uint64_t seed = 1;
  std::string x_law;   // "uniform" (default) or "beta" for ex1-berry
  int grid_res = 0;    // 0: scenario default resolution
};

struct SimulatedData {
  Dataset data;       // original scale
  MatrixXd truth_x;   // evaluation grid
  VectorXd truth_f;   // f on the grid
  EvalRegion region;
  double sigma0 = 0.0;
  double sigma = 0.0;
  double tau2 = 0.0;  // heteroscedastic scenarios
};

const std::vector<std::string>& scenario_names();

// Bitwise-reproducible from (spec, seed). Unknown names raise ConfigError.
SimulatedData make_scenario(const ScenarioSpec& spec);

}  // namespace nnme
