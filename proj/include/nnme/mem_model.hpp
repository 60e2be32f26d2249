#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "nnme/prior.hpp"

namespace nnme {

// Per-coordinate affine record from the pre-processing step; invertible by
// construction (scales are clamped away from zero).
struct Standardization {
  VectorXd w_mean, w_scale;
  double y_mean = 0.0, y_scale = 1.0;

  VectorXd to_std_x(const VectorXd& x_orig) const;
  VectorXd to_orig_x(const VectorXd& x_std) const;
  double to_std_y(double y) const { return (y - y_mean) / y_scale; }
  double to_orig_y(double y) const { return y_mean + y_scale * y; }

  void write(std::ostream& os) const;
  static Standardization read(std::istream& is);
};

// Observed rows (w_i, y_i), optionally with known per-row variances
// su2 = var of the measurement error and se2 = extra response variance.
struct Dataset {
  MatrixXd w;   // n x d
  VectorXd y;   // n
  VectorXd su2; // n or empty
  VectorXd se2; // n or empty

  int n() const { return static_cast<int>(w.rows()); }
  int d() const { return static_cast<int>(w.cols()); }
  bool heteroscedastic() const { return su2.size() > 0 || se2.size() > 0; }

  void validate() const;
  Dataset rows(const std::vector<int>& idx) const;

  // Column layout: w1..wd,y[,su2,se2]; 17 significant digits.
  static Dataset read_csv(const std::string& path);
  void write_csv(const std::string& path) const;

  Standardization compute_standardization() const;
  Dataset standardized(const Standardization& s) const;
};

struct ResponseNoise {
  bool hetero = false;
  double sigma2 = 1.0;  // homoscedastic variance
  double tau2 = 0.0;    // heteroscedastic: var = tau2 + se2_row
};

// Measurement error density p_U: diagonal Gaussian; either a fixed diagonal
// or a per-row scalar variance times a fixed diagonal scaling (per-coordinate
// standardization factors), or a user-supplied log-density.
struct MeasurementError {
  enum class Kind { Diagonal, PerRow, Custom };
  Kind kind = Kind::Diagonal;
  VectorXd var_diag;   // Diagonal: variances per coordinate
  VectorXd row_scale;  // PerRow: effective var_j = su2_row * row_scale[j]
  std::function<double(const VectorXd&)> custom_logpdf;   // of u = w - x
  std::function<VectorXd(const VectorXd&)> custom_grad_u; // d logpdf / du

  static MeasurementError iso(int d, double sigma0_sq);
  static MeasurementError diagonal(VectorXd var_diag);
  static MeasurementError per_row(VectorXd row_scale);

  double log_pdf(const VectorXd& u, double su2_row) const;
  // gradient with respect to x where u = w - x
  VectorXd x_grad(const VectorXd& u, double su2_row) const;
};

struct JointParts {
  double prior = 0.0;
  double u = 0.0;
  double eps = 0.0;
  double total() const { return prior + u + eps; }
};

// The assembled measurement-error model on the standardized scale: decoder
// f_theta (d -> 1), prior for X, encoder body (d+1 -> 2d), response noise
// and measurement-error density.
class MemModel {
 public:
  MemModel() = default;
  MemModel(Mlp decoder, std::unique_ptr<Prior> prior, Mlp encoder,
           ResponseNoise noise, MeasurementError merr,
           bool residual_link = false, double var_floor = 1e-6);

  MemModel(const MemModel& other);
  MemModel& operator=(const MemModel& other);
  MemModel(MemModel&&) = default;
  MemModel& operator=(MemModel&&) = default;

  int dim() const { return decoder_.input_dim(); }
  const Mlp& decoder() const { return decoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& encoder() { return encoder_; }
  const Prior& prior() const { return *prior_; }
  Prior& prior() { return *prior_; }
  const ResponseNoise& noise() const { return noise_; }
  ResponseNoise& noise() { return noise_; }
  const MeasurementError& merr() const { return merr_; }
  bool residual_link() const { return residual_link_; }
  double var_floor() const { return var_floor_; }

  double response_var(double se2_row) const;

  // log p(w, y, x) = log p_X(x) + log p_U(w - x) + log p_eps(y - f(x)).
  // Per-row variances are passed when the dataset carries them (< 0 = absent).
  JointParts joint_log_density(const VectorXd& w, double y, const VectorXd& x,
                               double su2_row = -1.0,
                               double se2_row = -1.0) const;

  // Proposal N(mu, diag(var)) from the encoder; var = softplus(raw) + floor.
  void proposal_params(const VectorXd& w, double y, GradTape& enc_tape,
                       VectorXd& mu, VectorXd& var) const;

  static VectorXd proposal_sample(const VectorXd& mu, const VectorXd& var,
                                  const VectorXd& z);

  static double log_q(const VectorXd& x, const VectorXd& mu,
                      const VectorXd& var);

  double log_weight(const VectorXd& w, double y, const VectorXd& x,
                    const VectorXd& mu, const VectorXd& var,
                    double su2_row = -1.0, double se2_row = -1.0) const;

  // Prediction of the regression function on the standardized scale.
  double f_std(const VectorXd& x_std) const;

  std::size_t theta_count() const { return decoder_.param_count(); }
  std::size_t gamma_count() const { return prior_->param_count(); }
  std::size_t phi_count() const { return encoder_.param_count(); }

  std::uint64_t snapshot_version() const {
    return decoder_.version() + encoder_.version() + prior_version_;
  }
  void bump_prior_version() { ++prior_version_; }

  void write(std::ostream& os) const;
  static MemModel read(std::istream& is);

 private:
  Mlp decoder_;
  std::unique_ptr<Prior> prior_;
  Mlp encoder_;
  ResponseNoise noise_;
  MeasurementError merr_;
  bool residual_link_ = false;
  double var_floor_ = 1e-6;
  std::uint64_t prior_version_ = 0;
};

}  // namespace nnme
