#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>

#include "nnme/flow.hpp"

namespace nnme {

// Prior family for X. Learnable parameters are exposed as one flat vector on
// an unconstrained scale (mixture weights through softmax logits, variances
// and gamma shapes/rates through logs), so optimizers never see constraints.
class Prior {
 public:
  virtual ~Prior() = default;

  virtual std::string kind() const = 0;
  virtual int dim() const = 0;

  virtual double log_density(const VectorXd& x) const = 0;

  // Returns log density; fills d(logp)/dx when x_grad != nullptr and
  // d(logp)/dparams (unconstrained scale) when param_grad != nullptr.
  // param_grad is resized to param_count(); empty for frozen variants.
  virtual double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                                  VectorXd* param_grad) const = 0;

  virtual std::size_t param_count() const { return 0; }
  virtual VectorXd params_flat() const { return VectorXd(0); }
  virtual void set_params_flat(const VectorXd& p) {
    check_shape(p.size() == 0, "prior has no learnable parameters");
  }

  virtual VectorXd sample(Rng& rng) const = 0;
  virtual std::unique_ptr<Prior> clone() const = 0;

  virtual void write(std::ostream& os) const = 0;
};

std::unique_ptr<Prior> read_prior(std::istream& is);

// ----- Gaussian mixture with diagonal covariances ---------------------------

class GaussianMixturePrior : public Prior {
 public:
  GaussianMixturePrior(VectorXd weight_logits, MatrixXd means,
                       MatrixXd log_vars);

  // Component means spread over data quantiles, unit variances, flat weights.
  static GaussianMixturePrior from_data_quantiles(const MatrixXd& data,
                                                  int components, Rng& rng);

  std::string kind() const override { return "gaussian_mixture"; }
  int dim() const override { return static_cast<int>(means_.cols()); }
  int components() const { return static_cast<int>(means_.rows()); }

  double log_density(const VectorXd& x) const override;
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  std::size_t param_count() const override;
  VectorXd params_flat() const override;
  void set_params_flat(const VectorXd& p) override;

  VectorXd weights() const;
  const MatrixXd& means() const { return means_; }
  MatrixXd variances() const;

  VectorXd sample(Rng& rng) const override;
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  VectorXd logits_;   // C
  MatrixXd means_;    // C x d
  MatrixXd log_vars_; // C x d
};

// ----- Scaled multivariate t (independent coordinates, frozen) --------------

// Each coordinate distributed as scale * t_nu; the "2 * t_3" prior.
class ScaledTPrior : public Prior {
 public:
  ScaledTPrior(int dim, double scale = 2.0, double nu = 3.0);

  std::string kind() const override { return "scaled_t"; }
  int dim() const override { return dim_; }
  double scale() const { return scale_; }
  double nu() const { return nu_; }

  double log_density(const VectorXd& x) const override;
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  VectorXd sample(Rng& rng) const override;
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  int dim_;
  double scale_, nu_, log_norm_;  // log_norm_: per-coordinate t normalizer
};

// ----- Gamma mixture (independent coordinates per component) ----------------

class GammaMixturePrior : public Prior {
 public:
  GammaMixturePrior(VectorXd weight_logits, MatrixXd log_shapes,
                    MatrixXd log_rates);

  static GammaMixturePrior from_data(const MatrixXd& data, int components,
                                     Rng& rng);

  std::string kind() const override { return "gamma_mixture"; }
  int dim() const override { return static_cast<int>(log_shapes_.cols()); }
  int components() const { return static_cast<int>(log_shapes_.rows()); }

  double log_density(const VectorXd& x) const override;  // -inf off support
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  std::size_t param_count() const override;
  VectorXd params_flat() const override;
  void set_params_flat(const VectorXd& p) override;

  VectorXd weights() const;
  MatrixXd shapes() const;
  MatrixXd rates() const;

  VectorXd sample(Rng& rng) const override;
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  VectorXd logits_;
  MatrixXd log_shapes_;  // C x d
  MatrixXd log_rates_;   // C x d
};

// ----- NICE flow prior -------------------------------------------------------

class NicePrior : public Prior {
 public:
  explicit NicePrior(NiceFlow flow);

  std::string kind() const override { return "nice_flow"; }
  int dim() const override { return flow_.dim(); }
  const NiceFlow& flow() const { return flow_; }

  double log_density(const VectorXd& x) const override;
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  std::size_t param_count() const override { return flow_.param_count(); }
  VectorXd params_flat() const override { return flow_.params_flat(); }
  void set_params_flat(const VectorXd& p) override { flow_.set_params_flat(p); }

  VectorXd sample(Rng& rng) const override { return flow_.sample(rng); }
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  NiceFlow flow_;
};

// ----- Fixed known density (oracle experiments) ------------------------------

class FixedKnownPrior : public Prior {
 public:
  using LogPdf = std::function<double(const VectorXd&)>;
  using GradFn = std::function<VectorXd(const VectorXd&)>;
  using Sampler = std::function<VectorXd(Rng&)>;

  // x-gradient defaults to central finite differences of log_pdf.
  FixedKnownPrior(int dim, LogPdf log_pdf, GradFn x_grad = nullptr,
                  Sampler sampler = nullptr);

  std::string kind() const override { return "fixed_known"; }
  int dim() const override { return dim_; }

  double log_density(const VectorXd& x) const override { return log_pdf_(x); }
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  VectorXd sample(Rng& rng) const override;  // throws if no sampler
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  int dim_;
  LogPdf log_pdf_;
  GradFn x_grad_;
  Sampler sampler_;
};

// ----- Affine change of variables --------------------------------------------

// Density of the standardized variable when `inner` models the raw variable
// x_raw = offset + scale .* x: log p(x) = log p_inner(x_raw) + sum(log scale).
// Used to keep e.g. a gamma prior on raw (positive) coordinates while the
// networks operate on standardized data.
class AffineTransformedPrior : public Prior {
 public:
  AffineTransformedPrior(std::unique_ptr<Prior> inner, VectorXd offset,
                         VectorXd scale);

  std::string kind() const override { return "affine:" + inner_->kind(); }
  int dim() const override { return inner_->dim(); }
  const Prior& inner() const { return *inner_; }

  double log_density(const VectorXd& x) const override;
  double log_density_grad(const VectorXd& x, VectorXd* x_grad,
                          VectorXd* param_grad) const override;

  std::size_t param_count() const override { return inner_->param_count(); }
  VectorXd params_flat() const override { return inner_->params_flat(); }
  void set_params_flat(const VectorXd& p) override {
    inner_->set_params_flat(p);
  }

  VectorXd sample(Rng& rng) const override;
  std::unique_ptr<Prior> clone() const override;
  void write(std::ostream& os) const override;

 private:
  std::unique_ptr<Prior> inner_;
  VectorXd offset_, scale_;
  double log_det_;
};

}  // namespace nnme
