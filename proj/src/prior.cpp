#include "nnme/prior.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "nnme/serialize.hpp"

namespace nnme {

namespace {

VectorXd softmax_vec(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  VectorXd w = (logits.array() - m).exp();
  w /= w.sum();
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianMixturePrior
// ---------------------------------------------------------------------------

GaussianMixturePrior::GaussianMixturePrior(VectorXd weight_logits,
                                           MatrixXd means, MatrixXd log_vars)
    : logits_(std::move(weight_logits)),
      means_(std::move(means)),
      log_vars_(std::move(log_vars)) {
  check_shape(means_.rows() == logits_.size() &&
                  means_.rows() == log_vars_.rows() &&
                  means_.cols() == log_vars_.cols() && means_.rows() >= 1,
              "gaussian mixture: inconsistent shapes");
}

GaussianMixturePrior GaussianMixturePrior::from_data_quantiles(
    const MatrixXd& data, int components, Rng& rng) {
  check_shape(components >= 1 && data.rows() >= components,
              "gaussian mixture init: need at least one row per component");
  const int d = static_cast<int>(data.cols());
  MatrixXd means(components, d);
  for (int j = 0; j < d; ++j) {
    std::vector<double> col(data.rows());
    for (Eigen::Index i = 0; i < data.rows(); ++i) col[i] = data(i, j);
    std::sort(col.begin(), col.end());
    for (int c = 0; c < components; ++c) {
      const double q = (c + 1.0) / (components + 1.0);
      const double idx = q * (col.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(idx);
      const double frac = idx - lo;
      double m = col[lo] * (1.0 - frac) +
                 col[std::min(lo + 1, col.size() - 1)] * frac;
      means(c, j) = m + 0.01 * rng.normal();
    }
  }
  MatrixXd log_vars(components, d);
  for (int j = 0; j < d; ++j) {
    const double mean = data.col(j).mean();
    const double var =
        (data.col(j).array() - mean).square().sum() / data.rows();
    log_vars.col(j).setConstant(std::log(std::max(var, 1e-4)));
  }
  return GaussianMixturePrior(VectorXd::Zero(components), std::move(means),
                              std::move(log_vars));
}

double GaussianMixturePrior::log_density(const VectorXd& x) const {
  return log_density_grad(x, nullptr, nullptr);
}

double GaussianMixturePrior::log_density_grad(const VectorXd& x,
                                              VectorXd* x_grad,
                                              VectorXd* param_grad) const {
  check_shape(x.size() == dim(), "gaussian mixture: dimension mismatch");
  const int C = components();
  const int d = dim();
  const VectorXd w = softmax_vec(logits_);
  thread_local std::vector<double> comp_log;
  comp_log.resize(C);
  for (int c = 0; c < C; ++c) {
    double l = std::log(w[c]);
    for (int j = 0; j < d; ++j)
      l += log_normal_pdf(x[j], means_(c, j), std::exp(log_vars_(c, j)));
    comp_log[c] = l;
  }
  const double total = log_sum_exp(comp_log);
  if (!x_grad && !param_grad) return total;

  thread_local std::vector<double> resp;
  resp.resize(C);
  softmax_from_logs(comp_log, resp);

  if (x_grad) {
    x_grad->setZero(d);
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j)
        (*x_grad)[j] -=
            resp[c] * (x[j] - means_(c, j)) / std::exp(log_vars_(c, j));
  }
  if (param_grad) {
    param_grad->resize(static_cast<Eigen::Index>(param_count()));
    Eigen::Index k = 0;
    for (int c = 0; c < C; ++c) (*param_grad)[k++] = resp[c] - w[c];
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j) {
        const double v = std::exp(log_vars_(c, j));
        (*param_grad)[k++] = resp[c] * (x[j] - means_(c, j)) / v;
      }
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j) {
        const double v = std::exp(log_vars_(c, j));
        const double r = x[j] - means_(c, j);
        // d/d(log v) = v * d/dv
        (*param_grad)[k++] = resp[c] * (-0.5 + 0.5 * r * r / v);
      }
  }
  return total;
}

std::size_t GaussianMixturePrior::param_count() const {
  return static_cast<std::size_t>(components()) * (1 + 2 * dim());
}

VectorXd GaussianMixturePrior::params_flat() const {
  VectorXd p(static_cast<Eigen::Index>(param_count()));
  Eigen::Index k = 0;
  for (int c = 0; c < components(); ++c) p[k++] = logits_[c];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) p[k++] = means_(c, j);
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) p[k++] = log_vars_(c, j);
  return p;
}

void GaussianMixturePrior::set_params_flat(const VectorXd& p) {
  check_shape(static_cast<std::size_t>(p.size()) == param_count(),
              "gaussian mixture set_params: size mismatch");
  Eigen::Index k = 0;
  for (int c = 0; c < components(); ++c) logits_[c] = p[k++];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) means_(c, j) = p[k++];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) log_vars_(c, j) = p[k++];
}

VectorXd GaussianMixturePrior::weights() const { return softmax_vec(logits_); }

MatrixXd GaussianMixturePrior::variances() const {
  return log_vars_.array().exp();
}

VectorXd GaussianMixturePrior::sample(Rng& rng) const {
  const VectorXd w = weights();
  const std::size_t c =
      rng.categorical(std::span<const double>(w.data(), w.size()));
  VectorXd x(dim());
  for (int j = 0; j < dim(); ++j)
    x[j] = rng.normal(means_(c, j), std::exp(0.5 * log_vars_(c, j)));
  return x;
}

std::unique_ptr<Prior> GaussianMixturePrior::clone() const {
  return std::make_unique<GaussianMixturePrior>(*this);
}

void GaussianMixturePrior::write(std::ostream& os) const {
  os << "prior gaussian_mixture\n";
  write_vector(os, logits_);
  write_matrix(os, means_);
  write_matrix(os, log_vars_);
}

// ---------------------------------------------------------------------------
// ScaledTPrior
// ---------------------------------------------------------------------------

ScaledTPrior::ScaledTPrior(int dim, double scale, double nu)
    : dim_(dim), scale_(scale), nu_(nu) {
  check_shape(dim_ >= 1 && scale_ > 0.0 && nu_ > 0.0,
              "scaled t prior: bad parameters");
  log_norm_ = std::lgamma(0.5 * (nu_ + 1.0)) - std::lgamma(0.5 * nu_) -
              0.5 * std::log(nu_ * M_PI);
}

double ScaledTPrior::log_density(const VectorXd& x) const {
  return log_density_grad(x, nullptr, nullptr);
}

double ScaledTPrior::log_density_grad(const VectorXd& x, VectorXd* x_grad,
                                      VectorXd* param_grad) const {
  check_shape(x.size() == dim_, "scaled t prior: dimension mismatch");
  double total = 0.0;
  if (x_grad) x_grad->resize(dim_);
  for (int j = 0; j < dim_; ++j) {
    const double u = x[j] / scale_;
    total += log_norm_ - 0.5 * (nu_ + 1.0) * std::log1p(u * u / nu_) -
             std::log(scale_);
    if (x_grad)
      (*x_grad)[j] = -(nu_ + 1.0) * x[j] / (scale_ * scale_ * nu_ + x[j] * x[j]);
  }
  if (param_grad) param_grad->resize(0);
  return total;
}

VectorXd ScaledTPrior::sample(Rng& rng) const {
  VectorXd x(dim_);
  for (int j = 0; j < dim_; ++j) x[j] = scale_ * rng.student_t(nu_);
  return x;
}

std::unique_ptr<Prior> ScaledTPrior::clone() const {
  return std::make_unique<ScaledTPrior>(*this);
}

void ScaledTPrior::write(std::ostream& os) const {
  os << "prior scaled_t\n"
     << dim_ << ' ' << format_double(scale_) << ' ' << format_double(nu_)
     << '\n';
}

// ---------------------------------------------------------------------------
// GammaMixturePrior
// ---------------------------------------------------------------------------

GammaMixturePrior::GammaMixturePrior(VectorXd weight_logits,
                                     MatrixXd log_shapes, MatrixXd log_rates)
    : logits_(std::move(weight_logits)),
      log_shapes_(std::move(log_shapes)),
      log_rates_(std::move(log_rates)) {
  check_shape(log_shapes_.rows() == logits_.size() &&
                  log_shapes_.rows() == log_rates_.rows() &&
                  log_shapes_.cols() == log_rates_.cols(),
              "gamma mixture: inconsistent shapes");
}

GammaMixturePrior GammaMixturePrior::from_data(const MatrixXd& data,
                                               int components, Rng& rng) {
  const int d = static_cast<int>(data.cols());
  MatrixXd log_shapes(components, d), log_rates(components, d);
  for (int j = 0; j < d; ++j) {
    const double mean = std::max(data.col(j).mean(), 1e-6);
    const double var = std::max(
        (data.col(j).array() - mean).square().sum() / data.rows(), 1e-8);
    for (int c = 0; c < components; ++c) {
      // method of moments, jittered per component
      const double m = mean * (1.0 + 0.2 * rng.normal());
      const double shape = std::max(m * m / var, 0.1);
      const double rate = std::max(m / var, 0.1);
      log_shapes(c, j) = std::log(shape);
      log_rates(c, j) = std::log(rate);
    }
  }
  return GammaMixturePrior(VectorXd::Zero(components), std::move(log_shapes),
                           std::move(log_rates));
}

double GammaMixturePrior::log_density(const VectorXd& x) const {
  return log_density_grad(x, nullptr, nullptr);
}

double GammaMixturePrior::log_density_grad(const VectorXd& x, VectorXd* x_grad,
                                           VectorXd* param_grad) const {
  check_shape(x.size() == dim(), "gamma mixture: dimension mismatch");
  const int C = components();
  const int d = dim();
  for (int j = 0; j < d; ++j) {
    if (!(x[j] > 0.0)) {
      if (x_grad) x_grad->setZero(d);
      if (param_grad) param_grad->setZero(static_cast<Eigen::Index>(param_count()));
      return kNegInf;
    }
  }
  const VectorXd w = softmax_vec(logits_);
  std::vector<double> comp_log(C);
  for (int c = 0; c < C; ++c) {
    double l = std::log(w[c]);
    for (int j = 0; j < d; ++j) {
      const double a = std::exp(log_shapes_(c, j));
      const double r = std::exp(log_rates_(c, j));
      l += a * std::log(r) - std::lgamma(a) + (a - 1.0) * std::log(x[j]) -
           r * x[j];
    }
    comp_log[c] = l;
  }
  const double total = log_sum_exp(comp_log);
  if (!x_grad && !param_grad) return total;

  std::vector<double> resp(C);
  softmax_from_logs(comp_log, resp);

  if (x_grad) {
    x_grad->setZero(d);
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j) {
        const double a = std::exp(log_shapes_(c, j));
        const double r = std::exp(log_rates_(c, j));
        (*x_grad)[j] += resp[c] * ((a - 1.0) / x[j] - r);
      }
  }
  if (param_grad) {
    param_grad->resize(static_cast<Eigen::Index>(param_count()));
    Eigen::Index k = 0;
    for (int c = 0; c < C; ++c) (*param_grad)[k++] = resp[c] - w[c];
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j) {
        const double a = std::exp(log_shapes_(c, j));
        const double r = std::exp(log_rates_(c, j));
        (*param_grad)[k++] =
            resp[c] * a * (std::log(r) - digamma(a) + std::log(x[j]));
      }
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < d; ++j) {
        const double a = std::exp(log_shapes_(c, j));
        const double r = std::exp(log_rates_(c, j));
        (*param_grad)[k++] = resp[c] * (a - r * x[j]);
      }
  }
  return total;
}

std::size_t GammaMixturePrior::param_count() const {
  return static_cast<std::size_t>(components()) * (1 + 2 * dim());
}

VectorXd GammaMixturePrior::params_flat() const {
  VectorXd p(static_cast<Eigen::Index>(param_count()));
  Eigen::Index k = 0;
  for (int c = 0; c < components(); ++c) p[k++] = logits_[c];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) p[k++] = log_shapes_(c, j);
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) p[k++] = log_rates_(c, j);
  return p;
}

void GammaMixturePrior::set_params_flat(const VectorXd& p) {
  check_shape(static_cast<std::size_t>(p.size()) == param_count(),
              "gamma mixture set_params: size mismatch");
  Eigen::Index k = 0;
  for (int c = 0; c < components(); ++c) logits_[c] = p[k++];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) log_shapes_(c, j) = p[k++];
  for (int c = 0; c < components(); ++c)
    for (int j = 0; j < dim(); ++j) log_rates_(c, j) = p[k++];
}

VectorXd GammaMixturePrior::weights() const { return softmax_vec(logits_); }
MatrixXd GammaMixturePrior::shapes() const { return log_shapes_.array().exp(); }
MatrixXd GammaMixturePrior::rates() const { return log_rates_.array().exp(); }

VectorXd GammaMixturePrior::sample(Rng& rng) const {
  const VectorXd w = weights();
  const std::size_t c =
      rng.categorical(std::span<const double>(w.data(), w.size()));
  VectorXd x(dim());
  for (int j = 0; j < dim(); ++j)
    x[j] = rng.gamma(std::exp(log_shapes_(c, j)),
                     1.0 / std::exp(log_rates_(c, j)));
  return x;
}

std::unique_ptr<Prior> GammaMixturePrior::clone() const {
  return std::make_unique<GammaMixturePrior>(*this);
}

void GammaMixturePrior::write(std::ostream& os) const {
  os << "prior gamma_mixture\n";
  write_vector(os, logits_);
  write_matrix(os, log_shapes_);
  write_matrix(os, log_rates_);
}

// ---------------------------------------------------------------------------
// NicePrior
// ---------------------------------------------------------------------------

NicePrior::NicePrior(NiceFlow flow) : flow_(std::move(flow)) {}

double NicePrior::log_density(const VectorXd& x) const {
  thread_local FlowTape tape;
  return flow_.log_density(x, tape);
}

double NicePrior::log_density_grad(const VectorXd& x, VectorXd* x_grad,
                                   VectorXd* param_grad) const {
  thread_local FlowTape tape;
  const double value = flow_.log_density(x, tape);
  if (x_grad || param_grad) {
    thread_local FlowGrads grads;
    FlowGrads* gp = nullptr;
    if (param_grad) {
      if (grads.layers.size() != static_cast<std::size_t>(flow_.n_couplings()))
        grads = flow_.make_grads();
      grads.set_zero();
      gp = &grads;
    }
    flow_.backward(tape, 1.0, gp, x_grad);
    if (param_grad) {
      param_grad->resize(static_cast<Eigen::Index>(grads.flat_size()));
      grads.flatten_into(param_grad->data());
    }
  }
  return value;
}

std::unique_ptr<Prior> NicePrior::clone() const {
  return std::make_unique<NicePrior>(*this);
}

void NicePrior::write(std::ostream& os) const {
  os << "prior nice_flow\n";
  flow_.write(os);
}

// ---------------------------------------------------------------------------
// FixedKnownPrior
// ---------------------------------------------------------------------------

FixedKnownPrior::FixedKnownPrior(int dim, LogPdf log_pdf, GradFn x_grad,
                                 Sampler sampler)
    : dim_(dim),
      log_pdf_(std::move(log_pdf)),
      x_grad_(std::move(x_grad)),
      sampler_(std::move(sampler)) {
  check_shape(dim_ >= 1 && static_cast<bool>(log_pdf_),
              "fixed known prior: need dim and log pdf");
}

double FixedKnownPrior::log_density_grad(const VectorXd& x, VectorXd* x_grad,
                                         VectorXd* param_grad) const {
  const double value = log_pdf_(x);
  if (x_grad) {
    if (x_grad_) {
      *x_grad = x_grad_(x);
    } else {
      const double h = 1e-6;
      x_grad->resize(dim_);
      VectorXd xp = x;
      for (int j = 0; j < dim_; ++j) {
        xp[j] = x[j] + h;
        const double up = log_pdf_(xp);
        xp[j] = x[j] - h;
        const double dn = log_pdf_(xp);
        xp[j] = x[j];
        (*x_grad)[j] = (up - dn) / (2.0 * h);
      }
    }
  }
  if (param_grad) param_grad->resize(0);
  return value;
}

VectorXd FixedKnownPrior::sample(Rng& rng) const {
  if (!sampler_)
    throw ConfigError("fixed known prior: sampling not supported for this density");
  return sampler_(rng);
}

std::unique_ptr<Prior> FixedKnownPrior::clone() const {
  return std::make_unique<FixedKnownPrior>(*this);
}

void FixedKnownPrior::write(std::ostream&) const {
  throw IoError("fixed known prior is not serializable");
}

// ---------------------------------------------------------------------------
// AffineTransformedPrior
// ---------------------------------------------------------------------------

AffineTransformedPrior::AffineTransformedPrior(std::unique_ptr<Prior> inner,
                                               VectorXd offset, VectorXd scale)
    : inner_(std::move(inner)),
      offset_(std::move(offset)),
      scale_(std::move(scale)) {
  check_shape(offset_.size() == inner_->dim() && scale_.size() == inner_->dim(),
              "affine prior: offset/scale dimension mismatch");
  check_shape((scale_.array() > 0).all(), "affine prior: scale must be positive");
  log_det_ = scale_.array().log().sum();
}

double AffineTransformedPrior::log_density(const VectorXd& x) const {
  const VectorXd raw = offset_ + (scale_.array() * x.array()).matrix();
  return inner_->log_density(raw) + log_det_;
}

double AffineTransformedPrior::log_density_grad(const VectorXd& x,
                                                VectorXd* x_grad,
                                                VectorXd* param_grad) const {
  const VectorXd raw = offset_ + (scale_.array() * x.array()).matrix();
  const double value =
      inner_->log_density_grad(raw, x_grad, param_grad) + log_det_;
  if (x_grad) x_grad->array() *= scale_.array();
  return value;
}

VectorXd AffineTransformedPrior::sample(Rng& rng) const {
  const VectorXd raw = inner_->sample(rng);
  return ((raw - offset_).array() / scale_.array()).matrix();
}

std::unique_ptr<Prior> AffineTransformedPrior::clone() const {
  return std::make_unique<AffineTransformedPrior>(inner_->clone(), offset_,
                                                  scale_);
}

void AffineTransformedPrior::write(std::ostream& os) const {
  os << "prior affine\n";
  write_vector(os, offset_);
  write_vector(os, scale_);
  inner_->write(os);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Prior> read_prior(std::istream& is) {
  expect_token(is, "prior");
  std::string kind;
  is >> kind;
  if (kind == "gaussian_mixture") {
    VectorXd logits;
    MatrixXd means, log_vars;
    read_vector(is, logits);
    read_matrix(is, means);
    read_matrix(is, log_vars);
    return std::make_unique<GaussianMixturePrior>(
        std::move(logits), std::move(means), std::move(log_vars));
  }
  if (kind == "scaled_t") {
    int dim = 0;
    double scale = 0, nu = 0;
    is >> dim >> scale >> nu;
    if (!is) throw IoError("scaled_t read: truncated");
    return std::make_unique<ScaledTPrior>(dim, scale, nu);
  }
  if (kind == "gamma_mixture") {
    VectorXd logits;
    MatrixXd log_shapes, log_rates;
    read_vector(is, logits);
    read_matrix(is, log_shapes);
    read_matrix(is, log_rates);
    return std::make_unique<GammaMixturePrior>(
        std::move(logits), std::move(log_shapes), std::move(log_rates));
  }
  if (kind == "nice_flow")
    return std::make_unique<NicePrior>(NiceFlow::read(is));
  if (kind == "affine") {
    VectorXd offset, scale;
    read_vector(is, offset);
    read_vector(is, scale);
    return std::make_unique<AffineTransformedPrior>(read_prior(is),
                                                    std::move(offset),
                                                    std::move(scale));
  }
  throw IoError("unknown prior kind: " + kind);
}

}  // namespace nnme
