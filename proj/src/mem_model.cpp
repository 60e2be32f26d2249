#include "nnme/mem_model.hpp"

#include <fstream>
#include <sstream>

#include "nnme/serialize.hpp"

namespace nnme {

VectorXd Standardization::to_std_x(const VectorXd& x_orig) const {
  return ((x_orig - w_mean).array() / w_scale.array()).matrix();
}

VectorXd Standardization::to_orig_x(const VectorXd& x_std) const {
  return w_mean + (w_scale.array() * x_std.array()).matrix();
}

void Standardization::write(std::ostream& os) const {
  os << "standardization 1\n";
  write_vector(os, w_mean);
  write_vector(os, w_scale);
  os << format_double(y_mean) << ' ' << format_double(y_scale) << '\n';
}

Standardization Standardization::read(std::istream& is) {
  expect_token(is, "standardization");
  expect_token(is, "1");
  Standardization s;
  read_vector(is, s.w_mean);
  read_vector(is, s.w_scale);
  is >> s.y_mean >> s.y_scale;
  if (!is) throw IoError("standardization read: truncated");
  return s;
}

void Dataset::validate() const {
  check_shape(w.rows() == y.size(), "dataset: w/y row mismatch");
  if (!w.allFinite() || !y.allFinite())
    throw NumericError("dataset: non-finite entries");
  if (su2.size() > 0) {
    check_shape(su2.size() == y.size(), "dataset: su2 length mismatch");
    if (!(su2.array() >= 0).all() || !su2.allFinite())
      throw NumericError("dataset: su2 must be finite and >= 0");
  }
  if (se2.size() > 0) {
    check_shape(se2.size() == y.size(), "dataset: se2 length mismatch");
    if (!(se2.array() >= 0).all() || !se2.allFinite())
      throw NumericError("dataset: se2 must be finite and >= 0");
  }
}

Dataset Dataset::rows(const std::vector<int>& idx) const {
  Dataset out;
  out.w.resize(static_cast<Eigen::Index>(idx.size()), w.cols());
  out.y.resize(static_cast<Eigen::Index>(idx.size()));
  if (su2.size() > 0) out.su2.resize(static_cast<Eigen::Index>(idx.size()));
  if (se2.size() > 0) out.se2.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.w.row(static_cast<Eigen::Index>(i)) = w.row(idx[i]);
    out.y[static_cast<Eigen::Index>(i)] = y[idx[i]];
    if (su2.size() > 0) out.su2[static_cast<Eigen::Index>(i)] = su2[idx[i]];
    if (se2.size() > 0) out.se2[static_cast<Eigen::Index>(i)] = se2[idx[i]];
  }
  return out;
}

Dataset Dataset::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::string header;
  if (!std::getline(is, header)) throw IoError("empty dataset: " + path);
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  int d = 0;
  while (d < static_cast<int>(cols.size()) &&
         cols[d] == "w" + std::to_string(d + 1))
    ++d;
  if (d == 0 || d >= static_cast<int>(cols.size()) || cols[d] != "y")
    throw IoError("dataset header must be w1..wd,y[,su2,se2]: " + path);
  const bool has_su2 = cols.size() > static_cast<std::size_t>(d + 1) &&
                       cols[d + 1] == "su2";
  const bool has_se2 = cols.size() > static_cast<std::size_t>(d + 2) &&
                       cols[d + 2] == "se2";
  if (has_su2 != has_se2)
    throw IoError("dataset: su2 and se2 must appear together: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  const std::size_t ncols = cols.size();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(ncols);
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    if (row.size() != ncols) throw IoError("dataset: ragged row in " + path);
    rows.push_back(std::move(row));
  }
  Dataset ds;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  ds.w.resize(n, d);
  ds.y.resize(n);
  if (has_su2) {
    ds.su2.resize(n);
    ds.se2.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.w(i, j) = rows[i][j];
    ds.y[i] = rows[i][d];
    if (has_su2) {
      ds.su2[i] = rows[i][d + 1];
      ds.se2[i] = rows[i][d + 2];
    }
  }
  ds.validate();
  return ds;
}

void Dataset::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write dataset: " + path);
  for (int j = 0; j < d(); ++j) os << 'w' << (j + 1) << ',';
  os << 'y';
  if (heteroscedastic()) os << ",su2,se2";
  os << '\n';
  for (int i = 0; i < n(); ++i) {
    for (int j = 0; j < d(); ++j) os << format_double(w(i, j)) << ',';
    os << format_double(y[i]);
    if (heteroscedastic())
      os << ',' << format_double(su2.size() ? su2[i] : 0.0) << ','
         << format_double(se2.size() ? se2[i] : 0.0);
    os << '\n';
  }
  if (!os) throw IoError("failed writing dataset: " + path);
}

Standardization Dataset::compute_standardization() const {
  Standardization s;
  const Eigen::Index nn = w.rows();
  s.w_mean = w.colwise().mean();
  s.w_scale.resize(w.cols());
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double var =
        (w.col(j).array() - s.w_mean[j]).square().sum() / nn;
    s.w_scale[j] = std::max(std::sqrt(var), 1e-12);
  }
  s.y_mean = y.mean();
  const double yvar = (y.array() - s.y_mean).square().sum() / nn;
  s.y_scale = std::max(std::sqrt(yvar), 1e-12);
  return s;
}

Dataset Dataset::standardized(const Standardization& s) const {
  Dataset out;
  out.w.resize(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    out.w.row(i) =
        ((w.row(i).transpose() - s.w_mean).array() / s.w_scale.array())
            .matrix()
            .transpose();
  out.y = (y.array() - s.y_mean) / s.y_scale;
  // Known per-row variances transform with the squared scales. su2 stays a
  // scalar per row; the per-coordinate factor lives in MeasurementError.
  out.su2 = su2;
  out.se2 = se2.size() ? (se2 / (s.y_scale * s.y_scale)).eval() : se2;
  return out;
}

MeasurementError MeasurementError::iso(int d, double sigma0_sq) {
  MeasurementError m;
  m.kind = Kind::Diagonal;
  m.var_diag = VectorXd::Constant(d, sigma0_sq);
  return m;
}

MeasurementError MeasurementError::diagonal(VectorXd var_diag) {
  MeasurementError m;
  m.kind = Kind::Diagonal;
  m.var_diag = std::move(var_diag);
  return m;
}

MeasurementError MeasurementError::per_row(VectorXd row_scale) {
  MeasurementError m;
  m.kind = Kind::PerRow;
  m.row_scale = std::move(row_scale);
  return m;
}

double MeasurementError::log_pdf(const VectorXd& u, double su2_row) const {
  switch (kind) {
    case Kind::Custom:
      return custom_logpdf(u);
    case Kind::Diagonal: {
      double l = 0.0;
      for (Eigen::Index j = 0; j < u.size(); ++j)
        l += log_normal_pdf(u[j], 0.0, var_diag[j]);
      return l;
    }
    case Kind::PerRow: {
      check_shape(su2_row >= 0, "per-row measurement error needs su2");
      double l = 0.0;
      for (Eigen::Index j = 0; j < u.size(); ++j)
        l += log_normal_pdf(u[j], 0.0, su2_row * row_scale[j]);
      return l;
    }
  }
  return 0.0;
}

VectorXd MeasurementError::x_grad(const VectorXd& u, double su2_row) const {
  // d/dx log p_U(w - x) = +u / var  (u = w - x)
  switch (kind) {
    case Kind::Custom: {
      // d/dx = -d/du
      return -custom_grad_u(u);
    }
    case Kind::Diagonal:
      return (u.array() / var_diag.array()).matrix();
    case Kind::PerRow:
      return (u.array() / (su2_row * row_scale.array())).matrix();
  }
  return VectorXd::Zero(u.size());
}

MemModel::MemModel(Mlp decoder, std::unique_ptr<Prior> prior, Mlp encoder,
                   ResponseNoise noise, MeasurementError merr,
                   bool residual_link, double var_floor)
    : decoder_(std::move(decoder)),
      prior_(std::move(prior)),
      encoder_(std::move(encoder)),
      noise_(noise),
      merr_(std::move(merr)),
      residual_link_(residual_link),
      var_floor_(var_floor) {
  const int d = decoder_.input_dim();
  check_shape(decoder_.output_dim() == 1, "mem model: decoder must output 1");
  check_shape(prior_->dim() == d, "mem model: prior dimension mismatch");
  check_shape(encoder_.input_dim() == d + 1,
              "mem model: encoder input must be d+1");
  check_shape(encoder_.output_dim() == 2 * d,
              "mem model: encoder output must be 2d");
  check_shape(noise_.sigma2 > 0 || noise_.hetero,
              "mem model: sigma2 must be positive");
  check_shape(noise_.tau2 >= 0, "mem model: tau2 must be >= 0");
}

MemModel::MemModel(const MemModel& other)
    : decoder_(other.decoder_),
      prior_(other.prior_->clone()),
      encoder_(other.encoder_),
      noise_(other.noise_),
      merr_(other.merr_),
      residual_link_(other.residual_link_),
      var_floor_(other.var_floor_),
      prior_version_(other.prior_version_) {}

MemModel& MemModel::operator=(const MemModel& other) {
  if (this != &other) {
    decoder_ = other.decoder_;
    prior_ = other.prior_->clone();
    encoder_ = other.encoder_;
    noise_ = other.noise_;
    merr_ = other.merr_;
    residual_link_ = other.residual_link_;
    var_floor_ = other.var_floor_;
    prior_version_ = other.prior_version_;
  }
  return *this;
}

double MemModel::response_var(double se2_row) const {
  if (noise_.hetero) {
    check_shape(se2_row >= 0, "heteroscedastic model needs per-row se2");
    return noise_.tau2 + se2_row;
  }
  return noise_.sigma2;
}

JointParts MemModel::joint_log_density(const VectorXd& w, double y,
                                       const VectorXd& x, double su2_row,
                                       double se2_row) const {
  check_shape(w.size() == dim() && x.size() == dim(),
              "joint_log_density: dimension mismatch");
  JointParts parts;
  parts.prior = prior_->log_density(x);
  parts.u = merr_.log_pdf(w - x, su2_row);
  const double f = f_std(x);
  parts.eps = log_normal_pdf(y, f, response_var(se2_row));
  return parts;
}

void MemModel::proposal_params(const VectorXd& w, double y, GradTape& enc_tape,
                               VectorXd& mu, VectorXd& var) const {
  check_shape(w.size() == dim(), "proposal_params: dimension mismatch");
  const int d = dim();
  thread_local VectorXd input;
  input.resize(d + 1);
  input.head(d) = w;
  input[d] = y;
  encoder_.forward(input, enc_tape);
  const VectorXd& out = enc_tape.output();
  mu = out.head(d);
  if (residual_link_) mu += w;
  var.resize(d);
  for (int j = 0; j < d; ++j) var[j] = softplus(out[d + j]) + var_floor_;
}

VectorXd MemModel::proposal_sample(const VectorXd& mu, const VectorXd& var,
                                   const VectorXd& z) {
  check_shape(mu.size() == var.size() && mu.size() == z.size(),
              "proposal_sample: shape mismatch");
  return mu + (var.array().sqrt() * z.array()).matrix();
}

double MemModel::log_q(const VectorXd& x, const VectorXd& mu,
                       const VectorXd& var) {
  double l = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    l += log_normal_pdf(x[j], mu[j], var[j]);
  return l;
}

double MemModel::log_weight(const VectorXd& w, double y, const VectorXd& x,
                            const VectorXd& mu, const VectorXd& var,
                            double su2_row, double se2_row) const {
  return joint_log_density(w, y, x, su2_row, se2_row).total() -
         log_q(x, mu, var);
}

double MemModel::f_std(const VectorXd& x_std) const {
  thread_local GradTape tape;
  decoder_.forward(x_std, tape);
  return tape.output()[0];
}

void MemModel::write(std::ostream& os) const {
  os << "memmodel 1\n";
  decoder_.write(os);
  encoder_.write(os);
  prior_->write(os);
  os << "noise " << (noise_.hetero ? 1 : 0) << ' '
     << format_double(noise_.sigma2) << ' ' << format_double(noise_.tau2)
     << '\n';
  os << "merr ";
  switch (merr_.kind) {
    case MeasurementError::Kind::Diagonal:
      os << "diagonal\n";
      write_vector(os, merr_.var_diag);
      break;
    case MeasurementError::Kind::PerRow:
      os << "per_row\n";
      write_vector(os, merr_.row_scale);
      break;
    case MeasurementError::Kind::Custom:
      throw IoError("custom measurement error is not serializable");
  }
  os << "residual_link " << (residual_link_ ? 1 : 0) << '\n';
  os << "var_floor " << format_double(var_floor_) << '\n';
}

MemModel MemModel::read(std::istream& is) {
  expect_token(is, "memmodel");
  expect_token(is, "1");
  Mlp decoder = Mlp::read(is);
  Mlp encoder = Mlp::read(is);
  auto prior = read_prior(is);
  expect_token(is, "noise");
  int hetero = 0;
  ResponseNoise noise;
  is >> hetero >> noise.sigma2 >> noise.tau2;
  noise.hetero = hetero != 0;
  expect_token(is, "merr");
  std::string kind;
  is >> kind;
  MeasurementError merr;
  if (kind == "diagonal") {
    merr.kind = MeasurementError::Kind::Diagonal;
    read_vector(is, merr.var_diag);
  } else if (kind == "per_row") {
    merr.kind = MeasurementError::Kind::PerRow;
    read_vector(is, merr.row_scale);
  } else {
    throw IoError("unknown measurement error kind: " + kind);
  }
  expect_token(is, "residual_link");
  int link = 0;
  is >> link;
  expect_token(is, "var_floor");
  double floor = 1e-6;
  is >> floor;
  if (!is) throw IoError("memmodel read: truncated");
  return MemModel(std::move(decoder), std::move(prior), std::move(encoder),
                  noise, std::move(merr), link != 0, floor);
}

}  // namespace nnme
