#include "nnme/mlp.hpp"

#include <istream>
#include <ostream>

#include "nnme/serialize.hpp"

namespace nnme {

const char* act_name(Act a) {
  switch (a) {
    case Act::Relu: return "relu";
    case Act::Tanh: return "tanh";
    case Act::Sigmoid: return "sigmoid";
    case Act::Linear: return "linear";
    case Act::Softplus: return "softplus";
  }
  return "?";
}

Act act_from_name(const std::string& name) {
  if (name == "relu") return Act::Relu;
  if (name == "tanh") return Act::Tanh;
  if (name == "sigmoid") return Act::Sigmoid;
  if (name == "linear") return Act::Linear;
  if (name == "softplus") return Act::Softplus;
  throw ConfigError("unknown activation: " + name);
}

double activate(Act a, double z) {
  switch (a) {
    case Act::Relu: return z > 0.0 ? z : 0.0;
    case Act::Tanh: return std::tanh(z);
    case Act::Sigmoid: return sigmoid(z);
    case Act::Linear: return z;
    case Act::Softplus: return softplus(z);
  }
  return z;
}

double activate_deriv(Act a, double z, double x) {
  switch (a) {
    case Act::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Act::Tanh: return 1.0 - x * x;
    case Act::Sigmoid: return x * (1.0 - x);
    case Act::Linear: return 1.0;
    case Act::Softplus: return sigmoid(z);
  }
  return 1.0;
}

void MlpGrads::set_zero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (std::size_t l = 0; l < dW.size(); ++l) {
    dW[l] += scale * other.dW[l];
    db[l] += scale * other.db[l];
  }
}

std::size_t MlpGrads::flat_size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < dW.size(); ++l)
    n += static_cast<std::size_t>(dW[l].size()) + db[l].size();
  return n;
}

void MlpGrads::flatten_into(double* out) const {
  for (std::size_t l = 0; l < dW.size(); ++l) {
    const auto& w = dW[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) *out++ = w(r, c);
    for (Eigen::Index i = 0; i < db[l].size(); ++i) *out++ = db[l][i];
  }
}

Mlp::Mlp(std::vector<int> widths, std::vector<Act> acts)
    : widths_(std::move(widths)), acts_(std::move(acts)) {
  check_shape(widths_.size() >= 2, "mlp: need at least input and output widths");
  check_shape(acts_.size() == widths_.size() - 1,
              "mlp: one activation per layer required");
  for (int w : widths_) check_shape(w >= 1, "mlp: widths must be positive");
  W_.resize(acts_.size());
  b_.resize(acts_.size());
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    W_[l] = MatrixXd::Zero(widths_[l + 1], widths_[l]);
    b_[l] = VectorXd::Zero(widths_[l + 1]);
  }
}

Mlp Mlp::random(std::vector<int> widths, std::vector<Act> acts, Rng& rng) {
  Mlp net(std::move(widths), std::move(acts));
  for (std::size_t l = 0; l < net.acts_.size(); ++l) {
    const int fan_in = net.widths_[l];
    const int fan_out = net.widths_[l + 1];
    const double sd = net.acts_[l] == Act::Relu
                          ? std::sqrt(2.0 / fan_in)
                          : std::sqrt(2.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < net.W_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W_[l].cols(); ++c)
        net.W_[l](r, c) = rng.normal(0.0, sd);
  }
  ++net.version_;
  return net;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < acts_.size(); ++l)
    n += static_cast<std::size_t>(W_[l].size()) + b_[l].size();
  return n;
}

void Mlp::forward(const VectorXd& input, GradTape& tape) const {
  check_shape(input.size() == widths_.front(), "mlp forward: input size mismatch");
  const std::size_t L = acts_.size();
  tape.x.resize(L + 1);
  tape.z.resize(L + 1);
  tape.x[0] = input;
  for (std::size_t l = 0; l < L; ++l) {
    auto& z = tape.z[l + 1];
    z.resize(b_[l].size());
    z.noalias() = W_[l] * tape.x[l];
    z += b_[l];
    auto& x = tape.x[l + 1];
    x.resize(z.size());
    const Act a = acts_[l];
    if (a == Act::Linear) {
      x = z;
    } else {
      for (Eigen::Index i = 0; i < z.size(); ++i) x[i] = activate(a, z[i]);
    }
  }
  tape.version = version_;
}

VectorXd Mlp::forward(const VectorXd& input) const {
  GradTape tape;
  forward(input, tape);
  return tape.output();
}

void Mlp::backward(const GradTape& tape, const VectorXd& out_grad,
                   MlpGrads* grads, double param_scale,
                   VectorXd* input_grad) const {
  if (tape.version != version_)
    throw TapeError("mlp backward: tape is stale (net mutated since forward)");
  check_shape(out_grad.size() == widths_.back(),
              "mlp backward: out_grad size mismatch");
  const std::size_t L = acts_.size();

  thread_local VectorXd delta, delta_next;
  delta = out_grad;
  for (std::size_t l = L; l-- > 0;) {
    const Act a = acts_[l];
    if (a != Act::Linear) {
      const auto& z = tape.z[l + 1];
      const auto& x = tape.x[l + 1];
      for (Eigen::Index i = 0; i < delta.size(); ++i)
        delta[i] *= activate_deriv(a, z[i], x[i]);
    }
    if (grads) {
      grads->dW[l].noalias() += param_scale * delta * tape.x[l].transpose();
      grads->db[l] += param_scale * delta;
    }
    if (l > 0 || input_grad) {
      delta_next.resize(widths_[l]);
      delta_next.noalias() = W_[l].transpose() * delta;
      if (l == 0) {
        *input_grad = delta_next;
        return;
      }
      std::swap(delta, delta_next);
    }
  }
}

MlpGrads Mlp::make_grads() const {
  MlpGrads g;
  g.dW.resize(acts_.size());
  g.db.resize(acts_.size());
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    g.dW[l] = MatrixXd::Zero(W_[l].rows(), W_[l].cols());
    g.db[l] = VectorXd::Zero(b_[l].size());
  }
  return g;
}

VectorXd Mlp::params_flat() const {
  VectorXd p(param_count());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    for (Eigen::Index r = 0; r < W_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < W_[l].cols(); ++c) p[k++] = W_[l](r, c);
    for (Eigen::Index i = 0; i < b_[l].size(); ++i) p[k++] = b_[l][i];
  }
  return p;
}

void Mlp::set_params_flat(const VectorXd& p) {
  check_shape(static_cast<std::size_t>(p.size()) == param_count(),
              "mlp set_params: size mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    for (Eigen::Index r = 0; r < W_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < W_[l].cols(); ++c) W_[l](r, c) = p[k++];
    for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l][i] = p[k++];
  }
  ++version_;
}

void Mlp::perturb_param(std::size_t flat_index, double delta) {
  std::size_t k = flat_index;
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    const std::size_t nw = static_cast<std::size_t>(W_[l].size());
    if (k < nw) {
      const Eigen::Index r = static_cast<Eigen::Index>(k) / W_[l].cols();
      const Eigen::Index c = static_cast<Eigen::Index>(k) % W_[l].cols();
      W_[l](r, c) += delta;
      ++version_;
      return;
    }
    k -= nw;
    const std::size_t nb = static_cast<std::size_t>(b_[l].size());
    if (k < nb) {
      b_[l][static_cast<Eigen::Index>(k)] += delta;
      ++version_;
      return;
    }
    k -= nb;
  }
  throw ShapeError("mlp perturb: flat index out of range");
}

void Mlp::set_weight(int layer, const MatrixXd& w) {
  check_shape(w.rows() == W_[layer].rows() && w.cols() == W_[layer].cols(),
              "mlp set_weight: shape mismatch");
  W_[layer] = w;
  ++version_;
}

void Mlp::set_bias(int layer, const VectorXd& b) {
  check_shape(b.size() == b_[layer].size(), "mlp set_bias: shape mismatch");
  b_[layer] = b;
  ++version_;
}

void Mlp::set_all_zero() {
  for (auto& w : W_) w.setZero();
  for (auto& b : b_) b.setZero();
  ++version_;
}

void Mlp::write(std::ostream& os) const {
  os << "mlp 1\n";
  os << widths_.size() << '\n';
  for (std::size_t i = 0; i < widths_.size(); ++i)
    os << widths_[i] << (i + 1 < widths_.size() ? ' ' : '\n');
  for (std::size_t l = 0; l < acts_.size(); ++l)
    os << act_name(acts_[l]) << (l + 1 < acts_.size() ? ' ' : '\n');
  for (std::size_t l = 0; l < acts_.size(); ++l) {
    write_matrix(os, W_[l]);
    write_vector(os, b_[l]);
  }
}

Mlp Mlp::read(std::istream& is) {
  expect_token(is, "mlp");
  expect_token(is, "1");
  std::size_t nw = 0;
  is >> nw;
  if (!is || nw < 2) throw IoError("mlp read: bad widths count");
  std::vector<int> widths(nw);
  for (auto& w : widths) is >> w;
  std::vector<Act> acts(nw - 1);
  for (auto& a : acts) {
    std::string name;
    is >> name;
    a = act_from_name(name);
  }
  if (!is) throw IoError("mlp read: truncated header");
  Mlp net(std::move(widths), std::move(acts));
  for (std::size_t l = 0; l < net.acts_.size(); ++l) {
    read_matrix(is, net.W_[l]);
    read_vector(is, net.b_[l]);
  }
  ++net.version_;
  return net;
}

AdamState::AdamState(std::size_t n, AdamConfig cfg)
    : cfg_(cfg),
      m_(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v_(VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

double AdamState::alpha_t(long t) const {
  return cfg_.alpha0 * std::sqrt(1.0 - std::pow(cfg_.alpha2, t)) /
         (1.0 - std::pow(cfg_.alpha1, t));
}

void AdamState::step(VectorXd& params, const VectorXd& grad) {
  check_shape(params.size() == m_.size() && grad.size() == m_.size(),
              "adam: shape mismatch");
  if (!grad.allFinite())
    throw NumericError("adam: non-finite gradient entries");
  ++t_;
  const double a = alpha_t(t_);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.alpha1 * m_[i] + (1.0 - cfg_.alpha1) * grad[i];
    v_[i] = cfg_.alpha2 * v_[i] + (1.0 - cfg_.alpha2) * grad[i] * grad[i];
    params[i] += a * m_[i] / (std::sqrt(v_[i]) + cfg_.eps);
  }
}

}  // namespace nnme
