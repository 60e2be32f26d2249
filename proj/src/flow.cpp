#include "nnme/flow.hpp"

#include <istream>
#include <ostream>

#include "nnme/serialize.hpp"

namespace nnme {

void FlowGrads::set_zero() {
  for (auto& g : layers) g.set_zero();
}

std::size_t FlowGrads::flat_size() const {
  std::size_t n = 0;
  for (const auto& g : layers) n += g.flat_size();
  return n;
}

void FlowGrads::flatten_into(double* out) const {
  for (const auto& g : layers) {
    g.flatten_into(out);
    out += g.flat_size();
  }
}

namespace {

void check_partition(int dim, const Coupling& c) {
  std::vector<char> seen(dim, 0);
  for (int i : c.pass) {
    check_shape(i >= 0 && i < dim && !seen[i], "coupling: bad pass index");
    seen[i] = 1;
  }
  for (int i : c.shift) {
    check_shape(i >= 0 && i < dim && !seen[i], "coupling: bad shift index");
    seen[i] = 1;
  }
  for (char s : seen) check_shape(s == 1, "coupling: partition must cover all coordinates");
  check_shape(c.h.input_dim() == static_cast<int>(c.pass.size()) &&
                  c.h.output_dim() == static_cast<int>(c.shift.size()),
              "coupling: sub-network shape mismatch");
}

}  // namespace

NiceFlow::NiceFlow(int dim, std::vector<Coupling> layers)
    : dim_(dim), layers_(std::move(layers)) {
  if (dim_ < 2)
    throw ConfigError("nice flow requires dimension >= 2; use a parametric prior for d = 1");
  for (const auto& c : layers_) check_partition(dim_, c);
}

NiceFlow NiceFlow::alternating(int dim, int n_couplings,
                               const std::vector<int>& hidden, Rng& rng) {
  if (dim < 2)
    throw ConfigError("nice flow requires dimension >= 2; use a parametric prior for d = 1");
  std::vector<Coupling> layers;
  layers.reserve(n_couplings);
  for (int j = 0; j < n_couplings; ++j) {
    Coupling c;
    for (int i = 0; i < dim; ++i) {
      const bool even = (i % 2 == 0);
      if (even == (j % 2 == 0))
        c.pass.push_back(i);
      else
        c.shift.push_back(i);
    }
    std::vector<int> widths;
    widths.push_back(static_cast<int>(c.pass.size()));
    for (int hsize : hidden) widths.push_back(hsize);
    widths.push_back(static_cast<int>(c.shift.size()));
    std::vector<Act> acts(widths.size() - 1, Act::Relu);
    acts.back() = Act::Linear;
    c.h = Mlp::random(std::move(widths), std::move(acts), rng);
    layers.push_back(std::move(c));
  }
  return NiceFlow(dim, std::move(layers));
}

VectorXd NiceFlow::forward(const VectorXd& x) const {
  FlowTape tape;
  log_density(x, tape);
  return tape.v;
}

VectorXd NiceFlow::inverse(const VectorXd& v) const {
  check_shape(v.size() == dim_, "nice inverse: dimension mismatch");
  VectorXd x = v;
  VectorXd in, out;
  for (std::size_t j = layers_.size(); j-- > 0;) {
    const auto& c = layers_[j];
    in.resize(c.pass.size());
    for (std::size_t i = 0; i < c.pass.size(); ++i) in[i] = x[c.pass[i]];
    out = c.h.forward(in);
    for (std::size_t i = 0; i < c.shift.size(); ++i) x[c.shift[i]] += out[i];
  }
  return x;
}

double NiceFlow::log_density(const VectorXd& x) const {
  FlowTape tape;
  return log_density(x, tape);
}

double NiceFlow::log_density(const VectorXd& x, FlowTape& tape) const {
  check_shape(x.size() == dim_, "nice log_density: dimension mismatch");
  tape.stage.resize(layers_.size() + 1);
  tape.sub_tapes.resize(layers_.size());
  tape.stage[0] = x;
  VectorXd cur = x;
  thread_local VectorXd in;
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    const auto& c = layers_[j];
    in.resize(static_cast<Eigen::Index>(c.pass.size()));
    for (std::size_t i = 0; i < c.pass.size(); ++i) in[i] = cur[c.pass[i]];
    c.h.forward(in, tape.sub_tapes[j]);
    const auto& out = tape.sub_tapes[j].output();
    for (std::size_t i = 0; i < c.shift.size(); ++i) cur[c.shift[i]] -= out[i];
    tape.stage[j + 1] = cur;
  }
  tape.v = cur;
  return -0.5 * dim_ * std::log(2.0 * M_PI) - 0.5 * cur.squaredNorm();
}

void NiceFlow::backward(const FlowTape& tape, double scale, FlowGrads* grads,
                        VectorXd* x_grad) const {
  // d logdensity / dv = -v, then pull back through the couplings.
  thread_local VectorXd delta, sub_out_grad, sub_in_grad;
  delta = -tape.v;
  for (std::size_t j = layers_.size(); j-- > 0;) {
    const auto& c = layers_[j];
    // output of coupling j: pass -> unchanged, shift -> in_shift - h(in_pass)
    sub_out_grad.resize(static_cast<Eigen::Index>(c.shift.size()));
    for (std::size_t i = 0; i < c.shift.size(); ++i)
      sub_out_grad[i] = -delta[c.shift[i]];
    c.h.backward(tape.sub_tapes[j], sub_out_grad,
                 grads ? &grads->layers[j] : nullptr, scale, &sub_in_grad);
    for (std::size_t i = 0; i < c.pass.size(); ++i)
      delta[c.pass[i]] += sub_in_grad[i];
    // delta at shift coordinates is unchanged
  }
  if (x_grad) *x_grad = delta;
}

VectorXd NiceFlow::sample(Rng& rng) const {
  VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
  return inverse(v);
}

std::vector<VectorXd> NiceFlow::sample(Rng& rng, int m) const {
  std::vector<VectorXd> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) out.push_back(sample(rng));
  return out;
}

FlowGrads NiceFlow::make_grads() const {
  FlowGrads g;
  g.layers.reserve(layers_.size());
  for (const auto& c : layers_) g.layers.push_back(c.h.make_grads());
  return g;
}

std::size_t NiceFlow::param_count() const {
  std::size_t n = 0;
  for (const auto& c : layers_) n += c.h.param_count();
  return n;
}

VectorXd NiceFlow::params_flat() const {
  VectorXd p(param_count());
  Eigen::Index k = 0;
  for (const auto& c : layers_) {
    const VectorXd sub = c.h.params_flat();
    p.segment(k, sub.size()) = sub;
    k += sub.size();
  }
  return p;
}

void NiceFlow::set_params_flat(const VectorXd& p) {
  check_shape(static_cast<std::size_t>(p.size()) == param_count(),
              "nice set_params: size mismatch");
  Eigen::Index k = 0;
  for (auto& c : layers_) {
    const Eigen::Index n = static_cast<Eigen::Index>(c.h.param_count());
    c.h.set_params_flat(p.segment(k, n));
    k += n;
  }
}

void NiceFlow::write(std::ostream& os) const {
  os << "nice 1\n" << dim_ << ' ' << layers_.size() << '\n';
  for (const auto& c : layers_) {
    os << c.pass.size();
    for (int i : c.pass) os << ' ' << i;
    os << '\n' << c.shift.size();
    for (int i : c.shift) os << ' ' << i;
    os << '\n';
    c.h.write(os);
  }
}

NiceFlow NiceFlow::read(std::istream& is) {
  expect_token(is, "nice");
  expect_token(is, "1");
  int dim = 0;
  std::size_t n_layers = 0;
  is >> dim >> n_layers;
  if (!is) throw IoError("nice read: bad header");
  std::vector<Coupling> layers(n_layers);
  for (auto& c : layers) {
    std::size_t np = 0;
    is >> np;
    c.pass.resize(np);
    for (auto& i : c.pass) is >> i;
    std::size_t ns = 0;
    is >> ns;
    c.shift.resize(ns);
    for (auto& i : c.shift) is >> i;
    if (!is) throw IoError("nice read: bad partition");
    c.h = Mlp::read(is);
  }
  return NiceFlow(dim, std::move(layers));
}

}  // namespace nnme
