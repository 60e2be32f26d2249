#pragma once

#include <iosfwd>
#include <vector>

#include "nnme/mlp.hpp"

namespace nnme {

// One additive coupling: indices in `pass` go through unchanged, indices in
// `shift` are moved by the sub-network output h(input at `pass`).
struct Coupling {
  std::vector<int> pass;
  std::vector<int> shift;
  Mlp h;  // |pass| -> |shift|
};

struct FlowTape {
  std::vector<VectorXd> stage;      // stage[j] = vector before coupling j
  std::vector<GradTape> sub_tapes;  // tape of layer j's sub-network
  VectorXd v;                       // final image g(x)
};

struct FlowGrads {
  std::vector<MlpGrads> layers;

  void set_zero();
  std::size_t flat_size() const;
  void flatten_into(double* out) const;
};

// NICE stack of additive couplings with unit Jacobian.
//
// Convention fixed here: `forward` is the density direction g: x -> v, and
// applies the stored couplings in order with a SUBTRACTED shift,
//   v_pass = x_pass,  v_shift = x_shift - h(x_pass).
// `inverse` (the sampling direction g^{-1}: v -> x) walks the couplings in
// reverse order with the added shift x_shift = v_shift + h(v_pass), which is
// exactly the stated coupling form. The Jacobian determinant is 1 in both
// directions, so log p_X(x) = log p_V(g(x)) with no correction term.
class NiceFlow {
 public:
  NiceFlow() = default;
  NiceFlow(int dim, std::vector<Coupling> layers);

  // Alternating odd/even partitions; sub-networks with the given hidden
  // layout (relu hidden layers, linear output).
  static NiceFlow alternating(int dim, int n_couplings,
                              const std::vector<int>& hidden, Rng& rng);

  int dim() const { return dim_; }
  int n_couplings() const { return static_cast<int>(layers_.size()); }
  const std::vector<Coupling>& couplings() const { return layers_; }

  VectorXd forward(const VectorXd& x) const;
  VectorXd inverse(const VectorXd& v) const;

  // log p_V(g(x)) with p_V the standard d-variate normal.
  double log_density(const VectorXd& x) const;
  double log_density(const VectorXd& x, FlowTape& tape) const;

  // Accumulates scale * d(log density)/d(sub-network params) into `grads`
  // and optionally writes d(log density)/dx.
  void backward(const FlowTape& tape, double scale, FlowGrads* grads,
                VectorXd* x_grad) const;

  VectorXd sample(Rng& rng) const;
  std::vector<VectorXd> sample(Rng& rng, int m) const;

  FlowGrads make_grads() const;
  std::size_t param_count() const;
  VectorXd params_flat() const;
  void set_params_flat(const VectorXd& p);

  void write(std::ostream& os) const;
  static NiceFlow read(std::istream& is);

 private:
  int dim_ = 0;
  std::vector<Coupling> layers_;
};

}  // namespace nnme
