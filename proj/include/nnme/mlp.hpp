#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nnme/common.hpp"

namespace nnme {

enum class Act { Relu, Tanh, Sigmoid, Linear, Softplus };

const char* act_name(Act a);
Act act_from_name(const std::string& name);

class Mlp;

// Recorded intermediates of one forward pass: inputs/post-activations x[l]
// and pre-activations z[l]. Storage is reused across calls so the hot loop
// does not allocate.
struct GradTape {
  std::vector<VectorXd> x;  // x[0] = input, x[l] = activation of layer l
  std::vector<VectorXd> z;  // z[l] = W_l x_{l-1} + b_l      (l = 1..L)
  std::uint64_t version = 0;

  const VectorXd& output() const { return x.back(); }
};

// Per-layer gradient accumulators, same shapes as the net's parameters.
struct MlpGrads {
  std::vector<MatrixXd> dW;
  std::vector<VectorXd> db;

  void set_zero();
  void add_scaled(const MlpGrads& other, double scale);
  std::size_t flat_size() const;
  void flatten_into(double* out) const;
  bool empty() const { return dW.empty(); }
};

// Fully connected network with exact reverse-mode gradients for parameters
// and inputs. All numerics are double precision.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, std::vector<Act> acts);

  // He fan-in init for relu layers, Xavier for the rest; biases zero.
  static Mlp random(std::vector<int> widths, std::vector<Act> acts, Rng& rng);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int num_layers() const { return static_cast<int>(acts_.size()); }
  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Act>& acts() const { return acts_; }
  std::uint64_t version() const { return version_; }
  std::size_t param_count() const;

  void forward(const VectorXd& input, GradTape& tape) const;
  VectorXd forward(const VectorXd& input) const;

  // Accumulates `param_scale * d<out_grad, output>/dparams` into `grads`
  // and, when `input_grad` is non-null, writes the exact input gradient
  // (unscaled). Throws TapeError if the net changed since the forward pass.
  void backward(const GradTape& tape, const VectorXd& out_grad,
                MlpGrads* grads, double param_scale,
                VectorXd* input_grad) const;

  MlpGrads make_grads() const;

  // Flat parameter access (layer order, W row-major then b).
  VectorXd params_flat() const;
  void set_params_flat(const VectorXd& p);
  void perturb_param(std::size_t flat_index, double delta);

  const MatrixXd& weight(int layer) const { return W_[layer]; }
  const VectorXd& bias(int layer) const { return b_[layer]; }
  void set_weight(int layer, const MatrixXd& w);
  void set_bias(int layer, const VectorXd& b);
  void set_all_zero();

  void write(std::ostream& os) const;
  static Mlp read(std::istream& is);

 private:
  std::vector<int> widths_;
  std::vector<Act> acts_;
  std::vector<MatrixXd> W_;  // W_[l]: widths_[l+1] x widths_[l]
  std::vector<VectorXd> b_;
  std::uint64_t version_ = 0;
};

double activate(Act a, double z);
double activate_deriv(Act a, double z, double x);  // x = activate(a, z)

// ---------------------------------------------------------------------------
// Adam (ascent direction). The step scale follows the schedule
// alpha_t = alpha0 * sqrt(1 - alpha2^t) / (1 - alpha1^t).
// ---------------------------------------------------------------------------

struct AdamConfig {
  double alpha0 = 0.001;
  double alpha1 = 0.9;
  double alpha2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg = {});

  // params += alpha_t * m / (sqrt(v) + eps), ascent on the supplied gradient.
  // Throws NumericError on non-finite gradient entries.
  void step(VectorXd& params, const VectorXd& grad);

  long t() const { return t_; }
  double alpha_t(long t) const;
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace nnme
