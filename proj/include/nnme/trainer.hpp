#pragma once

#include <optional>
#include <string>

#include "nnme/estimators.hpp"
#include "nnme/kriging.hpp"

namespace nnme {

enum class Method { Nnme, Nn, Mjl, Vae, Ga, Kile, Kale };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct PriorSpec {
  enum class Kind { ScaledT, GaussianMixture, GammaMixture, Nice, Supplied };
  Kind kind = Kind::ScaledT;
  int components = 2;           // mixtures
  double t_scale = 2.0;
  double t_nu = 3.0;
  int nice_couplings = 4;
  std::vector<int> nice_hidden = {32, 32};
  // Supplied: a known prior on the standardized scale (oracle experiments)
  std::shared_ptr<const Prior> supplied;
};

struct TrainConfig {
  Method method = Method::Nnme;
  int K = 50;              // importance samples
  int L = 1;               // VAE repeated draws
  int max_epoch = 500;
  int pretrain_epochs = 200;
  int batch_cap = 512;     // batch size = min(batch_cap, n)
  double lambda0 = 1e-5;   // decoder L2
  double lambda1 = 1e-5;   // encoder L2
  double lambda2 = 0.0;    // prior L2
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::vector<int> decoder_hidden = {32, 32, 32, 32, 32, 32};
  Act decoder_act = Act::Relu;
  std::vector<int> encoder_hidden = {32, 32, 32, 32, 32, 32};
  Act encoder_act = Act::Relu;
  PriorSpec prior;
  bool residual_link = false;
  double var_floor = 1e-6;
  double sigma0 = 0.1;     // measurement error sd (ignored with per-row su2)
  std::string diag_path;   // per-step ESS/entropy/grad-norm CSV; empty = off

  void validate() const;
};

struct FitResult {
  MemModel model;  // standardized space
  Standardization std_rec;
  std::optional<Mlp> xhat_net;  // MJL imputation network
  std::vector<double> objective_trace;
  std::vector<double> sigma2_trace;  // sigma2 (or tau2) per epoch, std units
  std::vector<double> rss_trace;     // training estimated RSS per epoch
  Method method = Method::Nnme;
  int epochs_completed = 0;
  bool aborted = false;
  double wall_seconds = 0.0;  // not serialized

  double sigma2_orig() const {
    return model.noise().sigma2 * std_rec.y_scale * std_rec.y_scale;
  }
  double tau2_orig() const {
    return model.noise().tau2 * std_rec.y_scale * std_rec.y_scale;
  }

  // regression prediction on the original scale
  double predict(const VectorXd& x_orig) const;

  void save(const std::string& dir) const;
  static FitResult load(const std::string& dir);
};

// Builds nets/prior from the config and runs the method's procedure.
FitResult train(const Dataset& data, const TrainConfig& config);

FitResult train_nnme(const Dataset& data, const TrainConfig& config);
FitResult train_nn(const Dataset& data, const TrainConfig& config);
FitResult train_mjl(const Dataset& data, const TrainConfig& config);
FitResult train_vae(const Dataset& data, const TrainConfig& config);
FitResult train_ga(const Dataset& data, const TrainConfig& config);

// Pre-training outputs: the decoder fitted on (w, y) by penalized MSE, the
// prior fitted by penalized maximum likelihood on {w_i}, and the pretraining
// MSE used to initialize sigma^2.
struct PretrainResult {
  Mlp decoder;
  std::unique_ptr<Prior> prior;
  double mse = 0.0;
  std::vector<double> decoder_loss_trace;
};
PretrainResult pretrain(const Dataset& std_data, const TrainConfig& config,
                        Mlp decoder, std::unique_ptr<Prior> prior);

struct ValidationLoss {
  double rss = 0.0;   // Eq.-14-style weighted residual average (primary)
  double elbo = 0.0;  // per-row importance-weighted bound (diagnostic)
};

// Held-out loss with frozen parameters and fresh z draws; the fold is given
// in original units and standardized with the fit's record.
ValidationLoss validation_loss(const FitResult& fit, const Dataset& fold,
                               int K, std::uint64_t seed);

struct CvRow {
  int config_index = 0;
  int fold = 0;
  double rss = 0.0;
  double elbo = 0.0;
};

struct CvResult {
  int best_index = 0;
  std::vector<CvRow> table;
  std::vector<double> mean_rss;  // per config
};

// 5-fold cross validation over a config grid; argmin of mean estimated RSS,
// ties broken toward the smaller network, then smaller K, then lower index.
CvResult cross_validate(const Dataset& data,
                        const std::vector<TrainConfig>& grid, int folds = 5,
                        std::uint64_t seed = 1);

// Uniform wrapper over the neural trainers and the kriging baselines.
struct AnyFit {
  Method method = Method::Nnme;
  std::optional<FitResult> nn;
  std::optional<KrigingParams> krig_params;
  std::shared_ptr<const KrigingPredictor> krig;  // cached solve

  double predict(const VectorXd& x_orig) const;
};

AnyFit fit_method(const Dataset& data, const TrainConfig& config);

}  // namespace nnme
