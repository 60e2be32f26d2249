#include "nnme/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "nnme/serialize.hpp"

namespace nnme {

const char* method_name(Method m) {
  switch (m) {
    case Method::Nnme: return "nnme";
    case Method::Nn: return "nn";
    case Method::Mjl: return "mjl";
    case Method::Vae: return "vae";
    case Method::Ga: return "ga";
    case Method::Kile: return "kile";
    case Method::Kale: return "kale";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::Nnme, Method::Nn, Method::Mjl, Method::Vae,
                   Method::Ga, Method::Kile, Method::Kale})
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method: " + name);
}

void TrainConfig::validate() const {
  if (K < 1 || L < 1) throw ConfigError("config: K and L must be >= 1");
  if (max_epoch < 1 || pretrain_epochs < 0)
    throw ConfigError("config: epochs must be >= 1");
  if (batch_cap < 1) throw ConfigError("config: batch_cap must be >= 1");
  if (lambda0 < 0 || lambda1 < 0 || lambda2 < 0)
    throw ConfigError("config: penalties must be >= 0");
  if (sigma0 < 0) throw ConfigError("config: sigma0 must be >= 0");
  if (var_floor <= 0) throw ConfigError("config: var_floor must be positive");
  for (int h : decoder_hidden)
    if (h < 1) throw ConfigError("config: decoder widths must be >= 1");
  for (int h : encoder_hidden)
    if (h < 1) throw ConfigError("config: encoder widths must be >= 1");
  if (prior.kind == PriorSpec::Kind::Supplied && !prior.supplied)
    throw ConfigError("config: supplied prior is null");
}

namespace {

constexpr double kSigma2Floor = 1e-10;

Mlp build_decoder(const TrainConfig& cfg, int d, Rng& rng) {
  std::vector<int> widths{d};
  for (int h : cfg.decoder_hidden) widths.push_back(h);
  widths.push_back(1);
  std::vector<Act> acts(widths.size() - 1, cfg.decoder_act);
  acts.back() = Act::Linear;
  return Mlp::random(std::move(widths), std::move(acts), rng);
}

Mlp build_encoder(const TrainConfig& cfg, int d, int out_dim, Rng& rng) {
  std::vector<int> widths{d + 1};
  for (int h : cfg.encoder_hidden) widths.push_back(h);
  widths.push_back(out_dim);
  std::vector<Act> acts(widths.size() - 1, cfg.encoder_act);
  acts.back() = Act::Linear;
  return Mlp::random(std::move(widths), std::move(acts), rng);
}

std::unique_ptr<Prior> build_prior(const TrainConfig& cfg, const Dataset& data,
                                   const Dataset& std_data,
                                   const Standardization& std_rec, Rng& rng) {
  const int d = data.d();
  switch (cfg.prior.kind) {
    case PriorSpec::Kind::ScaledT:
      return std::make_unique<ScaledTPrior>(d, cfg.prior.t_scale,
                                            cfg.prior.t_nu);
    case PriorSpec::Kind::GaussianMixture:
      return std::make_unique<GaussianMixturePrior>(
          GaussianMixturePrior::from_data_quantiles(std_data.w,
                                                    cfg.prior.components, rng));
    case PriorSpec::Kind::GammaMixture: {
      // gamma support lives on the raw (positive) scale; wrap the change of
      // variables so the model sees standardized coordinates
      auto inner = std::make_unique<GammaMixturePrior>(
          GammaMixturePrior::from_data(data.w, cfg.prior.components, rng));
      return std::make_unique<AffineTransformedPrior>(
          std::move(inner), std_rec.w_mean, std_rec.w_scale);
    }
    case PriorSpec::Kind::Nice: {
      if (d < 2)
        throw ConfigError("nice prior requires d >= 2; use a parametric prior");
      return std::make_unique<NicePrior>(NiceFlow::alternating(
          d, cfg.prior.nice_couplings, cfg.prior.nice_hidden, rng));
    }
    case PriorSpec::Kind::Supplied:
      return cfg.prior.supplied->clone();
  }
  throw ConfigError("bad prior kind");
}

MeasurementError build_merr(const TrainConfig& cfg, const Dataset& data,
                            const Standardization& std_rec) {
  const int d = data.d();
  VectorXd inv_s2(d);
  for (int j = 0; j < d; ++j)
    inv_s2[j] = 1.0 / (std_rec.w_scale[j] * std_rec.w_scale[j]);
  if (data.su2.size() > 0) return MeasurementError::per_row(inv_s2);
  return MeasurementError::diagonal(cfg.sigma0 * cfg.sigma0 * inv_s2);
}

std::vector<std::vector<int>> make_batches(int n, int batch_cap, Rng& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  const int bsize = std::min(batch_cap, n);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += bsize) {
    const int end = std::min(n, start + bsize);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

// Penalized MSE fit of a net mapping row features to a scalar (decoder
// pretraining and the NN baseline). Returns the final full-data MSE.
double fit_net_mse(Mlp& net, const MatrixXd& inputs, const VectorXd& targets,
                   int epochs, double lambda, const AdamConfig& adam_cfg,
                   std::uint64_t seed, std::vector<double>* loss_trace) {
  const int n = static_cast<int>(inputs.rows());
  AdamState adam(net.param_count(), adam_cfg);
  VectorXd params = net.params_flat();
  Rng shuffle_rng(derive_seed(seed, 0x3A7C));
  constexpr int kBlock = 16;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto batches = make_batches(n, 512, shuffle_rng);
    double epoch_sse = 0.0;
    for (const auto& rows : batches) {
      const int B = static_cast<int>(rows.size());
      const int n_blocks = (B + kBlock - 1) / kBlock;
      std::vector<MlpGrads> partials(n_blocks);
      std::vector<double> sse(n_blocks, 0.0);
      parallel_blocks(n_blocks, [&](int blk) {
        partials[blk] = net.make_grads();
        GradTape tape;
        const int lo = blk * kBlock;
        const int hi = std::min(B, lo + kBlock);
        for (int b = lo; b < hi; ++b) {
          const VectorXd x = inputs.row(rows[b]).transpose();
          net.forward(x, tape);
          const double resid = targets[rows[b]] - tape.output()[0];
          sse[blk] += resid * resid;
          // ascent on -(1/B) sum resid^2
          net.backward(tape, VectorXd::Ones(1), &partials[blk],
                       2.0 * resid / B, nullptr);
        }
      });
      MlpGrads total = net.make_grads();
      for (const auto& p : partials) total.add_scaled(p, 1.0);
      for (double s : sse) epoch_sse += s;
      VectorXd flat(net.param_count());
      total.flatten_into(flat.data());
      flat -= 2.0 * lambda * params;
      adam.step(params, flat);
      net.set_params_flat(params);
    }
    if (loss_trace) loss_trace->push_back(epoch_sse / n);
  }
  // exact final MSE on all rows
  double sse = 0.0;
  GradTape tape;
  for (int i = 0; i < n; ++i) {
    net.forward(inputs.row(i).transpose(), tape);
    const double r = targets[i] - tape.output()[0];
    sse += r * r;
  }
  return sse / n;
}

// Penalized maximum-likelihood fit of a learnable prior on rows of `w`.
void fit_prior_mle(Prior& prior, const MatrixXd& w, int epochs, double lambda,
                   const AdamConfig& adam_cfg, std::uint64_t seed) {
  if (prior.param_count() == 0) return;
  const int n = static_cast<int>(w.rows());
  AdamState adam(prior.param_count(), adam_cfg);
  VectorXd params = prior.params_flat();
  Rng shuffle_rng(derive_seed(seed, 0xF10A));
  constexpr int kBlock = 16;
  const Eigen::Index P = params.size();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto batches = make_batches(n, 512, shuffle_rng);
    for (const auto& rows : batches) {
      const int B = static_cast<int>(rows.size());
      const int n_blocks = (B + kBlock - 1) / kBlock;
      std::vector<VectorXd> partials(n_blocks);
      parallel_blocks(n_blocks, [&](int blk) {
        partials[blk] = VectorXd::Zero(P);
        VectorXd pg;
        const int lo = blk * kBlock;
        const int hi = std::min(B, lo + kBlock);
        for (int b = lo; b < hi; ++b) {
          const double lp = prior.log_density_grad(w.row(rows[b]).transpose(),
                                                   nullptr, &pg);
          if (std::isfinite(lp) && pg.allFinite()) partials[blk] += pg;
        }
      });
      VectorXd grad = VectorXd::Zero(P);
      for (const auto& p : partials) grad += p;
      grad /= B;
      grad -= 2.0 * lambda * params;
      adam.step(params, grad);
      prior.set_params_flat(params);
    }
  }
}

struct StandardizedProblem {
  Standardization std_rec;
  Dataset std_data;
  ResponseNoise noise;  // hetero flag set; variances filled after pretraining
};

StandardizedProblem standardize_problem(const Dataset& data) {
  data.validate();
  StandardizedProblem p;
  p.std_rec = data.compute_standardization();
  p.std_data = data.standardized(p.std_rec);
  p.noise.hetero = data.se2.size() > 0;
  return p;
}

}  // namespace

PretrainResult pretrain(const Dataset& std_data, const TrainConfig& config,
                        Mlp decoder, std::unique_ptr<Prior> prior) {
  PretrainResult out;
  out.decoder = std::move(decoder);
  out.mse = fit_net_mse(out.decoder, std_data.w, std_data.y,
                        config.pretrain_epochs, config.lambda0, config.adam,
                        derive_seed(config.seed, 11),
                        &out.decoder_loss_trace);
  if (!std::isfinite(out.mse))
    throw NumericError("pretraining diverged: non-finite loss");
  out.prior = std::move(prior);
  fit_prior_mle(*out.prior, std_data.w, config.pretrain_epochs, config.lambda2,
                config.adam, derive_seed(config.seed, 12));
  return out;
}

namespace {

struct JointMode {
  PhiEstimator phi;
  WeightMode weights;
  int draws;  // K or L
};

FitResult train_iwae_family(const Dataset& data, const TrainConfig& config,
                            Method method, const JointMode& mode) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  auto prob = standardize_problem(data);
  const int d = data.d();
  const int n = data.n();

  Rng init_rng(derive_seed(config.seed, 1));
  Mlp decoder = build_decoder(config, d, init_rng);
  auto prior = build_prior(config, data, prob.std_data, prob.std_rec, init_rng);

  PretrainResult pre =
      pretrain(prob.std_data, config, std::move(decoder), std::move(prior));

  // phi initialized randomly, untouched by pretraining
  Rng enc_rng(derive_seed(config.seed, 2));
  Mlp encoder = build_encoder(config, d, 2 * d, enc_rng);

  ResponseNoise noise = prob.noise;
  if (noise.hetero) {
    noise.tau2 = std::max(pre.mse - prob.std_data.se2.mean(), 0.0);
    noise.sigma2 = 1.0;  // unused in hetero mode
  } else {
    noise.sigma2 = std::max(pre.mse, kSigma2Floor);
  }

  MemModel model(std::move(pre.decoder), std::move(pre.prior),
                 std::move(encoder), noise, build_merr(config, data, prob.std_rec),
                 config.residual_link, config.var_floor);

  const std::size_t nt = model.theta_count();
  const std::size_t ng = model.gamma_count();
  const std::size_t np = model.phi_count();
  VectorXd params(static_cast<Eigen::Index>(nt + ng + np));
  params.head(nt) = model.decoder().params_flat();
  if (ng > 0) params.segment(nt, ng) = model.prior().params_flat();
  params.tail(np) = model.encoder().params_flat();
  AdamState adam(params.size(), config.adam);

  FitResult fit;
  fit.method = method;
  fit.std_rec = prob.std_rec;

  Rng shuffle_rng(derive_seed(config.seed, 3));
  GradOptions opts;
  opts.theta = true;
  opts.gamma = ng > 0;
  opts.phi = mode.phi;
  opts.weights = mode.weights;

  MemModel best_model = model;
  double best_rss = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  McBatch batch;
  ModelGrads grads = make_model_grads(model);
  VectorXd flat(params.size());

  std::ofstream diag_os;
  if (!config.diag_path.empty()) {
    diag_os.open(config.diag_path);
    if (!diag_os) throw IoError("cannot write diagnostics: " + config.diag_path);
    diag_os << "epoch,step,mean_ess,mean_entropy,grad_norm_theta,"
               "grad_norm_gamma,grad_norm_phi\n";
  }

  for (int epoch = 1; epoch <= config.max_epoch; ++epoch) {
    const auto batches = make_batches(n, config.batch_cap, shuffle_rng);
    double epoch_elbo = 0.0;
    double epoch_wres = 0.0;  // sum of per-row weighted squared residuals
    double epoch_se2 = 0.0;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      const std::uint64_t step_seed =
          derive_seed(config.seed, 4, epoch, static_cast<std::uint64_t>(s));
      populate_mc_batch(model, prob.std_data, batches[s], mode.draws,
                        step_seed, batch);
      epoch_elbo += elbo_estimate(batch);
      for (int b = 0; b < batch.B(); ++b) {
        epoch_wres += row_weighted_sq_residual(batch, prob.std_data, b);
        if (noise.hetero) epoch_se2 += prob.std_data.se2[batch.rows[b]];
      }

      grads.set_zero();
      accumulate_gradients(model, prob.std_data, batch, opts, grads);
      grads.theta.flatten_into(flat.data());
      if (ng > 0)
        flat.segment(nt, ng) = grads.gamma;
      grads.phi.flatten_into(flat.data() + nt + ng);
      // ascent on Q - lambda0|theta|^2 - lambda2|gamma|^2 - lambda1|phi|^2
      flat.head(nt) -= 2.0 * config.lambda0 * params.head(nt);
      if (ng > 0)
        flat.segment(nt, ng) -= 2.0 * config.lambda2 * params.segment(nt, ng);
      flat.tail(np) -= 2.0 * config.lambda1 * params.tail(np);

      adam.step(params, flat);
      model.decoder().set_params_flat(params.head(nt));
      if (ng > 0) {
        model.prior().set_params_flat(params.segment(nt, ng));
        model.bump_prior_version();
      }
      model.encoder().set_params_flat(params.tail(np));

      if (diag_os) {
        const BatchDiagnostics bd = batch_diagnostics(batch);
        diag_os << epoch << ',' << s << ',' << format_double(bd.mean_ess())
                << ',' << format_double(bd.mean_entropy()) << ','
                << format_double(flat.head(nt).norm()) << ','
                << format_double(ng > 0 ? flat.segment(nt, ng).norm() : 0.0)
                << ',' << format_double(flat.tail(np).norm()) << '\n';
      }
    }

    // Eq.-14-style update from the epoch's own draws
    const double rss = epoch_wres / n;
    if (noise.hetero) {
      model.noise().tau2 = std::max((epoch_wres - epoch_se2) / n, 0.0);
    } else {
      model.noise().sigma2 = std::max(rss, kSigma2Floor);
    }

    fit.objective_trace.push_back(epoch_elbo / n);
    fit.sigma2_trace.push_back(noise.hetero ? model.noise().tau2
                                            : model.noise().sigma2);
    fit.rss_trace.push_back(rss);
    fit.epochs_completed = epoch;

    if (std::isfinite(rss) && rss < best_rss) {
      best_rss = rss;
      best_model = model;
    }
    if (!std::isfinite(epoch_elbo) || !std::isfinite(rss)) {
      if (++bad_epochs >= 3) {
        fit.aborted = true;
        fit.model = best_model;
        fit.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        return fit;
      }
    } else {
      bad_epochs = 0;
    }
  }

  fit.model = std::move(model);
  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return fit;
}

}  // namespace

FitResult train_nnme(const Dataset& data, const TrainConfig& config) {
  return train_iwae_family(
      data, config, Method::Nnme,
      {PhiEstimator::Dreg, WeightMode::SelfNormalized, config.K});
}

FitResult train_ga(const Dataset& data, const TrainConfig& config) {
  return train_iwae_family(
      data, config, Method::Ga,
      {PhiEstimator::Plain, WeightMode::SelfNormalized, config.K});
}

FitResult train_vae(const Dataset& data, const TrainConfig& config) {
  return train_iwae_family(data, config, Method::Vae,
                           {PhiEstimator::Plain, WeightMode::Uniform,
                            config.L});
}

FitResult train_nn(const Dataset& data, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  auto prob = standardize_problem(data);
  const int d = data.d();

  Rng init_rng(derive_seed(config.seed, 1));
  Mlp decoder = build_decoder(config, d, init_rng);
  FitResult fit;
  fit.method = Method::Nn;
  fit.std_rec = prob.std_rec;
  const double mse =
      fit_net_mse(decoder, prob.std_data.w, prob.std_data.y, config.max_epoch,
                  config.lambda0, config.adam, derive_seed(config.seed, 11),
                  &fit.objective_trace);
  if (!std::isfinite(mse)) throw NumericError("nn training diverged");
  fit.rss_trace = fit.objective_trace;
  fit.sigma2_trace = fit.objective_trace;
  fit.epochs_completed = config.max_epoch;

  ResponseNoise noise = prob.noise;
  noise.sigma2 = std::max(mse, kSigma2Floor);
  if (noise.hetero)
    noise.tau2 = std::max(mse - prob.std_data.se2.mean(), 0.0);
  Mlp encoder({d + 1, 2 * d}, {Act::Linear});  // placeholder, all-zero
  fit.model =
      MemModel(std::move(decoder), std::make_unique<ScaledTPrior>(d),
               std::move(encoder), noise, build_merr(config, data, prob.std_rec),
               false, config.var_floor);
  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return fit;
}

FitResult train_mjl(const Dataset& data, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  auto prob = standardize_problem(data);
  const int d = data.d();
  const int n = data.n();

  Rng init_rng(derive_seed(config.seed, 1));
  Mlp decoder = build_decoder(config, d, init_rng);
  const double pre_mse = fit_net_mse(
      decoder, prob.std_data.w, prob.std_data.y, config.pretrain_epochs,
      config.lambda0, config.adam, derive_seed(config.seed, 11), nullptr);

  // imputation net g_phi(w, y) -> x, pretrained toward the identity on w
  Rng enc_rng(derive_seed(config.seed, 2));
  Mlp xhat = build_encoder(config, d, d, enc_rng);
  {
    AdamState adam(xhat.param_count(), config.adam);
    VectorXd params = xhat.params_flat();
    Rng shuffle_rng(derive_seed(config.seed, 13));
    MatrixXd inputs(n, d + 1);
    inputs.leftCols(d) = prob.std_data.w;
    inputs.col(d) = prob.std_data.y;
    GradTape tape;
    VectorXd out_grad(d);
    for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
      for (const auto& rows : make_batches(n, 512, shuffle_rng)) {
        MlpGrads g = xhat.make_grads();
        for (int row : rows) {
          xhat.forward(inputs.row(row).transpose(), tape);
          out_grad = 2.0 *
                     (prob.std_data.w.row(row).transpose() - tape.output()) /
                     static_cast<double>(rows.size());
          xhat.backward(tape, out_grad, &g, 1.0, nullptr);
        }
        VectorXd flat(xhat.param_count());
        g.flatten_into(flat.data());
        flat -= 2.0 * config.lambda1 * params;
        adam.step(params, flat);
        xhat.set_params_flat(params);
      }
    }
  }

  ResponseNoise noise = prob.noise;
  if (noise.hetero)
    noise.tau2 = std::max(pre_mse - prob.std_data.se2.mean(), 0.0);
  else
    noise.sigma2 = std::max(pre_mse, kSigma2Floor);
  const MeasurementError merr = build_merr(config, data, prob.std_rec);

  const std::size_t nt = decoder.param_count();
  const std::size_t np = xhat.param_count();
  VectorXd params(static_cast<Eigen::Index>(nt + np));
  params.head(nt) = decoder.params_flat();
  params.tail(np) = xhat.params_flat();
  AdamState adam(params.size(), config.adam);

  FitResult fit;
  fit.method = Method::Mjl;
  fit.std_rec = prob.std_rec;

  Rng shuffle_rng(derive_seed(config.seed, 3));
  MatrixXd enc_in(n, d + 1);
  enc_in.leftCols(d) = prob.std_data.w;
  enc_in.col(d) = prob.std_data.y;

  double best_rss = std::numeric_limits<double>::infinity();
  Mlp best_decoder = decoder;
  Mlp best_xhat = xhat;
  double best_sigma2 = noise.sigma2;
  int bad_epochs = 0;
  constexpr int kBlock = 16;

  for (int epoch = 1; epoch <= config.max_epoch; ++epoch) {
    double epoch_obj = 0.0;
    double epoch_sse = 0.0;
    double epoch_se2 = 0.0;
    for (const auto& rows : make_batches(n, config.batch_cap, shuffle_rng)) {
      const int B = static_cast<int>(rows.size());
      const int n_blocks = (B + kBlock - 1) / kBlock;
      std::vector<MlpGrads> dec_parts(n_blocks), enc_parts(n_blocks);
      std::vector<double> objs(n_blocks, 0.0), sses(n_blocks, 0.0);
      const double v_homo = noise.sigma2;
      parallel_blocks(n_blocks, [&](int blk) {
        dec_parts[blk] = decoder.make_grads();
        enc_parts[blk] = xhat.make_grads();
        GradTape enc_tape, dec_tape;
        VectorXd f_xgrad, G;
        const int lo = blk * kBlock;
        const int hi = std::min(B, lo + kBlock);
        for (int b = lo; b < hi; ++b) {
          const int row = rows[b];
          const VectorXd w = prob.std_data.w.row(row).transpose();
          const double y = prob.std_data.y[row];
          const double su2 =
              prob.std_data.su2.size() ? prob.std_data.su2[row] : -1.0;
          const double v = noise.hetero
                               ? noise.tau2 + prob.std_data.se2[row]
                               : v_homo;
          xhat.forward(enc_in.row(row).transpose(), enc_tape);
          const VectorXd xh = enc_tape.output();
          decoder.forward(xh, dec_tape);
          const double f = dec_tape.output()[0];
          const double r = y - f;
          objs[blk] += merr.log_pdf(w - xh, su2) +
                       log_normal_pdf(y, f, std::max(v, kSigma2Floor));
          sses[blk] += r * r;
          decoder.backward(dec_tape, VectorXd::Ones(1), &dec_parts[blk],
                           r / std::max(v, kSigma2Floor), &f_xgrad);
          G = merr.x_grad(w - xh, su2) +
              (r / std::max(v, kSigma2Floor)) * f_xgrad;
          xhat.backward(enc_tape, G, &enc_parts[blk], 1.0, nullptr);
        }
      });
      MlpGrads dec_total = decoder.make_grads();
      MlpGrads enc_total = xhat.make_grads();
      for (int blk = 0; blk < n_blocks; ++blk) {
        dec_total.add_scaled(dec_parts[blk], 1.0);
        enc_total.add_scaled(enc_parts[blk], 1.0);
        epoch_obj += objs[blk];
        epoch_sse += sses[blk];
      }
      VectorXd flat(params.size());
      dec_total.flatten_into(flat.data());
      enc_total.flatten_into(flat.data() + nt);
      flat.head(nt) -= 2.0 * config.lambda0 * params.head(nt);
      flat.tail(np) -= 2.0 * config.lambda1 * params.tail(np);
      adam.step(params, flat);
      decoder.set_params_flat(params.head(nt));
      xhat.set_params_flat(params.tail(np));
    }
    if (noise.hetero) {
      for (int i = 0; i < n; ++i) epoch_se2 += prob.std_data.se2[i];
      noise.tau2 = std::max((epoch_sse - epoch_se2) / n, 0.0);
    } else {
      noise.sigma2 = std::max(epoch_sse / n, kSigma2Floor);
    }
    const double rss = epoch_sse / n;
    fit.objective_trace.push_back(epoch_obj / n);
    fit.sigma2_trace.push_back(noise.hetero ? noise.tau2 : noise.sigma2);
    fit.rss_trace.push_back(rss);
    fit.epochs_completed = epoch;
    if (std::isfinite(rss) && rss < best_rss) {
      best_rss = rss;
      best_decoder = decoder;
      best_xhat = xhat;
      best_sigma2 = noise.sigma2;
    }
    if (!std::isfinite(epoch_obj) || !std::isfinite(rss)) {
      if (++bad_epochs >= 3) {
        decoder = best_decoder;
        xhat = best_xhat;
        noise.sigma2 = best_sigma2;
        fit.aborted = true;
        break;
      }
    } else {
      bad_epochs = 0;
    }
  }

  Mlp placeholder_enc({d + 1, 2 * d}, {Act::Linear});
  fit.model = MemModel(std::move(decoder), std::make_unique<ScaledTPrior>(d),
                       std::move(placeholder_enc), noise, merr, false,
                       config.var_floor);
  fit.xhat_net = std::move(xhat);
  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return fit;
}

FitResult train(const Dataset& data, const TrainConfig& config) {
  switch (config.method) {
    case Method::Nnme: return train_nnme(data, config);
    case Method::Nn: return train_nn(data, config);
    case Method::Mjl: return train_mjl(data, config);
    case Method::Vae: return train_vae(data, config);
    case Method::Ga: return train_ga(data, config);
    case Method::Kile:
    case Method::Kale:
      throw ConfigError("kriging methods use fit_method(), not train()");
  }
  throw ConfigError("bad method");
}

double FitResult::predict(const VectorXd& x_orig) const {
  return std_rec.to_orig_y(model.f_std(std_rec.to_std_x(x_orig)));
}

void FitResult::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/model.txt");
    if (!os) throw IoError("cannot write " + dir + "/model.txt");
    model.write(os);
    std_rec.write(os);
    os << "meta " << method_name(method) << ' ' << epochs_completed << ' '
       << (aborted ? 1 : 0) << ' ' << (xhat_net ? 1 : 0) << '\n';
    if (xhat_net) xhat_net->write(os);
  }
  {
    std::ofstream os(dir + "/traces.csv");
    if (!os) throw IoError("cannot write " + dir + "/traces.csv");
    os << "epoch,objective,sigma2,rss\n";
    for (std::size_t e = 0; e < objective_trace.size(); ++e)
      os << (e + 1) << ',' << format_double(objective_trace[e]) << ','
         << format_double(e < sigma2_trace.size() ? sigma2_trace[e] : 0.0)
         << ',' << format_double(e < rss_trace.size() ? rss_trace[e] : 0.0)
         << '\n';
  }
}

FitResult FitResult::load(const std::string& dir) {
  std::ifstream is(dir + "/model.txt");
  if (!is) throw IoError("cannot open " + dir + "/model.txt");
  FitResult fit;
  fit.model = MemModel::read(is);
  fit.std_rec = Standardization::read(is);
  expect_token(is, "meta");
  std::string mname;
  int aborted = 0, has_xhat = 0;
  is >> mname >> fit.epochs_completed >> aborted >> has_xhat;
  if (!is) throw IoError("fit meta truncated");
  fit.method = method_from_name(mname);
  fit.aborted = aborted != 0;
  if (has_xhat) fit.xhat_net = Mlp::read(is);

  std::ifstream ts(dir + "/traces.csv");
  if (ts) {
    std::string line;
    std::getline(ts, line);  // header
    while (std::getline(ts, line)) {
      if (line.empty()) continue;
      double e, obj, s2, rss;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &e, &obj, &s2, &rss) ==
          4) {
        fit.objective_trace.push_back(obj);
        fit.sigma2_trace.push_back(s2);
        fit.rss_trace.push_back(rss);
      }
    }
  }
  return fit;
}

ValidationLoss validation_loss(const FitResult& fit, const Dataset& fold,
                               int K, std::uint64_t seed) {
  fold.validate();
  const Dataset std_fold = fold.standardized(fit.std_rec);
  std::vector<int> rows(std_fold.n());
  for (int i = 0; i < std_fold.n(); ++i) rows[i] = i;
  McBatch batch;
  populate_mc_batch(fit.model, std_fold, rows, K, seed, batch);
  ValidationLoss out;
  double wres = 0.0;
  for (int b = 0; b < batch.B(); ++b)
    wres += row_weighted_sq_residual(batch, std_fold, b);
  out.rss = wres / std_fold.n();
  out.elbo = elbo_estimate(batch) / std_fold.n();
  return out;
}

CvResult cross_validate(const Dataset& data,
                        const std::vector<TrainConfig>& grid, int folds,
                        std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("cross_validate: empty config grid");
  check_shape(folds >= 2, "cross_validate: folds must be >= 2");
  Rng rng(derive_seed(seed, 0xCF));
  std::vector<int> perm(data.n());
  for (int i = 0; i < data.n(); ++i) perm[i] = i;
  rng.shuffle(perm);

  CvResult out;
  out.mean_rss.assign(grid.size(), 0.0);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (int f = 0; f < folds; ++f) {
      std::vector<int> train_idx, test_idx;
      for (int i = 0; i < data.n(); ++i) {
        if (i % folds == f)
          test_idx.push_back(perm[i]);
        else
          train_idx.push_back(perm[i]);
      }
      TrainConfig cfg = grid[c];
      cfg.seed = derive_seed(seed, 0xC0F0, c, static_cast<std::uint64_t>(f));
      const FitResult fit = train(data.rows(train_idx), cfg);
      const ValidationLoss loss =
          validation_loss(fit, data.rows(test_idx), cfg.K,
                          derive_seed(seed, 0x7E57, c, static_cast<std::uint64_t>(f)));
      out.table.push_back({static_cast<int>(c), f, loss.rss, loss.elbo});
      out.mean_rss[c] += loss.rss / folds;
    }
  }

  auto network_size = [&](const TrainConfig& cfg) {
    long s = 0;
    for (int h : cfg.decoder_hidden) s += h;
    for (int h : cfg.encoder_hidden) s += h;
    return s;
  };
  int best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c) {
    const double diff = out.mean_rss[c] - out.mean_rss[best];
    if (diff < 0) {
      best = static_cast<int>(c);
    } else if (diff == 0.0) {
      if (network_size(grid[c]) < network_size(grid[best]) ||
          (network_size(grid[c]) == network_size(grid[best]) &&
           grid[c].K < grid[best].K))
        best = static_cast<int>(c);
    }
  }
  out.best_index = best;
  return out;
}

double AnyFit::predict(const VectorXd& x_orig) const {
  if (nn) return nn->predict(x_orig);
  return krig->predict(x_orig);
}

AnyFit fit_method(const Dataset& data, const TrainConfig& config) {
  AnyFit out;
  out.method = config.method;
  if (config.method == Method::Kile || config.method == Method::Kale) {
    if (data.heteroscedastic())
      throw ConfigError("kriging baselines support homoscedastic data only");
    KrigingOptions opts;
    opts.seed = config.seed;
    out.krig_params =
        config.method == Method::Kile
            ? kile_fit(data, opts)
            : kale_fit(data, config.sigma0 * config.sigma0, opts);
    out.krig = std::make_shared<KrigingPredictor>(*out.krig_params, data);
    return out;
  }
  out.nn = train(data, config);
  return out;
}

}  // namespace nnme
