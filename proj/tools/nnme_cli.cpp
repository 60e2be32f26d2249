// Command-line front end: simulate, fit, evaluate, cv, benchmark.
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O failure.
// Every subcommand is a pure function of (flags, config file, input files);
// re-running writes byte-identical outputs (timing goes to run.log, which is
// excluded from that guarantee).

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "nnme/eval.hpp"
#include "nnme/serialize.hpp"
#include "nnme/simgen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace nnme;

namespace {

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "' in " + where);
  }
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad JSON in ") + path + ": " + e.what());
  }
  return j;
}

Act act_from_json(const json& j, const char* key, Act dflt) {
  if (!j.contains(key)) return dflt;
  return act_from_name(j.at(key).get<std::string>());
}

TrainConfig parse_train_config(const json& j, const std::string& where) {
  reject_unknown_keys(
      j,
      {"method", "K", "L", "max_epoch", "pretrain_epochs", "batch_cap",
       "lambda0", "lambda1", "lambda2", "alpha0", "alpha1", "alpha2", "seed",
       "decoder_hidden", "encoder_hidden", "decoder_act", "encoder_act",
       "prior", "residual_link", "var_floor", "sigma0"},
      where);
  TrainConfig cfg;
  if (j.contains("method"))
    cfg.method = method_from_name(j.at("method").get<std::string>());
  cfg.K = j.value("K", cfg.K);
  cfg.L = j.value("L", cfg.L);
  cfg.max_epoch = j.value("max_epoch", cfg.max_epoch);
  cfg.pretrain_epochs = j.value("pretrain_epochs", cfg.pretrain_epochs);
  cfg.batch_cap = j.value("batch_cap", cfg.batch_cap);
  cfg.lambda0 = j.value("lambda0", cfg.lambda0);
  cfg.lambda1 = j.value("lambda1", cfg.lambda1);
  cfg.lambda2 = j.value("lambda2", cfg.lambda2);
  cfg.adam.alpha0 = j.value("alpha0", cfg.adam.alpha0);
  cfg.adam.alpha1 = j.value("alpha1", cfg.adam.alpha1);
  cfg.adam.alpha2 = j.value("alpha2", cfg.adam.alpha2);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("decoder_hidden"))
    cfg.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
  if (j.contains("encoder_hidden"))
    cfg.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
  cfg.decoder_act = act_from_json(j, "decoder_act", cfg.decoder_act);
  cfg.encoder_act = act_from_json(j, "encoder_act", cfg.encoder_act);
  cfg.residual_link = j.value("residual_link", cfg.residual_link);
  cfg.var_floor = j.value("var_floor", cfg.var_floor);
  cfg.sigma0 = j.value("sigma0", cfg.sigma0);
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    reject_unknown_keys(p,
                        {"kind", "components", "t_scale", "t_nu",
                         "nice_couplings", "nice_hidden"},
                        where + ".prior");
    const std::string kind = p.value("kind", std::string("scaled_t"));
    if (kind == "scaled_t")
      cfg.prior.kind = PriorSpec::Kind::ScaledT;
    else if (kind == "gaussian_mixture")
      cfg.prior.kind = PriorSpec::Kind::GaussianMixture;
    else if (kind == "gamma_mixture")
      cfg.prior.kind = PriorSpec::Kind::GammaMixture;
    else if (kind == "nice")
      cfg.prior.kind = PriorSpec::Kind::Nice;
    else
      throw ConfigError("unknown prior kind: " + kind);
    cfg.prior.components = p.value("components", cfg.prior.components);
    cfg.prior.t_scale = p.value("t_scale", cfg.prior.t_scale);
    cfg.prior.t_nu = p.value("t_nu", cfg.prior.t_nu);
    cfg.prior.nice_couplings =
        p.value("nice_couplings", cfg.prior.nice_couplings);
    if (p.contains("nice_hidden"))
      cfg.prior.nice_hidden = p.at("nice_hidden").get<std::vector<int>>();
  }
  cfg.validate();
  return cfg;
}

struct Manifest {
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::string scenario;
  std::string dataset_path;
  std::string method;
  int jobs = 0;

  json to_json() const {
    json j;
    j["subcommand"] = subcommand;
    if (!config_path.empty()) j["config"] = config_path;
    j["out"] = out_dir;
    j["seed"] = seed;
    if (!scenario.empty()) j["scenario"] = scenario;
    if (!dataset_path.empty()) j["dataset"] = dataset_path;
    if (!method.empty()) j["method"] = method;
    if (jobs > 0) j["jobs"] = jobs;
    return j;
  }
};

void write_manifest(const Manifest& m) {
  std::ofstream os(m.out_dir + "/manifest.json");
  if (!os) throw IoError("cannot write manifest in " + m.out_dir);
  os << m.to_json().dump(2) << '\n';
}

void prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out);
}

void write_grid_csv(const std::string& path, const MatrixXd& grid,
                    const std::vector<std::pair<std::string, VectorXd>>& cols) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (Eigen::Index j = 0; j < grid.cols(); ++j) os << 'x' << (j + 1) << ',';
  for (std::size_t c = 0; c < cols.size(); ++c)
    os << cols[c].first << (c + 1 < cols.size() ? "," : "");
  os << '\n';
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    for (Eigen::Index j = 0; j < grid.cols(); ++j)
      os << format_double(grid(i, j)) << ',';
    for (std::size_t c = 0; c < cols.size(); ++c)
      os << format_double(cols[c].second[i]) << (c + 1 < cols.size() ? "," : "");
    os << '\n';
  }
}

ScenarioSpec scenario_from_flags(const Manifest& m, int n, double sigma0,
                                 double sigma, const std::string& x_law,
                                 int grid_res) {
  ScenarioSpec spec;
  spec.name = m.scenario;
  spec.n = n;
  spec.sigma0 = sigma0;
  spec.sigma = sigma;
  spec.seed = m.seed;
  spec.x_law = x_law;
  spec.grid_res = grid_res;
  return spec;
}

int cmd_simulate(const Manifest& m, const ScenarioSpec& spec) {
  const SimulatedData sim = make_scenario(spec);
  prepare_out(m.out_dir);
  sim.data.write_csv(m.out_dir + "/data.csv");
  write_grid_csv(m.out_dir + "/truth.csv", sim.truth_x, {{"f", sim.truth_f}});
  {
    std::ofstream os(m.out_dir + "/scenario.json");
    json j;
    j["name"] = spec.name;
    j["n"] = spec.n;
    j["sigma0"] = sim.sigma0;
    j["sigma"] = sim.sigma;
    j["tau2"] = sim.tau2;
    j["seed"] = spec.seed;
    j["x_law"] = spec.x_law.empty() ? "uniform" : spec.x_law;
    j["grid_res"] = spec.grid_res;
    j["area"] = sim.region.area();
    os << j.dump(2) << '\n';
  }
  write_manifest(m);
  return 0;
}

int cmd_fit(const Manifest& m, const TrainConfig& cfg) {
  const Dataset data = Dataset::read_csv(m.dataset_path);
  const auto t0 = std::chrono::steady_clock::now();
  const AnyFit fit = fit_method(data, cfg);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  prepare_out(m.out_dir);
  if (fit.nn) {
    fit.nn->save(m.out_dir);
    if (fit.nn->aborted) {
      std::ofstream(m.out_dir + "/ABORTED") << "training aborted; best-so-far snapshot saved\n";
    }
  } else {
    std::ofstream os(m.out_dir + "/kriging.txt");
    os << "kriging " << (fit.krig_params->kale ? "kale" : "kile") << '\n'
       << format_double(fit.krig_params->tau2) << ' '
       << format_double(fit.krig_params->beta) << ' '
       << format_double(fit.krig_params->nugget) << ' '
       << format_double(fit.krig_params->sigma0_sq) << '\n';
  }
  write_manifest(m);
  std::ofstream(m.out_dir + "/run.log")
      << "wall_seconds " << wall << '\n';  // excluded from byte determinism
  if (fit.nn && fit.nn->aborted) return 3;
  return 0;
}

int cmd_evaluate(const Manifest& m, const std::string& fit_dir,
                 const std::string& truth_path, int grid_limit) {
  // truth.csv: x1..xd,f on the evaluation grid
  std::ifstream is(truth_path);
  if (!is) throw IoError("cannot open truth file: " + truth_path);
  std::string header;
  std::getline(is, header);
  const int d = static_cast<int>(std::count(header.begin(), header.end(), ','));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    if (static_cast<int>(row.size()) != d + 1)
      throw IoError("ragged truth row in " + truth_path);
    rows.push_back(std::move(row));
  }
  MatrixXd grid(rows.size(), d);
  VectorXd truth(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) grid(static_cast<Eigen::Index>(i), j) = rows[i][j];
    truth[static_cast<Eigen::Index>(i)] = rows[i][d];
  }
  if (grid_limit > 0 && grid.rows() > grid_limit) {
    grid.conservativeResize(grid_limit, d);
    truth.conservativeResize(grid_limit);
  }

  double area = 1.0;
  {
    // area recorded by simulate, if present next to the truth file
    const fs::path sidecar = fs::path(truth_path).parent_path() / "scenario.json";
    if (fs::exists(sidecar)) area = load_json(sidecar.string()).value("area", 1.0);
  }

  FitResult fit = FitResult::load(fit_dir);
  VectorXd preds(grid.rows());
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    preds[i] = fit.predict(grid.row(i).transpose());
  const double score = ise_on_grid(
      [&](const VectorXd& x) { return fit.predict(x); }, grid, truth, area);

  prepare_out(m.out_dir);
  write_grid_csv(m.out_dir + "/predictions.csv", grid,
                 {{"f_hat", preds}, {"f_true", truth}});
  std::ofstream os(m.out_dir + "/score.csv");
  os << "metric,value\nise," << format_double(score) << '\n';
  write_manifest(m);
  std::cout << "ise " << format_double(score) << '\n';
  return 0;
}

int cmd_cv(const Manifest& m, const json& config) {
  reject_unknown_keys(config, {"dataset", "folds", "grid"}, "cv config");
  const std::string dataset =
      m.dataset_path.empty() ? config.value("dataset", std::string())
                             : m.dataset_path;
  if (dataset.empty()) throw ConfigError("cv: dataset required");
  const Dataset data = Dataset::read_csv(dataset);
  const int folds = config.value("folds", 5);
  if (!config.contains("grid") || !config.at("grid").is_array() ||
      config.at("grid").empty())
    throw ConfigError("cv: non-empty config grid required");
  std::vector<TrainConfig> grid;
  for (std::size_t i = 0; i < config.at("grid").size(); ++i)
    grid.push_back(parse_train_config(config.at("grid")[i],
                                      "grid[" + std::to_string(i) + "]"));

  const CvResult cv = cross_validate(data, grid, folds, m.seed);
  prepare_out(m.out_dir);
  {
    std::ofstream os(m.out_dir + "/cv_table.csv");
    os << "config,fold,rss,elbo\n";
    for (const auto& row : cv.table)
      os << row.config_index << ',' << row.fold << ','
         << format_double(row.rss) << ',' << format_double(row.elbo) << '\n';
  }
  {
    std::ofstream os(m.out_dir + "/cv_summary.csv");
    os << "config,mean_rss,selected\n";
    for (std::size_t c = 0; c < cv.mean_rss.size(); ++c)
      os << c << ',' << format_double(cv.mean_rss[c]) << ','
         << (static_cast<int>(c) == cv.best_index ? 1 : 0) << '\n';
  }
  write_manifest(m);
  std::cout << "selected config " << cv.best_index << '\n';
  return 0;
}

struct BenchJob {
  std::string scenario;
  std::string method;
  int n;
  double sigma0;
  double sigma;
  int rep;
  TrainConfig cfg;
  ScenarioSpec spec;
};

int cmd_benchmark(const Manifest& m, const json& config) {
  reject_unknown_keys(config,
                      {"scenarios", "methods", "ns", "sigma0s", "sigma",
                       "reps", "train", "grid_res", "x_law"},
                      "benchmark config");
  if (!config.contains("scenarios") || !config.contains("methods"))
    throw ConfigError("benchmark: scenarios and methods required");
  const auto scen_list = config.at("scenarios").get<std::vector<std::string>>();
  const auto methods = config.at("methods").get<std::vector<std::string>>();
  const auto ns = config.value("ns", std::vector<int>{2000});
  const auto sigma0s = config.value("sigma0s", std::vector<double>{-1.0});
  const double sigma = config.value("sigma", -1.0);
  const int reps = config.value("reps", 10);
  const int grid_res = config.value("grid_res", 0);
  const std::string x_law = config.value("x_law", std::string());
  const json train_json = config.value("train", json::object());

  std::vector<BenchJob> jobs;
  for (const auto& scen : scen_list)
    for (int n : ns)
      for (double s0 : sigma0s)
        for (const auto& method : methods)
          for (int rep = 0; rep < reps; ++rep) {
            BenchJob job;
            job.scenario = scen;
            job.method = method;
            job.n = n;
            job.sigma0 = s0;
            job.sigma = sigma;
            job.rep = rep;
            job.cfg = parse_train_config(train_json, "benchmark.train");
            job.cfg.method = method_from_name(method);
            job.cfg.seed = derive_seed(m.seed, std::hash<std::string>{}(scen + method),
                                       static_cast<std::uint64_t>(n), rep);
            job.spec.name = scen;
            job.spec.n = n;
            job.spec.sigma0 = s0;
            job.spec.sigma = sigma;
            job.spec.x_law = x_law;
            job.spec.grid_res = grid_res;
            // data identical across methods within a rep
            job.spec.seed = derive_seed(m.seed, std::hash<std::string>{}(scen),
                                        static_cast<std::uint64_t>(n) * 1000 +
                                            static_cast<std::uint64_t>(rep));
            jobs.push_back(std::move(job));
          }

  struct Result {
    bool ok = false;
    double ise = 0.0;
    double sigma0 = 0.0;
    std::string error;
  };
  std::vector<Result> results(jobs.size());
  const int n_workers =
      m.jobs > 0 ? m.jobs
                 : std::max(1u, std::thread::hardware_concurrency() / 2);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= jobs.size()) return;
      const BenchJob& job = jobs[idx];
      try {
        const SimulatedData sim = make_scenario(job.spec);
        TrainConfig cfg = job.cfg;
        cfg.sigma0 = sim.sigma0;
        const AnyFit fit = fit_method(sim.data, cfg);
        results[idx].ise = ise_on_grid(
            [&](const VectorXd& x) { return fit.predict(x); }, sim.truth_x,
            sim.truth_f, sim.region.area());
        results[idx].sigma0 = sim.sigma0;
        results[idx].ok = true;
      } catch (const std::exception& e) {
        results[idx].error = e.what();
      }
    }
  };
  {
    std::vector<std::thread> pool;
    for (int t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  prepare_out(m.out_dir);
  {
    std::ofstream os(m.out_dir + "/results.csv");
    os << "scenario,method,n,sigma0,rep,ise\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!results[i].ok) continue;
      os << jobs[i].scenario << ',' << jobs[i].method << ',' << jobs[i].n
         << ',' << format_double(results[i].sigma0) << ',' << jobs[i].rep
         << ',' << format_double(results[i].ise) << '\n';
    }
  }
  {
    std::ofstream os(m.out_dir + "/summary.csv");
    os << "scenario,method,n,sigma0,reps,mean_ise,sd_ise,se_ise\n";
    for (const auto& scen : scen_list)
      for (int n : ns)
        for (double s0 : sigma0s)
          for (const auto& method : methods) {
            std::vector<double> vals;
            double actual_s0 = 0.0;
            for (std::size_t i = 0; i < jobs.size(); ++i)
              if (results[i].ok && jobs[i].scenario == scen &&
                  jobs[i].method == method && jobs[i].n == n &&
                  jobs[i].sigma0 == s0) {
                vals.push_back(results[i].ise);
                actual_s0 = results[i].sigma0;
              }
            if (vals.empty()) continue;
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= vals.size();
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            const double sd =
                vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 0.0;
            os << scen << ',' << method << ',' << n << ','
               << format_double(actual_s0) << ',' << vals.size() << ','
               << format_double(mean) << ',' << format_double(sd) << ','
               << format_double(sd / std::sqrt(static_cast<double>(vals.size())))
               << '\n';
          }
  }
  {
    std::ofstream os(m.out_dir + "/failures.csv");
    os << "scenario,method,n,rep,error\n";
    for (std::size_t i = 0; i < jobs.size(); ++i)
      if (!results[i].ok)
        os << jobs[i].scenario << ',' << jobs[i].method << ',' << jobs[i].n
           << ',' << jobs[i].rep << ',' << results[i].error << '\n';
  }
  write_manifest(m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"measurement-error regression engine"};
  app.require_subcommand(1);

  Manifest m;
  int n = 2000;
  double sigma0 = -1.0, sigma = -1.0;
  std::string x_law;
  int grid_res = 0;
  std::string fit_dir, truth_path;
  int grid_limit = 0;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", m.out_dir, "output directory")->required();
    cmd->add_option("--seed", m.seed, "master seed");
    cmd->add_option("--jobs", m.jobs, "worker pool size");
    cmd->add_option("--threads", threads, "row-level worker threads");
  };

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  add_common(sim);
  sim->add_option("--scenario", m.scenario, "scenario name")->required();
  sim->add_option("--n", n, "sample size");
  sim->add_option("--sigma0", sigma0, "measurement error sd");
  sim->add_option("--sigma", sigma, "response noise sd");
  sim->add_option("--x-law", x_law, "covariate law override");
  sim->add_option("--grid-res", grid_res, "truth grid resolution");

  auto* fit = app.add_subcommand("fit", "fit a method to a dataset");
  add_common(fit);
  fit->add_option("--dataset", m.dataset_path, "dataset csv")->required();
  fit->add_option("--method", m.method, "method name");
  fit->add_option("--config", m.config_path, "train config json");
  fit->add_option("--sigma0", sigma0, "measurement error sd");
  bool diag = false;
  fit->add_flag("--diag", diag, "write per-step diagnostics csv");

  auto* ev = app.add_subcommand("evaluate", "score a fit against a truth grid");
  add_common(ev);
  ev->add_option("--fit", fit_dir, "fit output directory")->required();
  ev->add_option("--truth", truth_path, "truth csv")->required();
  ev->add_option("--grid-limit", grid_limit, "evaluate on first N grid rows");

  auto* cv = app.add_subcommand("cv", "cross-validate a config grid");
  add_common(cv);
  cv->add_option("--config", m.config_path, "cv config json")->required();
  cv->add_option("--dataset", m.dataset_path, "dataset csv");

  auto* bench = app.add_subcommand("benchmark", "scenario x method x rep grid");
  add_common(bench);
  bench->add_option("--config", m.config_path, "benchmark config json")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) set_worker_threads(threads);
    if (sim->parsed()) {
      m.subcommand = "simulate";
      return cmd_simulate(m, scenario_from_flags(m, n, sigma0, sigma, x_law,
                                                 grid_res));
    }
    if (fit->parsed()) {
      m.subcommand = "fit";
      json cfg_json = json::object();
      if (!m.config_path.empty()) cfg_json = load_json(m.config_path);
      TrainConfig cfg = parse_train_config(cfg_json, "fit config");
      if (!m.method.empty()) cfg.method = method_from_name(m.method);
      if (sigma0 >= 0) cfg.sigma0 = sigma0;
      cfg.seed = m.seed;
      if (diag) {
        prepare_out(m.out_dir);
        cfg.diag_path = m.out_dir + "/diagnostics.csv";
      }
      m.method = method_name(cfg.method);
      return cmd_fit(m, cfg);
    }
    if (ev->parsed()) {
      m.subcommand = "evaluate";
      return cmd_evaluate(m, fit_dir, truth_path, grid_limit);
    }
    if (cv->parsed()) {
      m.subcommand = "cv";
      return cmd_cv(m, load_json(m.config_path));
    }
    if (bench->parsed()) {
      m.subcommand = "benchmark";
      return cmd_benchmark(m, load_json(m.config_path));
    }
    throw ConfigError("no subcommand");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
