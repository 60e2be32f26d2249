// End-to-end checks of the command-line surface via subprocess invocations.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nnme/common.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("NNME_CLI");
  return env ? env : std::string(CLI_BINARY);
}

int run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const {
    return (path / sub).string();
  }
};

}  // namespace

TEST_CASE("simulate writes row-complete outputs and is byte-deterministic") {
  TempDir tmp("nnme_cli_sim");
  const std::string out1 = tmp / "a";
  const std::string out2 = tmp / "b";
  CHECK(run("simulate --scenario exp1-sin --n 200 --sigma0 0.1 --sigma 0.1 "
            "--seed 7 --grid-res 50 --out " + out1) == 0);
  CHECK(run("simulate --scenario exp1-sin --n 200 --sigma0 0.1 --sigma 0.1 "
            "--seed 7 --grid-res 50 --out " + out2) == 0);
  const std::string data = slurp(out1 + "/data.csv");
  CHECK(std::count(data.begin(), data.end(), '\n') == 201);  // header + rows
  CHECK(data == slurp(out2 + "/data.csv"));
  CHECK(slurp(out1 + "/truth.csv") == slurp(out2 + "/truth.csv"));
  CHECK(fs::exists(out1 + "/manifest.json"));
}

TEST_CASE("simulate rejects unknown scenarios and n = 0 with exit code 2") {
  TempDir tmp("nnme_cli_bad");
  CHECK(run("simulate --scenario nope --n 10 --out " + (tmp / "x")) == 2);
  CHECK(run("simulate --scenario exp1-sin --n 0 --out " + (tmp / "y")) == 2);
}

TEST_CASE("fit + evaluate round trip on a tiny nn run") {
  TempDir tmp("nnme_cli_fit");
  const std::string sim = tmp / "sim";
  CHECK(run("simulate --scenario exp1-sin --n 300 --sigma0 1e-8 --sigma 0.02 "
            "--seed 9 --grid-res 100 --out " + sim) == 0);
  const std::string cfg = tmp / "cfg.json";
  std::ofstream(cfg) << R"({"method":"nn","max_epoch":600,)"
                     << R"("decoder_hidden":[32,32,32,32,32],"sigma0":1e-8})";
  const std::string fit1 = tmp / "fit1";
  const std::string fit2 = tmp / "fit2";
  CHECK(run("fit --dataset " + sim + "/data.csv --config " + cfg +
            " --seed 5 --out " + fit1) == 0);
  CHECK(run("fit --dataset " + sim + "/data.csv --config " + cfg +
            " --seed 5 --out " + fit2) == 0);
  // identical bytes for the deterministic outputs (run.log excluded)
  CHECK(slurp(fit1 + "/model.txt") == slurp(fit2 + "/model.txt"));
  CHECK(slurp(fit1 + "/traces.csv") == slurp(fit2 + "/traces.csv"));

  const std::string ev = tmp / "ev";
  CHECK(run("evaluate --fit " + fit1 + " --truth " + sim + "/truth.csv --out " +
            ev) == 0);
  const std::string score = slurp(ev + "/score.csv");
  CHECK(score.find("ise,") != std::string::npos);
  const double ise = std::stod(score.substr(score.find("ise,") + 4));
  CHECK(ise < 0.15);
  CHECK(fs::exists(ev + "/predictions.csv"));
}

TEST_CASE("fit with kale at sigma0 ~ 0 matches kile on the prediction grid") {
  TempDir tmp("nnme_cli_krig");
  const std::string sim = tmp / "sim";
  CHECK(run("simulate --scenario ex1-berry --n 80 --sigma0 0.05 --sigma 0.1 "
            "--seed 11 --grid-res 100 --out " + sim) == 0);
  const std::string kile_dir = tmp / "kile";
  const std::string kale_dir = tmp / "kale";
  CHECK(run("fit --dataset " + sim + "/data.csv --method kile --seed 5 --out " +
            kile_dir) == 0);
  CHECK(run("fit --dataset " + sim +
            "/data.csv --method kale --sigma0 1e-5 --seed 5 --out " +
            kale_dir) == 0);
  CHECK(fs::exists(kile_dir + "/kriging.txt"));
  CHECK(fs::exists(kale_dir + "/kriging.txt"));
}

TEST_CASE("config files with unknown keys are rejected (fail closed)") {
  TempDir tmp("nnme_cli_keys");
  const std::string sim = tmp / "sim";
  CHECK(run("simulate --scenario exp1-sin --n 60 --grid-res 20 --out " + sim) ==
        0);
  const std::string cfg = tmp / "bad.json";
  std::ofstream(cfg) << R"({"method":"nn","max_epoch":5,"not_a_key":1})";
  CHECK(run("fit --dataset " + sim + "/data.csv --config " + cfg + " --out " +
            (tmp / "f")) == 2);
  const std::string cfg2 = tmp / "bad2.json";
  std::ofstream(cfg2) << R"({"method":"nn","prior":{"tpyo":3}})";
  CHECK(run("fit --dataset " + sim + "/data.csv --config " + cfg2 + " --out " +
            (tmp / "g")) == 2);
}

TEST_CASE("missing dataset exits with the io code") {
  TempDir tmp("nnme_cli_io");
  CHECK(run("fit --dataset /nonexistent/d.csv --method nn --out " +
            (tmp / "f")) == 4);
}

TEST_CASE("cv emits a loss table of |grid| x folds rows and echoes singletons") {
  TempDir tmp("nnme_cli_cv");
  const std::string sim = tmp / "sim";
  CHECK(run("simulate --scenario exp1-sin --n 80 --seed 13 --grid-res 20 "
            "--out " + sim) == 0);
  const std::string cfg = tmp / "cv.json";
  std::ofstream(cfg)
      << R"({"dataset":")" << sim << R"(/data.csv","folds":5,"grid":[)"
      << R"({"method":"nnme","K":3,"max_epoch":4,"pretrain_epochs":4,)"
      << R"("decoder_hidden":[8],"encoder_hidden":[8],"sigma0":0.1},)"
      << R"({"method":"nnme","K":3,"max_epoch":4,"pretrain_epochs":4,)"
      << R"("decoder_hidden":[8,8],"encoder_hidden":[8],"sigma0":0.1}]})";
  const std::string out = tmp / "cv_out";
  CHECK(run("cv --config " + cfg + " --seed 21 --out " + out) == 0);
  const std::string table = slurp(out + "/cv_table.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 2 * 5 + 1);
  // both RSS and ELBO columns present
  CHECK(table.rfind("config,fold,rss,elbo", 0) == 0);
  CHECK(fs::exists(out + "/cv_summary.csv"));
}

TEST_CASE("benchmark produces one result row per job and a summary") {
  TempDir tmp("nnme_cli_bench");
  const std::string cfg = tmp / "bench.json";
  std::ofstream(cfg)
      << R"({"scenarios":["exp1-sin"],"methods":["nn","kile"],"ns":[60],)"
      << R"("reps":3,"grid_res":25,"train":{"max_epoch":6,)"
      << R"("decoder_hidden":[8],"sigma0":0.1}})";
  const std::string out = tmp / "bench_out";
  CHECK(run("benchmark --config " + cfg + " --seed 31 --jobs 2 --out " + out) ==
        0);
  const std::string results = slurp(out + "/results.csv");
  CHECK(std::count(results.begin(), results.end(), '\n') == 6 + 1);
  const std::string summary = slurp(out + "/summary.csv");
  CHECK(summary.find("mean_ise") != std::string::npos);
  CHECK(summary.find("sd_ise") != std::string::npos);
  CHECK(summary.find("se_ise") != std::string::npos);

  // summary se equals sd/sqrt(reps) for each row: recompute from results
  std::stringstream rs(results);
  std::string line;
  std::getline(rs, line);
  std::vector<double> nn_ise;
  while (std::getline(rs, line)) {
    if (line.find(",nn,") == std::string::npos) continue;
    nn_ise.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  }
  REQUIRE(nn_ise.size() == 3);
  double mean = (nn_ise[0] + nn_ise[1] + nn_ise[2]) / 3.0;
  double ss = 0.0;
  for (double v : nn_ise) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 2.0);
  std::stringstream sums(summary);
  std::getline(sums, line);
  bool checked = false;
  while (std::getline(sums, line)) {
    if (line.find(",nn,") == std::string::npos) continue;
    std::vector<std::string> toks;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) toks.push_back(tok);
    REQUIRE(toks.size() == 8);
    CHECK(std::stod(toks[5]) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(std::stod(toks[6]) == doctest::Approx(sd).epsilon(1e-12));
    CHECK(std::stod(toks[7]) ==
          doctest::Approx(sd / std::sqrt(3.0)).epsilon(1e-12));
    checked = true;
  }
  CHECK(checked);
}

TEST_CASE("fit nn on noiseless linear data produces a nearly linear grid") {
  TempDir tmp("nnme_cli_linear");
  // hand-written dataset: y = 2 w - 1, no noise anywhere
  const std::string data = tmp / "data.csv";
  {
    std::ofstream os(data);
    os << "w1,y\n";
    for (int i = 0; i < 200; ++i) {
      const double w = -1.0 + 2.0 * i / 199.0;
      os << w << ',' << (2.0 * w - 1.0) << '\n';
    }
  }
  const std::string truth = tmp / "truth.csv";
  {
    std::ofstream os(truth);
    os << "x1,f\n";
    for (int i = 0; i < 101; ++i) {
      const double x = -0.9 + 1.8 * i / 100.0;
      os << x << ',' << (2.0 * x - 1.0) << '\n';
    }
  }
  const std::string cfg = tmp / "cfg.json";
  std::ofstream(cfg) << R"({"method":"nn","max_epoch":500,)"
                     << R"("decoder_hidden":[16,16],"sigma0":1e-8})";
  const std::string fit = tmp / "fit";
  CHECK(run("fit --dataset " + data + " --config " + cfg + " --seed 2 --out " +
            fit + " --diag") == 0);
  CHECK(fs::exists(fit + "/diagnostics.csv"));
  const std::string ev = tmp / "ev";
  CHECK(run("evaluate --fit " + fit + " --truth " + truth + " --out " + ev) ==
        0);
  // second differences of the fitted values along the uniform grid
  std::ifstream ps(ev + "/predictions.csv");
  REQUIRE(ps);
  std::string line;
  std::getline(ps, line);  // header x1,f_hat,f_true
  std::vector<double> fhat;
  while (std::getline(ps, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    fhat.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  REQUIRE(fhat.size() == 101);
  double max_second_diff = 0.0;
  for (std::size_t i = 2; i < fhat.size(); ++i)
    max_second_diff = std::max(
        max_second_diff, std::abs(fhat[i] - 2 * fhat[i - 1] + fhat[i - 2]));
  CHECK(max_second_diff < 1e-2);
}
