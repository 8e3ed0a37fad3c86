#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* path = std::getenv("ZAPQ_CLI_BIN");
  REQUIRE(path != nullptr);
  return path;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_toy_config(const fs::path& file, const fs::path& out_dir,
                      const std::string& extra_algorithm = "") {
  std::ofstream out(file);
  out << "[chain]\nkind = finite_random\nn_states = 5\nseed = 3\nbeta = 0.9\n"
      << "[basis]\nname = tabular\n"
      << "[algorithm]\nstrategy = zap\nalpha = harmonic\ngamma = poly:0.85\n"
      << extra_algorithm
      << "[run]\nn_steps = 200\nreplicas = 2\nseed = 7\n"
      << "[eval]\nn_runs = 20\nseed = 11\n"
      << "[analysis]\nnoise_steps = 20000\nseed = 5\n"
      << "[output]\ndir = " << out_dir.string() << "\n";
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("bogus-subcommand") == 1);
  CHECK(run_cli("train") == 1);  // missing --config
  CHECK(run_cli("train --config /does/not/exist.cfg") == 1);
}

TEST_CASE("train writes records, csv and an atomic manifest") {
  TempDir tmp("train");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, tmp.path / "out");
  CHECK(run_cli("train --config " + cfg.string()) == 0);

  const fs::path out = tmp.path / "out";
  CHECK(fs::exists(out / "replica_0000.json"));
  CHECK(fs::exists(out / "replica_0001.json"));
  CHECK(fs::exists(out / "run_0000.csv"));
  CHECK(fs::exists(out / "manifest.json"));
  CHECK_FALSE(fs::exists(out / "manifest.json.tmp"));

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("records").size() == 2);
  CHECK(manifest.at("aborted") == 0);
  CHECK(manifest.contains("version"));
  CHECK(manifest.at("config").at("run").at("n_steps") == 200);

  // Records embed the full effective config.
  const auto rec = nlohmann::json::parse(slurp(out / "replica_0000.json"));
  CHECK(rec.at("config").at("chain").at("n_states") == 5);

  // Re-running the same config yields byte-identical records.
  const std::string before0 = slurp(out / "replica_0000.json");
  const std::string before_csv = slurp(out / "run_0001.csv");
  CHECK(run_cli("train --config " + cfg.string()) == 0);
  CHECK(slurp(out / "replica_0000.json") == before0);
  CHECK(slurp(out / "run_0001.csv") == before_csv);
}

TEST_CASE("train reports divergence with exit code 2") {
  TempDir tmp("abort");
  const fs::path cfg = tmp.path / "bad.cfg";
  {
    std::ofstream out(cfg);
    out << "[chain]\nkind = finite_random\nn_states = 5\nseed = 3\n"
        << "beta = 0.9\n[basis]\nname = tabular\n"
        << "[algorithm]\nstrategy = identity\nalpha = scaled-harmonic:1e155\n"
        << "[run]\nn_steps = 50\nreplicas = 1\nseed = 7\n"
        << "[output]\ndir = " << (tmp.path / "out").string() << "\n";
  }
  CHECK(run_cli("train --config " + cfg.string()) == 2);
  const auto rec = nlohmann::json::parse(
      slurp(tmp.path / "out" / "replica_0000.json"));
  CHECK(rec.at("diagnostics").at("aborted") == true);
}

TEST_CASE("evaluate emits reward and histogram csv") {
  TempDir tmp("eval");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, tmp.path / "out");
  REQUIRE(run_cli("train --config " + cfg.string()) == 0);
  CHECK(run_cli("evaluate --config " + cfg.string() + " --records " +
                (tmp.path / "out").string()) == 0);

  const std::string rewards = slurp(tmp.path / "out" / "rewards.csv");
  CHECK(rewards.rfind("replica,mean,se", 0) == 0);
  std::size_t rows = 0;
  for (char ch : rewards)
    if (ch == '\n') ++rows;
  CHECK(rows == 3);  // header + 2 replicas

  const std::string hist = slurp(tmp.path / "out" / "reward_histogram.csv");
  CHECK(hist.rfind("bin_lo,bin_hi,count", 0) == 0);
  const auto summary = nlohmann::json::parse(
      slurp(tmp.path / "out" / "eval_summary.json"));
  CHECK(summary.at("n_policies") == 2);
  CHECK(summary.at("config").at("eval").at("n_runs") == 20);

  // Empty or missing record sets fail loudly.
  CHECK(run_cli("evaluate --config " + cfg.string() + " --records " +
                (tmp.path / "nowhere").string()) == 1);
}

TEST_CASE("analyze requires at least two replicas") {
  TempDir tmp("single");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, tmp.path / "out");
  REQUIRE(run_cli("train --config " + cfg.string() + " --replicas 1") == 0);
  CHECK(run_cli("analyze --config " + cfg.string() + " --records " +
                (tmp.path / "out").string()) == 1);
}

TEST_CASE("analyze writes a covariance report and flags bad gains") {
  TempDir tmp("analyze");
  const fs::path cfg = tmp.path / "toy.cfg";
  // alpha = 0.1/n makes every eigenvalue of G A land above -1/2.
  write_toy_config(cfg, tmp.path / "out");
  {
    std::ofstream out(cfg, std::ios::app);
  }
  const fs::path bad_cfg = tmp.path / "bad.cfg";
  {
    std::ofstream out(bad_cfg);
    out << "[chain]\nkind = finite_random\nn_states = 5\nseed = 3\nbeta = "
           "0.9\n"
        << "[basis]\nname = tabular\n"
        << "[algorithm]\nstrategy = zap\nalpha = scaled-harmonic:0.1\ngamma "
           "= poly:0.85\n"
        << "[run]\nn_steps = 500\nreplicas = 3\nseed = 7\n"
        << "[analysis]\nnoise_steps = 20000\nseed = 5\n"
        << "[output]\ndir = " << (tmp.path / "bad_out").string() << "\n";
  }
  REQUIRE(run_cli("train --config " + bad_cfg.string()) == 0);
  CHECK(run_cli("analyze --config " + bad_cfg.string() + " --records " +
                (tmp.path / "bad_out").string()) == 0);
  const auto report = nlohmann::json::parse(
      slurp(tmp.path / "bad_out" / "covariance_report.json"));
  CHECK(report.at("report").at("finite") == false);
  CHECK(report.at("report").at("note").get<std::string>().find(
            "infinite asymptotic covariance") != std::string::npos);
  CHECK(fs::exists(tmp.path / "bad_out" / "scaled_histogram.csv"));

  // A healthy zap config produces a finite theory block.
  REQUIRE(run_cli("train --config " + cfg.string()) == 0);
  CHECK(run_cli("analyze --config " + cfg.string() + " --records " +
                (tmp.path / "out").string()) == 0);
  const auto good = nlohmann::json::parse(
      slurp(tmp.path / "out" / "covariance_report.json"));
  CHECK(good.at("report").at("finite") == true);
  CHECK(good.at("report").contains("sigma_theory"));
  CHECK(good.at("report").contains("trace_ratio"));
}

TEST_CASE("oracle-check passes on a healthy chain and fails on rank loss") {
  TempDir tmp("oracle");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, tmp.path / "out");
  CHECK(run_cli("oracle-check --config " + cfg.string()) == 0);
  const auto report = nlohmann::json::parse(
      slurp(tmp.path / "out" / "oracle_check.json"));
  CHECK(report.at("all_pass") == true);

  // Deliberately rank-deficient custom basis.
  const fs::path dup = tmp.path / "dup.json";
  {
    std::ofstream out(dup);
    out << R"({"base": "tabular", "coeffs": [[1,1,1,1,1],[1,1,1,1,1]]})";
  }
  const fs::path bad_cfg = tmp.path / "bad_basis.cfg";
  {
    std::ofstream out(bad_cfg);
    out << "[chain]\nkind = finite_random\nn_states = 5\nseed = 3\nbeta = "
           "0.9\n"
        << "[basis]\nname = custom:" << dup.string() << "\n"
        << "[output]\ndir = " << (tmp.path / "bad_out").string() << "\n";
  }
  CHECK(run_cli("oracle-check --config " + bad_cfg.string()) == 2);
  const auto bad = nlohmann::json::parse(
      slurp(tmp.path / "bad_out" / "oracle_check.json"));
  CHECK(bad.at("all_pass") == false);
}

TEST_CASE("ode-check passes on the toy chain") {
  TempDir tmp("ode");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, tmp.path / "out");
  CHECK(run_cli("ode-check --config " + cfg.string()) == 0);
  const auto report =
      nlohmann::json::parse(slurp(tmp.path / "out" / "ode_check.json"));
  CHECK(report.at("all_pass") == true);
  bool saw_rate = false;
  for (const auto& c : report.at("checks"))
    if (c.at("name") == "cost_decay_rate") {
      saw_rate = true;
      CHECK(std::abs(c.at("observed").get<double>() + 1.0) <= 0.05);
    }
  CHECK(saw_rate);
}

TEST_CASE("output root env var prefixes relative dirs") {
  TempDir tmp("envroot");
  const fs::path cfg = tmp.path / "toy.cfg";
  write_toy_config(cfg, "rel_out");
  const std::string cmd = "ZAPQ_OUTPUT_ROOT=" + tmp.path.string() + " " +
                          cli_path() + " train --config " + cfg.string() +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(tmp.path / "rel_out" / "manifest.json"));
}
