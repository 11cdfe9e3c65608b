#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "clusterre/csvio.hpp"
#include "clusterre/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace clusterre;

namespace {

const std::string kCli = CLUSTERRE_CLI_PATH;
const fs::path kTmp = CLUSTERRE_TEST_TMP;

int run(const std::string& args) {
  std::string cmd = kCli + " " + args + " > " + (kTmp / "stdout.txt").string() + " 2> " +
                    (kTmp / "stderr.txt").string();
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Toy unit-level data: 6 clusters, sizes 2-3, two covariates, outcomes, z.
void write_toy_csv(const fs::path& path, bool with_yz) {
  Rng rng(99);
  std::ostringstream ss;
  ss << "cluster_id,x1,x2" << (with_yz ? ",y,z" : "") << "\n";
  int sizes[6] = {2, 3, 2, 3, 2, 2};
  for (int i = 0; i < 6; ++i) {
    int zi = i % 2;
    for (int j = 0; j < sizes[i]; ++j) {
      double x1 = rng.normal(), x2 = 0.5 * x1 + rng.normal();
      ss << "c" << i << "," << x1 << "," << x2;
      if (with_yz) {
        double y = 1.0 + 2.0 * zi + x1 + 0.5 * x2 + 0.1 * rng.normal();
        ss << "," << y << "," << zi;
      }
      ss << "\n";
    }
  }
  write_file(path, ss.str());
}

}  // namespace

TEST_CASE("design: accepted draw satisfies the declared criterion") {
  fs::create_directories(kTmp);
  write_toy_csv(kTmp / "toy.csv", false);
  write_file(kTmp / "design.json", R"({
    "criterion": {"level": "cluster", "kind": "mahalanobis", "target_rate": 0.5},
    "design_columns": ["x1", "x2"],
    "m1": 3
  })");
  int rc = run("design --config " + (kTmp / "design.json").string() + " --data " +
               (kTmp / "toy.csv").string() + " --out " + (kTmp / "design_out").string() +
               " --seed 5");
  CHECK(rc == 0);
  json manifest = json::parse(slurp(kTmp / "design_out" / "manifest.json"));
  CHECK(manifest["accepted_statistic"].get<double>() <= manifest["threshold"].get<double>());
  CHECK(manifest["draws_used"].get<long>() >= 1);
  // Assignment file has one row per cluster with binary z summing to m1.
  CsvTable t = read_csv((kTmp / "design_out" / "assignment.csv").string());
  CHECK(t.rows.size() == 6);
  int m1 = 0;
  for (const auto& row : t.rows) m1 += row[1] == "1" ? 1 : 0;
  CHECK(m1 == 3);
}

TEST_CASE("design: an infinite threshold accepts the first draw") {
  write_toy_csv(kTmp / "toy.csv", false);
  write_file(kTmp / "design_inf.json", R"({
    "criterion": {"level": "cluster", "kind": "mahalanobis", "threshold": 1e300},
    "design_columns": ["x1"],
    "m1": 3
  })");
  int rc = run("design --config " + (kTmp / "design_inf.json").string() + " --data " +
               (kTmp / "toy.csv").string() + " --out " + (kTmp / "design_inf_out").string());
  CHECK(rc == 0);
  json manifest = json::parse(slurp(kTmp / "design_inf_out" / "manifest.json"));
  CHECK(manifest["draws_used"].get<long>() == 1);
}

TEST_CASE("design: missing covariate column exits 1, exhaustion exits 2") {
  write_toy_csv(kTmp / "toy.csv", false);
  write_file(kTmp / "design_bad.json", R"({
    "criterion": {"level": "cluster", "kind": "mahalanobis", "target_rate": 0.5},
    "design_columns": ["nope"],
    "m1": 3
  })");
  CHECK(run("design --config " + (kTmp / "design_bad.json").string() + " --data " +
            (kTmp / "toy.csv").string() + " --out " + (kTmp / "design_bad_out").string()) == 1);
  CHECK(slurp(kTmp / "stderr.txt").find("nope") != std::string::npos);

  write_file(kTmp / "design_hard.json", R"({
    "criterion": {"level": "cluster", "kind": "mahalanobis", "threshold": 1e-14},
    "design_columns": ["x1", "x2"],
    "m1": 3,
    "max_draws": 50
  })");
  CHECK(run("design --config " + (kTmp / "design_hard.json").string() + " --data " +
            (kTmp / "toy.csv").string() + " --out " + (kTmp / "design_hard_out").string()) == 2);
}

TEST_CASE("analyze: unadjusted Hajek equals the difference in means") {
  write_toy_csv(kTmp / "toy_yz.csv", true);
  write_file(kTmp / "analyze.json", R"({"estimator": "haj"})");
  int rc = run("analyze --config " + (kTmp / "analyze.json").string() + " --data " +
               (kTmp / "toy_yz.csv").string() + " --out " + (kTmp / "analyze_out").string());
  CHECK(rc == 0);
  json est = json::parse(slurp(kTmp / "analyze_out" / "estimates.json"));

  // Difference in means computed directly from the file.
  CsvTable t = read_csv((kTmp / "toy_yz.csv").string());
  int yc = t.require_column("y"), zc = t.require_column("z");
  double s1 = 0.0, s0 = 0.0;
  int n1 = 0, n0 = 0;
  for (const auto& row : t.rows) {
    double y = parse_number(row[yc], "y");
    if (row[zc] == "1") {
      s1 += y;
      ++n1;
    } else {
      s0 += y;
      ++n0;
    }
  }
  double dim = s1 / n1 - s0 / n0;
  CHECK(est["tau_hat"].get<double>() == doctest::Approx(dim).epsilon(1e-10));
  CHECK(est["se_flavor"] == "LZ");
  // No criterion: improved interval omitted with a warning.
  CHECK(!est.contains("ci_improved"));
  CHECK(est["warnings"].size() == 1);
}

TEST_CASE("analyze: adjusted estimate with declared criterion emits the improved interval") {
  // Synthetic data with a known effect of 2; the point estimate should land
  // within three standard errors.
  write_toy_csv(kTmp / "toy_yz.csv", true);
  write_file(kTmp / "analyze_adj.json", R"({
    "estimator": "haj_adj",
    "analysis_columns": ["x1", "x2"],
    "design_columns": ["x1"],
    "criterion": {"level": "individual", "kind": "mahalanobis", "target_rate": 0.5},
    "confidence_level": 0.95
  })");
  int rc = run("analyze --config " + (kTmp / "analyze_adj.json").string() + " --data " +
               (kTmp / "toy_yz.csv").string() + " --out " + (kTmp / "analyze_adj_out").string() +
               " --seed 7 --mc-size 20000");
  CHECK(rc == 0);
  json est = json::parse(slurp(kTmp / "analyze_adj_out" / "estimates.json"));
  double tau = est["tau_hat"].get<double>();
  double se = est["se"].get<double>();
  CHECK(std::abs(tau - 2.0) < 3.0 * se + 0.2);
  REQUIRE(est.contains("ci_improved"));
  double lo = est["ci_improved"][0].get<double>();
  double hi = est["ci_improved"][1].get<double>();
  CHECK(lo < tau);
  CHECK(tau < hi);
  CHECK(est["improved_diagnostics"].contains("r2_adj"));

  // Criterion level inconsistent with the estimator: config error.
  write_file(kTmp / "analyze_bad.json", R"({
    "estimator": "haj_adj",
    "analysis_columns": ["x1"],
    "design_columns": ["x1"],
    "criterion": {"level": "cluster", "kind": "mahalanobis", "target_rate": 0.5}
  })");
  CHECK(run("analyze --config " + (kTmp / "analyze_bad.json").string() + " --data " +
            (kTmp / "toy_yz.csv").string() + " --out " + (kTmp / "x").string()) == 1);
}

TEST_CASE("simulate: deterministic reruns and malformed configs") {
  write_file(kTmp / "sim.json", R"({
    "m": 20, "m1": 10, "k": 1, "rho": 0.0, "gamma": 1.0,
    "replications": 25, "alpha": 0.25, "mc_size": 10000,
    "calibration_draws": 100000,
    "methods": ["ReMC", "Haj"]
  })");
  int rc = run("simulate --config " + (kTmp / "sim.json").string() + " --out " +
               (kTmp / "sim_out1").string() + " --seed 42 --threads 2");
  CHECK(rc == 0);
  CHECK(run("simulate --config " + (kTmp / "sim.json").string() + " --out " +
            (kTmp / "sim_out2").string() + " --seed 42 --threads 1") == 0);
  CHECK(slurp(kTmp / "sim_out1" / "metrics.csv") == slurp(kTmp / "sim_out2" / "metrics.csv"));
  json manifest = json::parse(slurp(kTmp / "sim_out1" / "manifest.json"));
  CHECK(manifest["acceptance_rates"].contains("ReMC"));

  write_file(kTmp / "broken.json", "{ not json");
  CHECK(run("simulate --config " + (kTmp / "broken.json").string() + " --out " +
            (kTmp / "sim_bad").string()) == 1);
  CHECK(slurp(kTmp / "stderr.txt").find("parse error") != std::string::npos);
}

TEST_CASE("simulate: CSV population mode requires --impute for missing potentials") {
  write_toy_csv(kTmp / "toy_yz.csv", true);
  write_file(kTmp / "sim_csv.json", R"({
    "unit_columns": ["x1", "x2"],
    "m1": 3,
    "replications": 20, "alpha": 0.3, "mc_size": 10000,
    "calibration_draws": 100000,
    "methods": ["ReMC", "Haj"],
    "design_columns": ["x1"],
    "analysis_columns": ["x1", "x2"]
  })");
  CHECK(run("simulate --config " + (kTmp / "sim_csv.json").string() + " --data " +
            (kTmp / "toy_yz.csv").string() + " --out " + (kTmp / "sim_csv_out").string()) == 1);
  int rc = run("simulate --config " + (kTmp / "sim_csv.json").string() + " --data " +
               (kTmp / "toy_yz.csv").string() + " --out " + (kTmp / "sim_csv_out").string() +
               " --impute --seed 3");
  CHECK(rc == 0);
  CHECK(slurp(kTmp / "sim_csv_out" / "metrics.csv").find("ReMC") != std::string::npos);
}

TEST_CASE("theory: counterexample ratio, tier coincidence, and the dominance verdict") {
  write_file(kTmp / "theory.json", R"({
    "alpha": 0.001,
    "moments": {"v_tautau": 3.0, "v_taus": [1.0, 1.0], "v_ss": [[4.0, 1.0], [1.0, 4.0]]}
  })");
  int rc = run("theory --config " + (kTmp / "theory.json").string() + " --out " +
               (kTmp / "theory_out").string());
  CHECK(rc == 0);
  json rep = json::parse(slurp(kTmp / "theory_out" / "theory.json"));
  CHECK(rep["moments_report"]["ratio_optimal_vs_mahalanobis"].get<double>() ==
        doctest::Approx(std::sqrt(3.0 / 5.0)).epsilon(1e-10));

  write_file(kTmp / "theory_pop.json", R"({
    "alpha": 0.001,
    "population": {"m": 40, "m1": 20, "k": 2, "rho": 0.4, "gamma": 1.0, "seed": 9},
    "criteria": [
      {"level": "cluster", "kind": "mahalanobis"},
      {"level": "cluster", "kind": "mahalanobis",
       "tiers": [{"columns": [0, 1, 2], "target_rate": 0.001}]}
    ],
    "cluster_covariate_dominance": true
  })");
  CHECK(run("theory --config " + (kTmp / "theory_pop.json").string() + " --out " +
            (kTmp / "theory_pop_out").string()) == 0);
  json rep2 = json::parse(slurp(kTmp / "theory_pop_out" / "theory.json"));
  double lv0 = rep2["design_comparison"][0]["leading_variance"].get<double>();
  double lv1 = rep2["design_comparison"][1]["leading_variance"].get<double>();
  CHECK(lv1 == doctest::Approx(lv0).epsilon(1e-9));
  CHECK(rep2["cluster_covariate_dominance"]["verdict"] == "holds");
}
