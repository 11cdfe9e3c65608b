#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clusterre/csvio.hpp"
#include "clusterre/design.hpp"
#include "clusterre/errors.hpp"
#include "clusterre/estimate.hpp"
#include "clusterre/inference.hpp"
#include "clusterre/jsonio.hpp"
#include "clusterre/simharness.hpp"
#include "clusterre/theory.hpp"

namespace fs = std::filesystem;
using namespace clusterre;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string data_path;
  std::string out_path;
  std::uint64_t seed = 1;
  int threads = 0;
  int mc_size = 100000;
  bool impute = false;
};

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CLUSTERRE_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;  // hardware concurrency
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Json base_manifest(const std::string& command, const Json& config, const CommonArgs& args,
                   const Stopwatch& watch) {
  Json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config_hash"] = config_hash(config);
  m["seed"] = args.seed;
  m["wall_time_seconds"] = watch.seconds();
  return m;
}

std::vector<std::string> string_list(const Json& j, const std::string& key) {
  if (!j.contains(key)) return {};
  try {
    return j[key].get<std::vector<std::string>>();
  } catch (const Json::exception&) {
    throw ConfigError("'" + key + "' must be an array of column names");
  }
}

std::vector<int> map_columns(const std::vector<std::string>& wanted,
                             const std::vector<std::string>& available) {
  std::vector<int> out;
  for (const auto& name : wanted) {
    auto it = std::find(available.begin(), available.end(), name);
    if (it == available.end()) throw ConfigError("column '" + name + "' was not loaded");
    out.push_back(static_cast<int>(it - available.begin()));
  }
  return out;
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
}

// Resolves the criterion threshold: direct threshold wins, otherwise the
// target rate is calibrated asymptotically or from empirical draws.
void resolve_threshold(BalanceCriterion& crit, const Json& config, const ClusterExperiment& exp,
                       int m1, std::uint64_t seed) {
  bool has_threshold = std::isfinite(crit.threshold);
  if (crit.tiered()) {
    has_threshold = true;
    for (const auto& tier : crit.tiers)
      if (!std::isfinite(tier.threshold)) has_threshold = false;
  }
  if (has_threshold) return;
  double rate = crit.target_rate;
  if (std::isnan(rate))
    throw ConfigError("criterion needs either a threshold or a target_rate");
  std::string mode = config.value("threshold_mode", std::string("asymptotic"));
  Rng rng(derive_stream(seed, {0x7168}));
  if (mode == "empirical")
    empirical_threshold(crit, exp, m1, rate, config.value("empirical_draws", 100000L), rng);
  else if (mode == "asymptotic")
    calibrate_threshold(crit, rate, m1, rng, config.value("calibration_draws", 2000000L));
  else
    throw ConfigError("threshold_mode must be 'asymptotic' or 'empirical'");
}

// ---------------------------------------------------------------------------
// design: draw an accepted assignment for a real experiment.

int cmd_design(const CommonArgs& args) {
  Stopwatch watch;
  Json config = read_json_file(args.config_path);
  if (!config.contains("criterion")) throw ConfigError("design config needs a 'criterion'");
  CriterionSpec cspec = criterion_from_json(config["criterion"]);
  std::vector<std::string> design_cols = string_list(config, "design_columns");
  if (design_cols.empty()) throw ConfigError("design config needs 'design_columns'");

  CsvLoadOptions load;
  load.cluster_size_covariate = config.value("cluster_size_covariate", true);
  load.cluster_aggregation = config.value("cluster_aggregation", std::string("scaled_total"));
  if (cspec.level == CovariateLevel::Cluster)
    load.cluster_columns = design_cols;
  else
    load.unit_columns = design_cols;
  LoadedExperiment data = load_experiment_csv(args.data_path, load);

  int m = data.exp.num_clusters();
  int m1 = config.value("m1", m / 2);
  if (!(m1 > 0 && m1 < m)) throw ConfigError("m1 must satisfy 0 < m1 < M");

  BalanceCriterion crit = bind_criterion(cspec, data.exp);
  resolve_threshold(crit, config, data.exp, m1, args.seed);

  DesignSpec spec{crit, m1, config.value("max_draws", 1000000L)};
  Rng rng(derive_stream(args.seed, {0xD517}));
  RerandomizeResult result = rerandomize(data.exp, spec, rng);

  ensure_out_dir(args.out_path);
  CsvTable out;
  out.header = {"cluster_id", "z"};
  for (int i = 0; i < m; ++i)
    out.rows.push_back({data.cluster_ids[i], std::to_string(result.assignment.z[i])});
  write_csv((fs::path(args.out_path) / "assignment.csv").string(), out);

  Json manifest = base_manifest("design", config, args, watch);
  manifest["clusters"] = m;
  manifest["m1"] = m1;
  manifest["draws_used"] = result.draws_used;
  if (crit.tiered()) {
    manifest["accepted_statistics"] = tier_statistics(crit, data.exp, result.assignment.z);
    Json th = Json::array();
    for (const auto& tier : crit.tiers) th.push_back(tier.threshold);
    manifest["thresholds"] = th;
  } else {
    manifest["accepted_statistic"] = balance_statistic(crit, data.exp, result.assignment.z);
    manifest["threshold"] = crit.threshold;
  }
  write_json_file((fs::path(args.out_path) / "manifest.json").string(), manifest);
  std::cout << "accepted assignment after " << result.draws_used << " draw(s)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// analyze: point estimate, robust SE, normal and improved intervals.

int cmd_analyze(const CommonArgs& args) {
  Stopwatch watch;
  Json config = read_json_file(args.config_path);
  std::string est_name = config.value("estimator", std::string("haj"));
  EstimatorKind kind;
  if (est_name == "ht")
    kind = EstimatorKind::Ht;
  else if (est_name == "haj")
    kind = EstimatorKind::Haj;
  else if (est_name == "ht_adj")
    kind = EstimatorKind::HtAdj;
  else if (est_name == "haj_adj")
    kind = EstimatorKind::HajAdj;
  else
    throw ConfigError("estimator must be one of ht, haj, ht_adj, haj_adj");
  bool cluster_side = (kind == EstimatorKind::Ht || kind == EstimatorKind::HtAdj);

  std::vector<std::string> analysis_cols = string_list(config, "analysis_columns");
  std::vector<std::string> design_cols = string_list(config, "design_columns");

  CriterionSpec cspec;
  bool has_criterion = config.contains("criterion") && !config["criterion"].is_null();
  if (has_criterion) {
    cspec = criterion_from_json(config["criterion"]);
    bool crit_cluster = cspec.level == CovariateLevel::Cluster;
    if (crit_cluster != cluster_side)
      throw ConfigError(
          "declared criterion level does not match the estimator: cluster-level criteria pair "
          "with ht/ht_adj, individual-level ones with haj/haj_adj");
    if (design_cols.empty())
      throw ConfigError("an improved interval needs 'design_columns' for the criterion");
  }

  CsvLoadOptions load;
  load.outcome_column = config.value("outcome_column", std::string("y"));
  load.assignment_column = config.value("assignment_column", std::string("z"));
  load.cluster_size_covariate = config.value("cluster_size_covariate", true);
  // Unit columns: union of analysis and design names, in declaration order.
  for (const auto& n : analysis_cols) load.unit_columns.push_back(n);
  for (const auto& n : design_cols)
    if (std::find(load.unit_columns.begin(), load.unit_columns.end(), n) ==
        load.unit_columns.end())
      load.unit_columns.push_back(n);
  load.cluster_columns = load.unit_columns;  // aggregated view for cluster-side roles
  LoadedExperiment data = load_experiment_csv(args.data_path, load);
  if (data.exp.y_obs.empty())
    throw ConfigError("analyze requires an outcome column '" + load.outcome_column + "'");
  if (data.exp.z.empty())
    throw ConfigError("analyze requires an assignment column '" + load.assignment_column + "'");

  // Map names to x (unit) and c (size + aggregated) indices.
  auto c_index = [&](const std::string& name) {
    auto it = std::find(data.c_names.begin(), data.c_names.end(), name);
    if (it == data.c_names.end()) throw ConfigError("column '" + name + "' was not loaded");
    return static_cast<int>(it - data.c_names.begin());
  };
  bool size_loaded =
      std::find(data.c_names.begin(), data.c_names.end(), "size") != data.c_names.end();
  std::vector<int> analysis_idx;
  if (cluster_side) {
    if (!analysis_cols.empty()) {
      if (size_loaded && config.value("use_cluster_size_in_analysis", true))
        analysis_idx.push_back(c_index("size"));
      for (const auto& n : analysis_cols) analysis_idx.push_back(c_index(n));
    }
  } else {
    analysis_idx = map_columns(analysis_cols, data.x_names);
  }

  EstimateOptions eopts;
  eopts.analysis_columns = analysis_idx;
  eopts.small_sample = config.value("small_sample", false);
  EstimateReport report = estimate(data.exp, data.exp.z, kind, eopts);
  double level = config.value("confidence_level", 0.95);
  IntervalEstimate normal = normal_interval(report, level);

  Json out;
  out["estimator"] = to_string(kind);
  out["se_flavor"] = to_string(report.se_flavor);
  out["tau_hat"] = report.tau_hat;
  out["variance_hat"] = report.variance_hat;
  out["se"] = std::sqrt(std::max(report.variance_hat, 0.0));
  out["confidence_level"] = level;
  out["ci_normal"] = {normal.lo, normal.hi};
  Json warnings = Json::array();

  if (has_criterion) {
    std::vector<int> design_idx;
    if (cluster_side) {
      if (size_loaded && config.value("use_cluster_size_in_design", true))
        design_idx.push_back(c_index("size"));
      for (const auto& n : design_cols) design_idx.push_back(c_index(n));
    } else {
      design_idx = map_columns(design_cols, data.x_names);
    }
    cspec.columns = design_idx;
    BalanceCriterion crit = bind_criterion(cspec, data.exp);
    int m1 = 0;
    for (int zi : data.exp.z) m1 += zi;
    resolve_threshold(crit, config, data.exp, m1, args.seed);

    ImprovedEstimates ie =
        cluster_side
            ? improved_variance_ht(data.exp, data.exp.z, analysis_idx, design_idx)
            : improved_variance_haj(data.exp, data.exp.z, analysis_idx, design_idx);
    Rng rng(derive_stream(args.seed, {0xC1}));
    IntervalEstimate improved =
        improved_interval_for(crit, m1, report, ie, level, args.mc_size, rng);
    out["ci_improved"] = {improved.lo, improved.hi};
    Json diag;
    diag["v_adj"] = ie.v_adj;
    diag["r2_adj"] = ie.r2_adj;
    diag["clip_events"] = ie.clip_events;
    diag["balance_statistic"] =
        crit.tiered() ? Json(tier_statistics(crit, data.exp, data.exp.z))
                      : Json(balance_statistic(crit, data.exp, data.exp.z));
    if (!crit.tiered()) diag["threshold"] = crit.threshold;
    out["improved_diagnostics"] = diag;
  } else {
    warnings.push_back(
        "no design-stage criterion declared: improved interval omitted, normal interval only");
  }
  out["warnings"] = warnings;
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";

  ensure_out_dir(args.out_path);
  write_json_file((fs::path(args.out_path) / "estimates.json").string(), out);
  Json manifest = base_manifest("analyze", config, args, watch);
  manifest["clusters"] = data.exp.num_clusters();
  manifest["units"] = data.exp.num_units();
  write_json_file((fs::path(args.out_path) / "manifest.json").string(), manifest);
  std::cout << "tau_hat = " << report.tau_hat << " (se " << out["se"].get<double>() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate: scenario / factorial replication studies.

int cmd_simulate(const CommonArgs& args) {
  Stopwatch watch;
  Json config = read_json_file(args.config_path);

  if (config.contains("factorial")) {
    const Json& f = config["factorial"];
    std::vector<FactorialCell> cells;
    auto ms = f.value("m_values", std::vector<int>{24});
    auto vns = f.value("vn", std::vector<std::string>{"L"});
    auto fns = f.value("fn", std::vector<std::string>{"linear"});
    auto ks = f.value("k_values", std::vector<int>{1});
    auto alphas = f.value("alphas", std::vector<double>{0.001});
    for (int m : ms)
      for (const auto& vn : vns)
        for (const auto& fn : fns)
          for (int k : ks)
            for (double alpha : alphas)
              cells.push_back({m, vn == "H", fn == "nonlinear" || fn == "cubic", k, alpha});
    auto rows = factorial_study(cells, f.value("seeds", 10), f.value("replications", 200),
                                args.seed, resolve_threads(args.threads));
    ensure_out_dir(args.out_path);
    write_factorial_csv((fs::path(args.out_path) / "factorial.csv").string(), rows);
    Json manifest = base_manifest("simulate", config, args, watch);
    manifest["cells"] = cells.size();
    manifest["rows"] = rows.size();
    write_json_file((fs::path(args.out_path) / "manifest.json").string(), manifest);
    std::cout << "factorial study: " << rows.size() << " rows\n";
    return 0;
  }

  ScenarioConfig cfg = scenario_from_json(config);
  cfg.seed = args.seed;
  cfg.threads = resolve_threads(args.threads);
  if (config.contains("mc_size")) cfg.mc_size = config["mc_size"].get<int>();
  if (args.mc_size != 100000) cfg.mc_size = args.mc_size;

  ClusterExperiment population;
  if (config.contains("population_csv") || !args.data_path.empty()) {
    std::string path = !args.data_path.empty() ? args.data_path
                                               : config["population_csv"].get<std::string>();
    CsvLoadOptions load;
    load.unit_columns = string_list(config, "unit_columns");
    if (load.unit_columns.empty())
      throw ConfigError("CSV population mode needs 'unit_columns'");
    load.cluster_columns = load.unit_columns;
    LoadedExperiment data = load_experiment_csv(path, load);
    population = std::move(data.exp);
    if (!population.has_potential_outcomes()) {
      if (!args.impute)
        throw ConfigError(
            "the population file has no potential outcomes; pass --impute to fit them from "
            "the observed arms");
      impute_potential_outcomes(population);
    }
    cfg.m = population.num_clusters();
    if (!config.contains("m1")) cfg.m1 = cfg.m / 2;
    // Column lists arrive as names in CSV mode.
    std::vector<std::string> names = load.unit_columns;
    if (config.contains("design_columns") && config["design_columns"].is_array() &&
        !config["design_columns"].empty() && config["design_columns"][0].is_string())
      cfg.design_columns = map_columns(string_list(config, "design_columns"), names);
    if (config.contains("analysis_columns") && config["analysis_columns"].is_array() &&
        !config["analysis_columns"].empty() && config["analysis_columns"][0].is_string())
      cfg.analysis_columns = map_columns(string_list(config, "analysis_columns"), names);
  } else {
    Rng rng(derive_stream(cfg.seed, {0xBEEF}));
    population = generate_population(cfg, rng);
  }

  std::vector<std::string> methods = config.value(
      "methods", std::vector<std::string>{"ReMC", "ReWC", "ReMX", "ReWX", "Haj", "HT"});
  std::vector<MetricsRow> rows = run_study(population, methods, cfg);

  ensure_out_dir(args.out_path);
  write_metrics_csv((fs::path(args.out_path) / "metrics.csv").string(), rows);
  Json manifest = base_manifest("simulate", config, args, watch);
  manifest["true_tau"] = population.true_tau();
  manifest["clusters"] = population.num_clusters();
  manifest["units"] = population.num_units();
  Json accept = Json::object();
  Json clips = Json::object();
  for (const MetricsRow& r : rows) {
    if (!std::isnan(r.acceptance_rate)) accept[r.method] = r.acceptance_rate;
    clips[r.method] = r.clip_events;
  }
  manifest["acceptance_rates"] = accept;
  manifest["clip_events"] = clips;
  write_json_file((fs::path(args.out_path) / "manifest.json").string(), manifest);
  std::cout << "simulated " << methods.size() << " method(s) x " << cfg.replications
            << " replications\n";
  return 0;
}

// ---------------------------------------------------------------------------
// theory: efficiency calculators.

int cmd_theory(const CommonArgs& args) {
  Stopwatch watch;
  Json config = read_json_file(args.config_path);
  Json out;
  double alpha = config.value("alpha", 0.001);

  if (config.contains("moments")) {
    const Json& mj = config["moments"];
    Vec v_taus = mj.at("v_taus").get<Vec>();
    auto rows = mj.at("v_ss").get<std::vector<Vec>>();
    int k = static_cast<int>(rows.size());
    Matrix v_ss(k, k);
    for (int i = 0; i < k; ++i) v_ss.set_row(i, rows[i]);
    Json report;
    report["nu_mahalanobis"] = 1.0;
    Vec w = optimal_weights(v_taus, v_ss);
    report["optimal_weights"] = w;
    double nu_opt = nu_factor(v_taus, v_ss, Matrix::diagonal(w));
    report["nu_optimal_weighted"] = nu_opt;
    report["ratio_optimal_vs_mahalanobis"] = nu_opt;
    if (mj.contains("v_tautau")) {
      double v_tt = mj["v_tautau"].get<double>();
      Matrix lv = cholesky(v_ss, "imbalance covariance");
      double r2 = dot(v_taus, chol_solve(lv, v_taus)) / v_tt;
      report["r2"] = r2;
      report["leading_variance_mahalanobis"] =
          v_tt * ((1 - r2) + r2 * p_k(k) * std::pow(alpha, 2.0 / k));
      report["leading_variance_optimal"] =
          v_tt * ((1 - r2) + r2 * p_k(k) * nu_opt * std::pow(alpha, 2.0 / k));
    }
    out["moments_report"] = report;
  }

  if (config.contains("tier_allocation")) {
    const Json& tj = config["tier_allocation"];
    Vec r2 = tj.at("r2").get<Vec>();
    auto kl = tj.at("k").get<std::vector<int>>();
    Vec rates = optimal_tier_rates(r2, kl, alpha);
    Json report;
    report["rates"] = rates;
    report["tier_expansion"] = tier_expansion(r2, kl, rates);
    // Per-covariate split assumes within-tier homogeneity for the
    // geometric-mean comparison.
    Vec per_cov;
    for (size_t l = 0; l < r2.size(); ++l)
      for (int j = 0; j < kl[l]; ++j) per_cov.push_back(r2[l] / kl[l]);
    report["orthogonal_optimal_expansion"] = orthogonal_optimal_expansion(per_cov, alpha);
    out["tier_allocation"] = report;
  }

  if (config.contains("population")) {
    ScenarioConfig cfg = scenario_from_json(config["population"]);
    cfg.seed = config["population"].value("seed", args.seed);
    Rng rng(derive_stream(cfg.seed, {0xBEEF}));
    ClusterExperiment pop = generate_population(cfg, rng);
    double e1 = static_cast<double>(cfg.m1) / cfg.m;
    if (config.contains("criteria")) {
      std::vector<CriterionSpec> specs;
      for (const Json& cj : config["criteria"]) specs.push_back(criterion_from_json(cj));
      auto summaries = compare_designs(pop, specs, alpha, e1);
      Json rows = Json::array();
      for (const auto& s : summaries) {
        Json r;
        r["criterion"] = s.name;
        r["v_tautau"] = s.v_tautau;
        r["r2"] = s.r2;
        if (!std::isnan(s.nu)) r["nu"] = s.nu;
        r["leading_variance"] = s.leading_variance;
        if (!s.per_covariate_r2.empty()) r["per_covariate_r2"] = s.per_covariate_r2;
        if (!s.per_tier_r2.empty()) r["per_tier_r2"] = s.per_tier_r2;
        rows.push_back(r);
      }
      out["design_comparison"] = rows;
    }
    if (config.value("cluster_covariate_dominance", false)) {
      ResidualComparison rc = cluster_covariate_dominance(pop, e1);
      Json r;
      r["lhs_haj_residual_variance"] = rc.lhs_haj;
      r["rhs_ht_residual_variance"] = rc.rhs_ht;
      r["verdict"] = rc.holds ? "holds" : "violated";
      out["cluster_covariate_dominance"] = r;
    }
  }

  if (out.empty())
    throw ConfigError("theory config needs 'moments', 'population', or 'tier_allocation'");

  ensure_out_dir(args.out_path);
  write_json_file((fs::path(args.out_path) / "theory.json").string(), out);
  Json manifest = base_manifest("theory", config, args, watch);
  write_json_file((fs::path(args.out_path) / "manifest.json").string(), manifest);
  std::cout << "theory report written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Design and analysis toolkit for cluster-rerandomized experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool with_data) {
    sub->add_option("--config", args.config_path, "JSON configuration")->required();
    if (with_data) sub->add_option("--data", args.data_path, "CSV data file");
    sub->add_option("--out", args.out_path, "output directory")->required();
    sub->add_option("--seed", args.seed, "master RNG seed");
    sub->add_option("--threads", args.threads, "worker threads (default: CLUSTERRE_THREADS)");
    sub->add_option("--mc-size", args.mc_size, "quantile Monte Carlo draws");
  };

  CLI::App* design = app.add_subcommand("design", "draw an accepted assignment");
  add_common(design, true);
  design->get_option("--data")->required();

  CLI::App* analyze = app.add_subcommand("analyze", "estimate effects and intervals");
  add_common(analyze, true);
  analyze->get_option("--data")->required();

  CLI::App* simulate = app.add_subcommand("simulate", "run replication studies");
  add_common(simulate, true);
  simulate->add_flag("--impute", args.impute,
                     "impute missing potential outcomes from arm-wise fits (CSV populations)");

  CLI::App* theory = app.add_subcommand("theory", "efficiency comparisons");
  add_common(theory, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (design->parsed()) return cmd_design(args);
    if (analyze->parsed()) return cmd_analyze(args);
    if (simulate->parsed()) return cmd_simulate(args);
    if (theory->parsed()) return cmd_theory(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
