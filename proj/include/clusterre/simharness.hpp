#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clusterre/design.hpp"
#include "clusterre/estimate.hpp"
#include "clusterre/fpstats.hpp"
#include "clusterre/rng.hpp"

namespace clusterre {

enum class ClusterEffect { LinearSize, Constant };
enum class OutcomeFn { Linear, Cubic };

// Configuration of a simulated finite population and its replication study.
// With `factorial_model` false the outcome model is
//   Y_ij(z) = g(n_i) + x_ij' beta_iz + eps_ij(z),
// covariates exchangeable-normal with correlation rho, beta_1 components
// drawn from {0.5, 1, 1.5} * gamma, beta_0 = 2 gamma 1 - beta_1, and
// per-cluster coefficient perturbations U(-0.1, 0.1). With it true,
//   Y_ij(z) = f(2 + eps_iz + x_ij' beta_iz) + eps_ij(z),
// with t3 base coefficients, N(0, I) cluster perturbations, standard-normal
// covariates, and noise variance matched to the realized variance of the
// systematic part.
struct ScenarioConfig {
  int m = 100;
  int m1 = 50;
  int size_lo = 4;
  int size_hi = 10;
  int k = 7;
  double rho = 0.8;
  double gamma = std::numeric_limits<double>::quiet_NaN();  // NaN: calibrate
  double variance_share = 0.5;
  ClusterEffect cluster_effect = ClusterEffect::LinearSize;
  double cluster_effect_constant = 6.0;
  double noise_sd = 4.0;
  bool factorial_model = false;
  OutcomeFn outcome_fn = OutcomeFn::Linear;
  int replications = 1000;
  double alpha = 0.001;
  std::uint64_t seed = 1;
  int mc_size = 100000;       // improved-interval quantile draws
  double confidence_level = 0.95;
  long max_draws = 1000000;
  long calibration_draws = 2000000;
  int threads = 0;            // 0: hardware concurrency
  // Covariate columns (indices into x) used at each stage; empty = all.
  // Cluster-level criteria map these onto (size, scaled totals) columns.
  std::vector<int> design_columns;
  std::vector<int> analysis_columns;
  // "asymptotic": chi-square / Monte Carlo calibration of thresholds.
  // "empirical": quantile of the statistic over empirical_draws
  // randomizations.
  std::string threshold_mode = "asymptotic";
  long empirical_draws = 100000;
};

// Fixed finite population with potential outcomes, covariates centered and
// cluster covariates built as (n_i, scaled totals of x).
ClusterExperiment generate_population(const ScenarioConfig& cfg, Rng& rng);

// Method vocabulary: HT, Haj (complete randomization baselines) and
// Re{M,W}{C,X}[.adj] (rerandomized: Mahalanobis / optimal weighted Euclidean
// at the cluster / individual level, optionally regression adjusted).
struct MethodSpec {
  std::string name;
  bool rerandomized = false;
  CriterionKind kind = CriterionKind::Mahalanobis;
  CovariateLevel level = CovariateLevel::Cluster;
  bool adjusted = false;
  EstimatorKind estimator = EstimatorKind::Ht;
  bool improved_ci = false;
};

MethodSpec parse_method(const std::string& name);

struct MetricsRow {
  std::string method;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double cp_normal = 0.0;
  double len_normal = 0.0;
  double cp_improved = std::numeric_limits<double>::quiet_NaN();
  double len_improved = std::numeric_limits<double>::quiet_NaN();
  long failures = 0;
  long total_draws = 0;
  double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  long clip_events = 0;
};

// Replicated study over a fixed population: rerandomize (or draw), reveal,
// estimate, build intervals, aggregate. Deterministic in cfg.seed; the
// replication loop is parallel with per-replication RNG streams.
std::vector<MetricsRow> run_study(const ClusterExperiment& population,
                                  const std::vector<std::string>& methods,
                                  const ScenarioConfig& cfg);

struct FactorialCell {
  int m = 24;
  bool size_high_variance = false;  // sizes 2..16 vs 4..10
  bool nonlinear = false;           // cubic vs linear outcome function
  int k = 1;
  double alpha = 0.001;
};

struct FactorialRow {
  FactorialCell cell;
  int seed_index = 0;
  MetricsRow metrics;
  // Percent RMSE reduction of the rerandomized+adjusted method relative to
  // the baselines (populated on its row only).
  double rmse_reduction_vs_ht = std::numeric_limits<double>::quiet_NaN();
  double rmse_reduction_vs_haj = std::numeric_limits<double>::quiet_NaN();
};

// Full factorial over (m, size variance, outcome function, k, alpha) x
// seeds, with methods {HT, Haj, ReMC.adj}; one long-format row per method
// per cell per seed.
std::vector<FactorialRow> factorial_study(const std::vector<FactorialCell>& cells, int seeds,
                                          int replications, std::uint64_t master_seed,
                                          int threads);

// Long-format metrics CSV. NaN improved-interval columns are written as
// "--" (methods for which the improved interval is not defined).
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
void write_factorial_csv(const std::string& path, const std::vector<FactorialRow>& rows);

// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
// Exceptions propagate after all tasks finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace clusterre
