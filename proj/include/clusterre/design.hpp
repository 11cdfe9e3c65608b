#pragma once

#include <limits>
#include <string>
#include <vector>

#include "clusterre/fpstats.hpp"
#include "clusterre/linalg.hpp"
#include "clusterre/rng.hpp"

namespace clusterre {

enum class CovariateLevel { Cluster, Individual };
enum class CriterionKind { Mahalanobis, WeightedEuclidean, GeneralQuadratic };

std::string to_string(CovariateLevel level);
std::string to_string(CriterionKind kind);

struct Assignment {
  std::vector<int> z;  // one 0/1 entry per cluster
  int m1() const;
  int m0() const { return static_cast<int>(z.size()) - m1(); }
};

// Uniform draw over all assignments with exactly m1 of m clusters treated.
Assignment draw_complete(int m, int m1, Rng& rng);

// Difference of covariate arm means. Cluster level divides by the fixed arm
// counts M1/M0 (Horvitz-Thompson form); individual level divides by the
// realized unit counts N1/N0 (Hajek form).
Vec covariate_diff(const ClusterExperiment& exp, const std::vector<int>& z, CovariateLevel level);

// Serializable description of a balance criterion, before it is bound to a
// concrete experiment's covariates.
struct CriterionSpec {
  CovariateLevel level = CovariateLevel::Cluster;
  CriterionKind kind = CriterionKind::Mahalanobis;
  Vec weights;                    // weighted Euclidean: positive diagonal
  Matrix matrix;                  // general quadratic: SPD K x K
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double target_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> columns;       // covariate column subset; empty = all
  std::vector<std::vector<int>> tier_columns;   // non-empty => tiered Mahalanobis
  std::vector<double> tier_rates;               // per-tier acceptance rates
  std::vector<double> tier_thresholds;          // per-tier thresholds (alternative)
};

struct CriterionTier {
  std::vector<int> columns;  // indices into the bound covariate set
  double threshold = std::numeric_limits<double>::infinity();
  double target_rate = std::numeric_limits<double>::quiet_NaN();
  Matrix cov_inv;            // cov_f of the tier's columns, inverted
};

// A balance criterion bound to an experiment. Covariance matrices are
// computed once from the full covariate set (they do not depend on the
// assignment) and cached here; the bound criterion is immutable during
// rerandomization and safe to share across threads.
struct BalanceCriterion {
  CovariateLevel level;
  CriterionKind kind;
  std::vector<int> columns;       // columns of exp.c / exp.x in use
  Matrix data;                    // M x K: cluster covariates or scaled totals
  Matrix totals;                  // M x K per-cluster raw covariate totals (individual level)
  std::vector<int> sizes;         // cluster sizes (individual level)
  Matrix a_matrix;                // quadratic-form matrix (weighted / general)
  Matrix cov_inv;                 // cov_f(data)^-1 (Mahalanobis)
  double threshold = std::numeric_limits<double>::infinity();
  double target_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<CriterionTier> tiers;

  int dimension() const { return data.cols(); }
  bool tiered() const { return !tiers.empty(); }
};

// Binds a criterion spec to an experiment, computing covariance caches.
// Thresholds are taken from the spec when given; otherwise call
// calibrate_threshold or empirical_threshold before rerandomizing.
BalanceCriterion bind_criterion(const CriterionSpec& spec, const ClusterExperiment& exp);

// Imbalance statistic of an assignment under a non-tiered criterion:
// e1 e0 M d' cov_f^-1 d for the Mahalanobis kind, M d' A d otherwise.
double balance_statistic(const BalanceCriterion& crit, const ClusterExperiment& exp,
                         const std::vector<int>& z);
// Per-tier Mahalanobis statistics for a tiered criterion.
Vec tier_statistics(const BalanceCriterion& crit, const ClusterExperiment& exp,
                    const std::vector<int>& z);
// True when the assignment satisfies every (sub)criterion, ties accepted.
bool accepts(const BalanceCriterion& crit, const ClusterExperiment& exp,
             const std::vector<int>& z);

// Threshold of the alpha-quantile of the statistic's asymptotic law.
// Mahalanobis: the chi-square quantile. Quadratic forms: the quantile of
// sum_k lambda_k eta_k^2, with lambda the eigenvalues of V^1/2 A V^1/2,
// located on a seeded Monte Carlo CDF estimate (relative tolerance 1e-2 on
// alpha at the default draw count). Tiered criteria calibrate each tier from
// its own rate.
void calibrate_threshold(BalanceCriterion& crit, double alpha, int m1, Rng& rng,
                         long mc_draws = 2000000);

// Quantile of sum_k lambda_k eta_k^2 at alpha for the quadratic form with
// matrix a under imbalance covariance v.
double quadratic_form_threshold(const Matrix& a, const Matrix& v, double alpha, Rng& rng,
                                long mc_draws = 2000000);

// Threshold from the empirical alpha-quantile of the statistic over `draws`
// complete randomizations (the small-sample alternative to asymptotic
// calibration).
void empirical_threshold(BalanceCriterion& crit, const ClusterExperiment& exp, int m1,
                         double alpha, long draws, Rng& rng);

struct DesignSpec {
  BalanceCriterion criterion;
  int m1 = 0;
  long max_draws = 1000000;
};

struct RerandomizeResult {
  Assignment assignment;
  long draws_used = 0;
};

// Redraws complete randomizations until the criterion accepts. Throws
// NumericError reporting the best statistic seen if max_draws is exhausted.
RerandomizeResult rerandomize(const ClusterExperiment& exp, const DesignSpec& spec, Rng& rng);

// Optimal diagonal weights for the weighted Euclidean criterion:
// w_k proportional to (v_taus' v_ss^-1 e_k)^2, normalized to unit product.
// Every coordinate of v_taus' v_ss^-1 must be non-zero.
Vec optimal_weights(const Vec& v_taus, const Matrix& v_ss);

// Per-tier acceptance rates minimizing the leading variance term subject to
// prod_l alpha_l = alpha. Throws NumericError when no feasible solution with
// all rates below one exists.
Vec optimal_tier_rates(const Vec& r2_tiers, const std::vector<int>& k_l, double alpha);

}  // namespace clusterre
