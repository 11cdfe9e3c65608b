#pragma once

#include <string>
#include <vector>

#include "clusterre/design.hpp"
#include "clusterre/fpstats.hpp"
#include "clusterre/linalg.hpp"

namespace clusterre {

// Dimension constant of the alpha^(2/K) variance-reduction expansion:
// p_K = 2 pi / (K + 2) * {2 pi^(K/2) / (K Gamma(K/2))}^(-2/K).
double p_k(int k);

// Efficiency factor of a quadratic-form criterion with matrix a, given the
// asymptotic moments (v_taus, v_ss) of the estimator/imbalance pair.
// Equals 1 for the Mahalanobis choice a = v_ss^-1 and is invariant to
// rescaling a.
double nu_factor(const Vec& v_taus, const Matrix& v_ss, const Matrix& a);

// Leading variance-correction term of the optimal weighted Euclidean
// criterion with orthogonalized covariates: K (prod R2_k)^(1/K) p_K a^(2/K).
double orthogonal_optimal_expansion(const Vec& r2_k, double alpha);

// Leading variance-correction term of tiered Mahalanobis rerandomization:
// sum_l R2_[l] p_{K_l} alpha_[l]^(2/K_l).
double tier_expansion(const Vec& r2_tiers, const std::vector<int>& k_l, const Vec& alpha_l);

// Population (oracle) moments of an estimator and its covariate-imbalance
// vector, computed from potential outcomes. v_taus and v_ss follow the joint
// CLT of sqrt(M) (tau_hat - tau, imbalance); r2 is the squared multiple
// correlation, computed both as the quadratic form and through the
// residual-variance characterization of the projection.
struct PopulationMoments {
  double v_tautau = 0.0;
  Vec v_taus;
  Matrix v_ss;
  double r2_quadform = 0.0;
  double r2_regression = 0.0;
};

// covariates: the M x K centered cluster-level matrix the criterion uses
// (cluster covariates for the HT pair, scaled cluster totals for the Hajek
// pair). Requires potential outcomes.
PopulationMoments ht_population_moments(const ClusterExperiment& exp, const Matrix& covariates,
                                        double e1);
PopulationMoments haj_population_moments(const ClusterExperiment& exp, const Matrix& covariates,
                                         double e1);

// Adjusted variants: potential outcomes are replaced by their residuals from
// the population least-squares fit on the analysis covariates (cluster-level
// matrix for HT, unit-level matrix for Hajek).
PopulationMoments ht_adjusted_population_moments(const ClusterExperiment& exp,
                                                 const Matrix& covariates,
                                                 const Matrix& analysis_cluster, double e1);
PopulationMoments haj_adjusted_population_moments(const ClusterExperiment& exp,
                                                  const Matrix& covariates,
                                                  const Matrix& analysis_units, double e1);

struct EfficiencySummary {
  std::string name;
  double v_tautau = 0.0;
  double r2 = 0.0;
  double nu = 0.0;
  double leading_variance = 0.0;  // V {(1 - R2) + R2 p_K nu alpha^(2/K)}
  Vec per_covariate_r2;           // orthogonalized per-covariate R2 (Mahalanobis rows)
  Vec per_tier_r2;
};

// Oracle-mode design comparison: one summary per criterion at acceptance
// rate alpha. Requires potential outcomes. The two R^2 routes are
// cross-checked to 1e-8 and a mismatch raises NumericError.
std::vector<EfficiencySummary> compare_designs(const ClusterExperiment& exp,
                                               const std::vector<CriterionSpec>& specs,
                                               double alpha, double e1);

// Residual-variance comparison behind the cluster-covariates-dominate result
// when c_i = (n_i, scaled totals of x): lhs = V_haj (1 - R2_x) and
// rhs = V_ht (1 - R2_c), both from the regression characterization.
struct ResidualComparison {
  double lhs_haj = 0.0;
  double rhs_ht = 0.0;
  bool holds = false;  // lhs >= rhs
};
ResidualComparison cluster_covariate_dominance(const ClusterExperiment& exp, double e1);

}  // namespace clusterre
