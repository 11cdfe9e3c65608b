#pragma once

#include <string>
#include <vector>

#include "clusterre/fpstats.hpp"
#include "clusterre/linalg.hpp"

namespace clusterre {

enum class EstimatorKind { Ht, Haj, HtAdj, HajAdj };
enum class SeFlavor { Hw, Lz, Improved };

std::string to_string(EstimatorKind kind);
std::string to_string(SeFlavor flavor);

// Horvitz-Thompson estimator: difference of arm means of scaled cluster
// totals. Exactly unbiased under complete randomization.
double tau_ht(const ClusterExperiment& exp, const std::vector<int>& z);

// Hajek estimator: difference of arm-wise unit-level means.
double tau_haj(const ClusterExperiment& exp, const std::vector<int>& z);

struct RegressionFit {
  Matrix design;                        // n x p
  std::vector<std::string> names;      // column names
  Vec beta;
  Vec residuals;
  Matrix xtx_inv;
  int treatment_col = 1;               // index of the treatment coefficient
};

// Least squares of `response` on (1, z, covariates, z * covariates). The
// covariates are re-centered here (difference from their mean) so that the
// treatment coefficient targets the average effect. `z` has one entry per
// row. Throws on rank deficiency, naming the offending column.
RegressionFit fit_ols_interacted(const Vec& response, const std::vector<int>& z,
                                 const Matrix& covariates,
                                 const std::vector<std::string>& covariate_names = {});

// Heteroskedasticity-robust coefficient covariance, HC0 by default:
// (X'X)^-1 (sum_i x_i x_i' e_i^2) (X'X)^-1. `small_sample` applies the
// n/(n-p) HC1 factor.
Matrix sandwich_hw(const RegressionFit& fit, bool small_sample = false);

// Cluster-robust coefficient covariance, CR0 by default:
// (X'X)^-1 (sum_g g_g g_g') (X'X)^-1 with g_g = sum_{i in g} x_i e_i.
// `small_sample` applies the G/(G-1) * (n-1)/(n-p) CR1 factor.
Matrix sandwich_lz(const RegressionFit& fit, const std::vector<int>& cluster_ids,
                   bool small_sample = false);

struct EstimateReport {
  double tau_hat = 0.0;
  double variance_hat = 0.0;  // variance of tau_hat itself
  SeFlavor se_flavor = SeFlavor::Hw;
  EstimatorKind estimator = EstimatorKind::Ht;
  RegressionFit fit;
};

struct EstimateOptions {
  std::vector<int> analysis_columns;  // columns of exp.x / exp.c used by *_adj
  bool small_sample = false;          // HC1/CR1 instead of HC0/CR0
};

// Point estimate plus the matching robust variance: HW for the cluster-level
// regressions (HT and HT-adjusted), LZ for the individual-level ones (Hajek
// and Hajek-adjusted). Unadjusted estimators are computed through the
// intercept+treatment regression they coincide with.
EstimateReport estimate(const ClusterExperiment& exp, const std::vector<int>& z,
                        EstimatorKind kind, const EstimateOptions& opts = {});

}  // namespace clusterre
