#pragma once

#include <utility>
#include <vector>

#include "clusterre/design.hpp"
#include "clusterre/estimate.hpp"
#include "clusterre/fpstats.hpp"
#include "clusterre/linalg.hpp"
#include "clusterre/rng.hpp"

namespace clusterre {

// One standard normal restricted to [lo, hi] by inverse-CDF sampling.
double truncated_standard_normal(double lo, double hi, Rng& rng);

// Draws of a K-dimensional standard normal eta conditioned on
// eta' A eta <= a. When A is the identity the draw is exact: uniform sphere
// direction times a truncated chi radius. Otherwise a coordinate-wise Gibbs
// sampler with truncated-normal conditionals is used (burn-in 1000,
// thinning 1); each conditional is the normal restricted to the interval cut
// by the ellipsoid slice. Returns count x K.
Matrix sample_constrained_gaussian(const Matrix& a_mat, double a, int count, Rng& rng);

// First coordinate of a standard normal vector conditioned on its squared
// norm being at most a.
Vec sample_L(int k, double a, int count, Rng& rng);

// The convolution law V^1/2 {(1-R^2)^1/2 eps + R mu' eta | eta' A eta <= a}
// with eps standard normal independent of the constrained eta.
struct AsymptoticLaw {
  double variance = 1.0;  // V
  double r2 = 0.0;        // R^2 in [0, 1]
  Vec mu;                 // unit vector (checked to 1e-10)
  Matrix a_mat;           // constraint matrix, SPD
  double a = 0.0;         // threshold, > 0
};

AsymptoticLaw make_law(double variance, double r2, Vec mu, Matrix a_mat, double a);

Vec sample_law(const AsymptoticLaw& law, int count, Rng& rng);

// Empirical quantile(s) from mc_size draws; deterministic given the seed and
// monotone in zeta (all quantiles are read off one sorted sample).
// mc_size below 10^4 is rejected.
double law_quantile(const AsymptoticLaw& law, double zeta, int mc_size, Rng& rng);
Vec law_quantiles(const AsymptoticLaw& law, const Vec& zetas, int mc_size, Rng& rng);

// Plug-in estimates behind the improved intervals: the variance of
// sqrt(M) (tau_hat - tau) and the squared multiple correlation of the
// adjusted estimator with the design-stage imbalance, estimated from
// arm-wise cluster moments. Out-of-range plug-ins are clipped into the
// parameter space and counted.
struct ImprovedEstimates {
  double v_adj = 0.0;    // floored at zero
  double r2_adj = 0.0;   // clipped to [0, 1]
  Vec mu_hat;            // unit vector; xi_1 when undefined
  int clip_events = 0;
  double arm1_var = 0.0;       // e1^-1 weighted arm variance component
  double arm0_var = 0.0;
  double diff_projection = 0.0;  // conditional-variance subtraction
  double r2_numerator = 0.0;
};

// Hajek flavor: residuals come from the unit-level interacted fit of the
// observed outcomes on the analysis covariates (empty analysis set =
// unadjusted estimator); the design-stage imbalance is measured through the
// scaled cluster totals of the design columns of x.
ImprovedEstimates improved_variance_haj(const ClusterExperiment& exp, const std::vector<int>& z,
                                        const std::vector<int>& analysis_cols,
                                        const std::vector<int>& design_cols);

// Horvitz-Thompson flavor: cluster-level fit of the scaled outcome totals,
// design-stage imbalance through the design columns of c.
ImprovedEstimates improved_variance_ht(const ClusterExperiment& exp, const std::vector<int>& z,
                                       const std::vector<int>& analysis_cols,
                                       const std::vector<int>& design_cols);

struct IntervalEstimate {
  double lo = 0.0;
  double hi = 0.0;
};

// Wald interval from the report's robust variance.
IntervalEstimate normal_interval(const EstimateReport& report, double level);

// Interval from the quantiles of the estimated convolution law. For a
// Mahalanobis criterion the law uses (xi_1, identity); for quadratic-form
// criteria it uses (mu_hat, V^1/2 A V^1/2) with V the imbalance covariance
// implied by the criterion's covariates.
IntervalEstimate improved_interval(const EstimateReport& report, const ImprovedEstimates& ie,
                                   const Matrix& constraint, double a, int m, double level,
                                   int mc_size, Rng& rng);

// Constraint matrix of the truncation event for a bound criterion:
// identity for Mahalanobis, V^1/2 A V^1/2 otherwise.
Matrix constraint_matrix(const BalanceCriterion& crit, int m1);

IntervalEstimate improved_interval_for(const BalanceCriterion& crit, int m1,
                                       const EstimateReport& report,
                                       const ImprovedEstimates& ie, double level, int mc_size,
                                       Rng& rng);

}  // namespace clusterre
