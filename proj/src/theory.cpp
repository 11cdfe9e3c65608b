#include "clusterre/theory.hpp"

#include <cmath>

#include "clusterre/errors.hpp"

namespace clusterre {

double p_k(int k) {
  if (k < 1) throw ConfigError("p_k: dimension must be >= 1");
  // Log form keeps this stable for large K.
  double log_ball = std::log(2.0) + 0.5 * k * std::log(M_PI) - std::log(static_cast<double>(k)) -
                    std::lgamma(0.5 * k);
  return 2.0 * M_PI / (k + 2) * std::exp(-2.0 * log_ball / k);
}

double nu_factor(const Vec& v_taus, const Matrix& v_ss, const Matrix& a) {
  int k = static_cast<int>(v_taus.size());
  if (v_ss.rows() != k || a.rows() != k || a.cols() != k)
    throw ConfigError("nu_factor: shape mismatch");
  Matrix lv = cholesky(v_ss, "imbalance covariance");
  Vec b = chol_solve(lv, v_taus);  // v_ss^-1 v_staus
  double denom = dot(v_taus, b);
  if (!(denom > 0.0))
    throw NumericError("nu_factor: the estimator is uncorrelated with the imbalance (R^2 = 0)");
  Matrix la = cholesky(a, "criterion matrix");
  double num = dot(b, chol_solve(la, b));
  double log_det_a = 0.0, log_det_v = 0.0;
  for (int i = 0; i < k; ++i) {
    log_det_a += 2.0 * std::log(la(i, i));
    log_det_v += 2.0 * std::log(lv(i, i));
  }
  return num * std::exp((log_det_a + log_det_v) / k) / denom;
}

double orthogonal_optimal_expansion(const Vec& r2_k, double alpha) {
  int k = static_cast<int>(r2_k.size());
  if (k < 1) throw ConfigError("orthogonal_optimal_expansion: empty R^2 vector");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("orthogonal_optimal_expansion: alpha must lie in (0, 1)");
  double log_prod = 0.0;
  for (double r2 : r2_k) {
    if (!(r2 > 0.0))
      throw NumericError("orthogonal_optimal_expansion: every per-covariate R^2 must be positive");
    log_prod += std::log(r2);
  }
  return k * std::exp(log_prod / k) * p_k(k) * std::pow(alpha, 2.0 / k);
}

double tier_expansion(const Vec& r2_tiers, const std::vector<int>& k_l, const Vec& alpha_l) {
  size_t nl = r2_tiers.size();
  if (k_l.size() != nl || alpha_l.size() != nl)
    throw ConfigError("tier_expansion: shape mismatch");
  double s = 0.0;
  for (size_t l = 0; l < nl; ++l) {
    if (!(alpha_l[l] > 0.0 && alpha_l[l] < 1.0))
      throw ConfigError("tier_expansion: tier rates must lie in (0, 1)");
    s += r2_tiers[l] * p_k(k_l[l]) * std::pow(alpha_l[l], 2.0 / k_l[l]);
  }
  return s;
}

namespace {

// Shared assembly of the joint CLT moments from the per-cluster statistics
// a1, a0 (treated / control potential values) and the criterion covariates.
PopulationMoments assemble_moments(const Vec& a1, const Vec& a0, const Matrix& s, double e1) {
  if (!(e1 > 0.0 && e1 < 1.0)) throw ConfigError("treated fraction must lie in (0, 1)");
  double e0 = 1.0 - e1;
  PopulationMoments out;
  Vec diff(a1.size());
  for (size_t i = 0; i < a1.size(); ++i) diff[i] = a1[i] - a0[i];
  out.v_tautau = finite_pop_var(a1) / e1 + finite_pop_var(a0) / e0 - finite_pop_var(diff);
  Vec c1 = finite_pop_cov(s, a1);
  Vec c0 = finite_pop_cov(s, a0);
  int k = s.cols();
  out.v_taus.resize(k);
  for (int j = 0; j < k; ++j) out.v_taus[j] = c1[j] / e1 + c0[j] / e0;
  out.v_ss = (1.0 / (e1 * e0)) * finite_pop_cov(s);

  Matrix lv = cholesky(out.v_ss, "imbalance covariance");
  Vec b = chol_solve(lv, out.v_taus);
  out.r2_quadform = dot(out.v_taus, b) / out.v_tautau;

  // Residual characterization: e1 e0 V (1 - R^2) equals the variance of the
  // residual from projecting e1 a0 + e0 a1 onto the covariates.
  Vec mix(a1.size());
  for (size_t i = 0; i < a1.size(); ++i) mix[i] = e1 * a0[i] + e0 * a1[i];
  Vec cm = finite_pop_cov(s, mix);
  Matrix ls = cholesky(finite_pop_cov(s), "covariate covariance");
  double proj = dot(cm, chol_solve(ls, cm));
  double resid_var = finite_pop_var(mix) - proj;
  out.r2_regression = 1.0 - resid_var / (e1 * e0 * out.v_tautau);
  return out;
}

Vec cluster_totals_of(const ClusterExperiment& exp, const Vec& units) {
  return scaled_cluster_totals(exp, units);
}

// Population OLS coefficients of values (mean removed) on centered columns.
Vec population_ols(const Matrix& cols, const Vec& values) {
  int n = cols.rows();
  int k = cols.cols();
  Matrix gram(k, k);
  Vec rhs(k, 0.0);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += values[i];
  mean /= n;
  for (int i = 0; i < n; ++i) {
    const double* row = cols.row_ptr(i);
    double v = values[i] - mean;
    for (int a = 0; a < k; ++a) {
      rhs[a] += row[a] * v;
      for (int b = a; b < k; ++b) gram(a, b) += row[a] * row[b];
    }
  }
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < a; ++b) gram(a, b) = gram(b, a);
  return chol_solve(cholesky(gram, "analysis covariates"), rhs);
}

void require_potentials(const ClusterExperiment& exp) {
  if (!exp.has_potential_outcomes())
    throw NumericError("oracle-mode computation requires potential outcomes");
}

}  // namespace

PopulationMoments ht_population_moments(const ClusterExperiment& exp, const Matrix& covariates,
                                        double e1) {
  require_potentials(exp);
  Vec y1 = cluster_totals_of(exp, exp.y_pot[1]);
  Vec y0 = cluster_totals_of(exp, exp.y_pot[0]);
  return assemble_moments(y1, y0, covariates, e1);
}

PopulationMoments haj_population_moments(const ClusterExperiment& exp, const Matrix& covariates,
                                         double e1) {
  require_potentials(exp);
  int m = exp.num_clusters();
  int n = exp.num_units();
  Vec w = normalized_sizes(exp);
  Vec eps1 = cluster_totals_of(exp, exp.y_pot[1]);
  Vec eps0 = cluster_totals_of(exp, exp.y_pot[0]);
  double ybar1 = 0.0, ybar0 = 0.0;
  for (int j = 0; j < n; ++j) {
    ybar1 += exp.y_pot[1][j];
    ybar0 += exp.y_pot[0][j];
  }
  ybar1 /= n;
  ybar0 /= n;
  for (int i = 0; i < m; ++i) {
    eps1[i] -= w[i] * ybar1;
    eps0[i] -= w[i] * ybar0;
  }
  return assemble_moments(eps1, eps0, covariates, e1);
}

PopulationMoments ht_adjusted_population_moments(const ClusterExperiment& exp,
                                                 const Matrix& covariates,
                                                 const Matrix& analysis_cluster, double e1) {
  require_potentials(exp);
  Vec y1 = cluster_totals_of(exp, exp.y_pot[1]);
  Vec y0 = cluster_totals_of(exp, exp.y_pot[0]);
  if (!analysis_cluster.empty()) {
    Vec b1 = population_ols(analysis_cluster, y1);
    Vec b0 = population_ols(analysis_cluster, y0);
    for (int i = 0; i < analysis_cluster.rows(); ++i) {
      const double* row = analysis_cluster.row_ptr(i);
      for (int k = 0; k < analysis_cluster.cols(); ++k) {
        y1[i] -= row[k] * b1[k];
        y0[i] -= row[k] * b0[k];
      }
    }
  }
  return assemble_moments(y1, y0, covariates, e1);
}

PopulationMoments haj_adjusted_population_moments(const ClusterExperiment& exp,
                                                  const Matrix& covariates,
                                                  const Matrix& analysis_units, double e1) {
  require_potentials(exp);
  int n = exp.num_units();
  std::array<Vec, 2> adj;
  for (int z = 0; z < 2; ++z) {
    // eps_ij(z) = Y_ij(z) - Ybar(z) minus the covariate fit; its scaled
    // cluster total is the adjusted per-cluster statistic.
    Vec eps = exp.y_pot[z];
    double ybar = 0.0;
    for (int j = 0; j < n; ++j) ybar += eps[j];
    ybar /= n;
    for (int j = 0; j < n; ++j) eps[j] -= ybar;
    if (!analysis_units.empty()) {
      Vec b = population_ols(analysis_units, exp.y_pot[z]);
      for (int j = 0; j < n; ++j) {
        const double* row = analysis_units.row_ptr(j);
        for (int k = 0; k < analysis_units.cols(); ++k) eps[j] -= row[k] * b[k];
      }
    }
    adj[z] = scaled_cluster_totals(exp, eps);
  }
  return assemble_moments(adj[1], adj[0], covariates, e1);
}

std::vector<EfficiencySummary> compare_designs(const ClusterExperiment& exp,
                                               const std::vector<CriterionSpec>& specs,
                                               double alpha, double e1) {
  require_potentials(exp);
  std::vector<EfficiencySummary> out;
  for (const auto& spec_in : specs) {
    CriterionSpec spec = spec_in;
    if (spec.kind == CriterionKind::WeightedEuclidean && spec.weights.empty()) {
      // Fill the oracle-optimal weights from the matching moments.
      BalanceCriterion probe;
      {
        CriterionSpec p = spec;
        p.kind = CriterionKind::Mahalanobis;
        probe = bind_criterion(p, exp);
      }
      PopulationMoments m0 = spec.level == CovariateLevel::Cluster
                                 ? ht_population_moments(exp, probe.data, e1)
                                 : haj_population_moments(exp, probe.data, e1);
      spec.weights = optimal_weights(m0.v_taus, m0.v_ss);
    }
    BalanceCriterion crit = bind_criterion(spec, exp);
    PopulationMoments pm = crit.level == CovariateLevel::Cluster
                               ? ht_population_moments(exp, crit.data, e1)
                               : haj_population_moments(exp, crit.data, e1);
    if (std::abs(pm.r2_quadform - pm.r2_regression) > 1e-8)
      throw NumericError("R^2 cross-check failed: quadratic-form and regression routes disagree");

    EfficiencySummary row;
    row.name = to_string(spec.level) + "/" + to_string(spec.kind);
    row.v_tautau = pm.v_tautau;
    row.r2 = pm.r2_quadform;
    int k = crit.dimension();

    if (crit.tiered()) {
      std::vector<int> k_l;
      Vec r2_l, rates;
      for (const auto& tier : crit.tiers) {
        k_l.push_back(static_cast<int>(tier.columns.size()));
        Matrix s = crit.data.columns(tier.columns);
        PopulationMoments tm = crit.level == CovariateLevel::Cluster
                                   ? ht_population_moments(exp, s, e1)
                                   : haj_population_moments(exp, s, e1);
        r2_l.push_back(tm.r2_quadform);
        rates.push_back(std::isnan(tier.target_rate) ? std::pow(alpha, 1.0 / crit.tiers.size())
                                                     : tier.target_rate);
      }
      row.per_tier_r2 = r2_l;
      row.nu = std::numeric_limits<double>::quiet_NaN();
      row.leading_variance =
          pm.v_tautau * ((1.0 - pm.r2_quadform) + tier_expansion(r2_l, k_l, rates));
      row.name = to_string(spec.level) + "/tiers";
      out.push_back(std::move(row));
      continue;
    }

    Matrix a = crit.kind == CriterionKind::Mahalanobis ? spd_inverse(pm.v_ss) : crit.a_matrix;
    row.nu = crit.kind == CriterionKind::Mahalanobis ? 1.0 : nu_factor(pm.v_taus, pm.v_ss, a);
    row.leading_variance =
        pm.v_tautau *
        ((1.0 - pm.r2_quadform) +
         pm.r2_quadform * p_k(k) * row.nu * std::pow(alpha, 2.0 / k));

    // Per-covariate R^2 after orthogonalization, for the weighting theory.
    OrthoTransform ortho = orthogonalize_columns(crit.data);
    Matrix od = apply_ortho(ortho, crit.data);
    PopulationMoments om = crit.level == CovariateLevel::Cluster
                               ? ht_population_moments(exp, od, e1)
                               : haj_population_moments(exp, od, e1);
    row.per_covariate_r2.resize(k);
    for (int j = 0; j < k; ++j)
      row.per_covariate_r2[j] =
          om.v_taus[j] * om.v_taus[j] / (om.v_tautau * om.v_ss(j, j));
    out.push_back(std::move(row));
  }
  return out;
}

ResidualComparison cluster_covariate_dominance(const ClusterExperiment& exp, double e1) {
  require_potentials(exp);
  Matrix c = size_and_scaled_totals(exp);
  Matrix xt = scaled_cluster_totals(exp, exp.x);
  PopulationMoments ht = ht_population_moments(exp, c, e1);
  PopulationMoments haj = haj_population_moments(exp, xt, e1);
  ResidualComparison out;
  out.lhs_haj = haj.v_tautau * (1.0 - haj.r2_regression);
  out.rhs_ht = ht.v_tautau * (1.0 - ht.r2_regression);
  out.holds = out.lhs_haj >= out.rhs_ht - 1e-9 * std::abs(out.rhs_ht);
  return out;
}

}  // namespace clusterre
