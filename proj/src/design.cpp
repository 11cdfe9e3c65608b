#include "clusterre/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clusterre/errors.hpp"
#include "clusterre/special.hpp"
#include "clusterre/theory.hpp"

namespace clusterre {

std::string to_string(CovariateLevel level) {
  return level == CovariateLevel::Cluster ? "cluster" : "individual";
}

std::string to_string(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::Mahalanobis: return "mahalanobis";
    case CriterionKind::WeightedEuclidean: return "weighted_euclidean";
    default: return "general_quadratic";
  }
}

int Assignment::m1() const {
  return static_cast<int>(std::count(z.begin(), z.end(), 1));
}

Assignment draw_complete(int m, int m1, Rng& rng) {
  if (!(m1 > 0 && m1 < m))
    throw ConfigError("draw_complete: treated count must satisfy 0 < M1 < M");
  // Partial Fisher-Yates over cluster indices; the first m1 positions become
  // the treatment arm.
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  Assignment a;
  a.z.assign(m, 0);
  for (int i = 0; i < m1; ++i) {
    int j = rng.uniform_int(i, m - 1);
    std::swap(idx[i], idx[j]);
    a.z[idx[i]] = 1;
  }
  return a;
}

namespace {

// Arm-mean difference of per-cluster rows. HT form divides by cluster counts;
// Hajek form divides by realized unit counts.
Vec arm_diff(const Matrix& rows, const std::vector<int>& z, const std::vector<int>& sizes,
             bool hajek) {
  int m = rows.rows();
  if (static_cast<int>(z.size()) != m) throw ConfigError("assignment length != clusters");
  int k = rows.cols();
  Vec s1(k, 0.0), s0(k, 0.0);
  double d1 = 0.0, d0 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = rows.row_ptr(i);
    double w = hajek ? static_cast<double>(sizes[i]) : 1.0;
    if (z[i] == 1) {
      d1 += w;
      for (int c = 0; c < k; ++c) s1[c] += row[c];
    } else {
      d0 += w;
      for (int c = 0; c < k; ++c) s0[c] += row[c];
    }
  }
  if (!(d1 > 0.0) || !(d0 > 0.0))
    throw NumericError("covariate_diff: an arm has no units");
  Vec d(k);
  for (int c = 0; c < k; ++c) d[c] = s1[c] / d1 - s0[c] / d0;
  return d;
}

}  // namespace

Vec covariate_diff(const ClusterExperiment& exp, const std::vector<int>& z,
                   CovariateLevel level) {
  if (level == CovariateLevel::Cluster) {
    if (exp.c.empty()) throw ConfigError("covariate_diff: no cluster covariates");
    return arm_diff(exp.c, z, exp.sizes, false);
  }
  if (exp.x.empty()) throw ConfigError("covariate_diff: no individual covariates");
  // Per-cluster totals of the individual covariates; arm sums divided by the
  // realized N1 / N0.
  int m = exp.num_clusters();
  Matrix totals(m, exp.x.cols());
  for (int i = 0; i < m; ++i)
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j)
      for (int c = 0; c < exp.x.cols(); ++c) totals(i, c) += exp.x(j, c);
  return arm_diff(totals, z, exp.sizes, true);
}

BalanceCriterion bind_criterion(const CriterionSpec& spec, const ClusterExperiment& exp) {
  BalanceCriterion crit;
  crit.level = spec.level;
  crit.kind = spec.kind;
  crit.threshold = std::isnan(spec.threshold) ? std::numeric_limits<double>::infinity()
                                              : spec.threshold;
  crit.target_rate = spec.target_rate;

  const Matrix& base = spec.level == CovariateLevel::Cluster ? exp.c : exp.x;
  if (base.empty()) throw ConfigError("criterion level has no covariates in the experiment");
  // The balance arithmetic assumes centered covariates.
  for (int k = 0; k < base.cols(); ++k) {
    double mean = 0.0, scale = 0.0;
    for (int i = 0; i < base.rows(); ++i) {
      mean += base(i, k);
      scale = std::max(scale, std::abs(base(i, k)));
    }
    mean /= base.rows();
    if (std::abs(mean) > 1e-6 * std::max(scale, 1e-12))
      throw ConfigError("covariate column " + std::to_string(k) +
                        " is not centered; run center_covariates first");
  }
  crit.columns = spec.columns;
  if (crit.columns.empty()) {
    crit.columns.resize(base.cols());
    std::iota(crit.columns.begin(), crit.columns.end(), 0);
  }
  for (int c : crit.columns)
    if (c < 0 || c >= base.cols())
      throw ConfigError("criterion column index " + std::to_string(c) + " out of range");

  if (spec.level == CovariateLevel::Cluster) {
    crit.data = exp.c.columns(crit.columns);
  } else {
    Matrix xsel = exp.x.columns(crit.columns);
    crit.data = scaled_cluster_totals(exp, xsel);
    int m = exp.num_clusters();
    crit.totals = Matrix(m, xsel.cols());
    for (int i = 0; i < m; ++i)
      for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j)
        for (int c = 0; c < xsel.cols(); ++c) crit.totals(i, c) += xsel(j, c);
    crit.sizes = exp.sizes;
  }
  int k = crit.dimension();

  if (!spec.tier_columns.empty()) {
    if (spec.kind != CriterionKind::Mahalanobis)
      throw ConfigError("tiers are defined for the Mahalanobis criterion only");
    // Tier columns must partition 1..K.
    std::vector<int> seen(k, 0);
    for (const auto& cols : spec.tier_columns)
      for (int c : cols) {
        if (c < 0 || c >= k) throw ConfigError("tier column index out of range");
        if (seen[c]++) throw ConfigError("tier columns overlap");
      }
    if (std::accumulate(seen.begin(), seen.end(), 0) != k)
      throw ConfigError("tier columns must partition the covariate set");
    for (size_t l = 0; l < spec.tier_columns.size(); ++l) {
      CriterionTier tier;
      tier.columns = spec.tier_columns[l];
      if (l < spec.tier_thresholds.size()) tier.threshold = spec.tier_thresholds[l];
      if (l < spec.tier_rates.size()) tier.target_rate = spec.tier_rates[l];
      Matrix s = crit.data.columns(tier.columns);
      tier.cov_inv = spd_inverse(finite_pop_cov(s), "tier covariate covariance");
      crit.tiers.push_back(std::move(tier));
    }
    return crit;
  }

  switch (spec.kind) {
    case CriterionKind::Mahalanobis:
      try {
        crit.cov_inv = spd_inverse(finite_pop_cov(crit.data), "covariate covariance");
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) +
                           "; orthogonalize the covariates or drop the dependent column");
      }
      break;
    case CriterionKind::WeightedEuclidean: {
      if (static_cast<int>(spec.weights.size()) != k)
        throw ConfigError("weighted criterion needs one positive weight per covariate");
      for (double w : spec.weights)
        if (!(w > 0.0)) throw ConfigError("weighted criterion weights must be positive");
      crit.a_matrix = Matrix::diagonal(spec.weights);
      break;
    }
    case CriterionKind::GeneralQuadratic: {
      if (spec.matrix.rows() != k || spec.matrix.cols() != k)
        throw ConfigError("quadratic criterion matrix must be K x K");
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < i; ++j)
          if (std::abs(spec.matrix(i, j) - spec.matrix(j, i)) >
              1e-8 * (1.0 + std::abs(spec.matrix(i, j))))
            throw ConfigError("quadratic criterion matrix must be symmetric");
      cholesky(spec.matrix, "quadratic criterion matrix");  // SPD check
      crit.a_matrix = spec.matrix;
      break;
    }
  }
  return crit;
}

namespace {

Vec criterion_diff(const BalanceCriterion& crit, const std::vector<int>& z) {
  bool hajek = crit.level == CovariateLevel::Individual;
  return arm_diff(hajek ? crit.totals : crit.data, z, crit.sizes, hajek);
}

double e1e0(const std::vector<int>& z) {
  int m = static_cast<int>(z.size());
  int m1 = static_cast<int>(std::count(z.begin(), z.end(), 1));
  return (static_cast<double>(m1) / m) * (static_cast<double>(m - m1) / m);
}

}  // namespace

double balance_statistic(const BalanceCriterion& crit, const ClusterExperiment& exp,
                         const std::vector<int>& z) {
  if (crit.tiered())
    throw ConfigError("balance_statistic: tiered criterion, use tier_statistics");
  Vec d = criterion_diff(crit, z);
  double m = static_cast<double>(exp.num_clusters());
  if (crit.kind == CriterionKind::Mahalanobis)
    return e1e0(z) * m * quad_form(crit.cov_inv, d);
  return m * quad_form(crit.a_matrix, d);
}

Vec tier_statistics(const BalanceCriterion& crit, const ClusterExperiment& exp,
                    const std::vector<int>& z) {
  if (!crit.tiered()) throw ConfigError("tier_statistics: criterion has no tiers");
  Vec d = criterion_diff(crit, z);
  double m = static_cast<double>(exp.num_clusters());
  double e = e1e0(z);
  Vec stats;
  stats.reserve(crit.tiers.size());
  for (const auto& tier : crit.tiers) {
    Vec dl(tier.columns.size());
    for (size_t i = 0; i < tier.columns.size(); ++i) dl[i] = d[tier.columns[i]];
    stats.push_back(e * m * quad_form(tier.cov_inv, dl));
  }
  return stats;
}

bool accepts(const BalanceCriterion& crit, const ClusterExperiment& exp,
             const std::vector<int>& z) {
  if (crit.tiered()) {
    Vec stats = tier_statistics(crit, exp, z);
    for (size_t l = 0; l < stats.size(); ++l)
      if (stats[l] > crit.tiers[l].threshold) return false;
    return true;
  }
  return balance_statistic(crit, exp, z) <= crit.threshold;
}

double quadratic_form_threshold(const Matrix& a, const Matrix& v, double alpha, Rng& rng,
                                long mc_draws) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("acceptance rate must lie in (0, 1)");
  Matrix vroot = sym_sqrt(v);
  EigenSym eig = eigen_sym(vroot * a * vroot);
  for (double lam : eig.values)
    if (!(lam > 0.0)) throw NumericError("quadratic criterion has a non-positive eigenvalue");
  int k = static_cast<int>(eig.values.size());
  // Seeded MC estimate of the CDF of sum_k lambda_k eta_k^2; the order
  // statistic at rank floor(alpha * n) inverts it within one draw.
  std::vector<double> sample(mc_draws);
  for (long s = 0; s < mc_draws; ++s) {
    double q = 0.0;
    for (int j = 0; j < k; ++j) {
      double g = rng.normal();
      q += eig.values[j] * g * g;
    }
    sample[s] = q;
  }
  long rank = std::max<long>(1, static_cast<long>(alpha * mc_draws)) - 1;
  std::nth_element(sample.begin(), sample.begin() + rank, sample.end());
  return sample[rank];
}

void calibrate_threshold(BalanceCriterion& crit, double alpha, int m1, Rng& rng,
                         long mc_draws) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("acceptance rate must lie in (0, 1)");
  if (crit.tiered()) {
    for (auto& tier : crit.tiers) {
      double rate = std::isnan(tier.target_rate) ? alpha : tier.target_rate;
      tier.threshold = chisq_quantile(rate, static_cast<int>(tier.columns.size()));
    }
    crit.target_rate = alpha;
    return;
  }
  if (crit.kind == CriterionKind::Mahalanobis) {
    crit.threshold = chisq_quantile(alpha, crit.dimension());
  } else {
    int m = crit.data.rows();
    double e1 = static_cast<double>(m1) / m;
    Matrix v = (1.0 / (e1 * (1.0 - e1))) * finite_pop_cov(crit.data);
    crit.threshold = quadratic_form_threshold(crit.a_matrix, v, alpha, rng, mc_draws);
  }
  crit.target_rate = alpha;
}

void empirical_threshold(BalanceCriterion& crit, const ClusterExperiment& exp, int m1,
                         double alpha, long draws, Rng& rng) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("acceptance rate must lie in (0, 1)");
  if (draws < 10) throw ConfigError("empirical_threshold: too few draws");
  int m = exp.num_clusters();
  long rank = std::max<long>(1, static_cast<long>(alpha * draws)) - 1;
  if (crit.tiered()) {
    std::vector<std::vector<double>> stats(crit.tiers.size());
    for (auto& s : stats) s.reserve(draws);
    for (long d = 0; d < draws; ++d) {
      Assignment a = draw_complete(m, m1, rng);
      Vec ts = tier_statistics(crit, exp, a.z);
      for (size_t l = 0; l < ts.size(); ++l) stats[l].push_back(ts[l]);
    }
    for (size_t l = 0; l < crit.tiers.size(); ++l) {
      double rate = std::isnan(crit.tiers[l].target_rate) ? alpha : crit.tiers[l].target_rate;
      long r = std::max<long>(1, static_cast<long>(rate * draws)) - 1;
      std::nth_element(stats[l].begin(), stats[l].begin() + r, stats[l].end());
      crit.tiers[l].threshold = stats[l][r];
    }
  } else {
    std::vector<double> stats;
    stats.reserve(draws);
    for (long d = 0; d < draws; ++d) {
      Assignment a = draw_complete(m, m1, rng);
      stats.push_back(balance_statistic(crit, exp, a.z));
    }
    std::nth_element(stats.begin(), stats.begin() + rank, stats.end());
    crit.threshold = stats[rank];
  }
  crit.target_rate = alpha;
}

RerandomizeResult rerandomize(const ClusterExperiment& exp, const DesignSpec& spec, Rng& rng) {
  int m = exp.num_clusters();
  if (spec.max_draws < 1) throw ConfigError("rerandomize: max_draws must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  for (long draw = 1; draw <= spec.max_draws; ++draw) {
    Assignment a = draw_complete(m, spec.m1, rng);
    if (accepts(spec.criterion, exp, a.z)) return {std::move(a), draw};
    if (spec.criterion.tiered()) {
      // Track the worst per-tier exceedance ratio of the best draw seen.
      Vec ts = tier_statistics(spec.criterion, exp, a.z);
      double worst = 0.0;
      for (size_t l = 0; l < ts.size(); ++l)
        worst = std::max(worst, ts[l] / spec.criterion.tiers[l].threshold);
      best = std::min(best, worst);
    } else {
      best = std::min(best, balance_statistic(spec.criterion, exp, a.z));
    }
  }
  throw NumericError("rerandomize: no acceptable assignment in " +
                     std::to_string(spec.max_draws) + " draws (best statistic seen " +
                     std::to_string(best) + "); raise the threshold or max_draws");
}

Vec optimal_weights(const Vec& v_taus, const Matrix& v_ss) {
  int k = static_cast<int>(v_taus.size());
  if (v_ss.rows() != k || v_ss.cols() != k)
    throw ConfigError("optimal_weights: moment shapes disagree");
  Matrix l = cholesky(v_ss, "imbalance covariance");
  Vec b = chol_solve(l, v_taus);  // v_ss^-1 v_staus
  Vec w(k);
  double log_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (b[i] == 0.0 || !std::isfinite(b[i]))
      throw NumericError(
          "optimal weights are undefined: coordinate " + std::to_string(i) +
          " of the projection coefficient vector is zero (every coordinate must be non-zero)");
    w[i] = b[i] * b[i];
    log_sum += std::log(w[i]);
  }
  // Normalize to unit product; the criterion is scale-invariant anyway.
  double scale = std::exp(-log_sum / k);
  for (double& wi : w) wi *= scale;
  return w;
}

Vec optimal_tier_rates(const Vec& r2_tiers, const std::vector<int>& k_l, double alpha) {
  size_t nl = r2_tiers.size();
  if (k_l.size() != nl) throw ConfigError("optimal_tier_rates: shape mismatch");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("optimal_tier_rates: alpha must lie in (0, 1)");
  if (nl == 1) return {alpha};
  double ksum = 0.0;
  Vec d(nl);
  for (size_t l = 0; l < nl; ++l) {
    if (!(r2_tiers[l] > 0.0))
      throw NumericError("optimal_tier_rates: every tier R^2 must be positive");
    if (k_l[l] < 1) throw ConfigError("optimal_tier_rates: tier sizes must be >= 1");
    d[l] = std::log(r2_tiers[l] * p_k(k_l[l]) / k_l[l]);
    ksum += k_l[l];
  }
  // alpha_l = (c0 R2_l p_{K_l} / K_l)^(-K_l/2); the product constraint is
  // linear in log c0, so the root is explicit.
  double rhs = -std::log(alpha);
  for (size_t l = 0; l < nl; ++l) rhs -= 0.5 * k_l[l] * d[l];
  double t = rhs / (0.5 * ksum);
  Vec rates(nl);
  for (size_t l = 0; l < nl; ++l) {
    rates[l] = std::exp(-0.5 * k_l[l] * (d[l] + t));
    if (!(rates[l] < 1.0))
      throw NumericError(
          "optimal_tier_rates: no feasible allocation keeps every tier rate below one");
  }
  return rates;
}

}  // namespace clusterre
