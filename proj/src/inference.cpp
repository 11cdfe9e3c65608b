#include "clusterre/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clusterre/errors.hpp"
#include "clusterre/special.hpp"

namespace clusterre {

double truncated_standard_normal(double lo, double hi, Rng& rng) {
  if (!(lo <= hi)) throw NumericError("truncated_standard_normal: empty interval");
  // Work in the left tail where the erfc-based CDF keeps precision.
  if (lo > 0.0) return -truncated_standard_normal(-hi, -lo, rng);
  double plo = normal_cdf(lo);
  double phi = normal_cdf(hi);
  if (!(phi - plo > 1e-15)) return 0.5 * (lo + hi);
  double u = plo + (phi - plo) * rng.uniform();
  u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
  double x = normal_quantile(u);
  return std::min(std::max(x, lo), hi);
}

namespace {

bool is_identity(const Matrix& a) {
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      double want = i == j ? 1.0 : 0.0;
      if (std::abs(a(i, j) - want) > 1e-12) return false;
    }
  return true;
}

// chi^2_k draw conditioned on being <= a. Exact: plain rejection when the
// acceptance mass is workable, a power-envelope rejection for small a
// (density ~ x^(k/2-1) there), inverse CDF as the fallback.
class TruncatedChisq {
 public:
  TruncatedChisq(int k, double a) : k_(k), a_(a), cdf_a_(chisq_cdf(a, k)) {
    if (cdf_a_ >= 0.05)
      mode_ = Mode::Plain;
    else if (std::exp(-0.5 * a) >= 0.05)
      mode_ = Mode::Envelope;
    else
      mode_ = Mode::InverseCdf;
  }

  double draw(Rng& rng) const {
    switch (mode_) {
      case Mode::Plain:
        for (;;) {
          double q = 0.0;
          for (int j = 0; j < k_; ++j) {
            double g = rng.normal();
            q += g * g;
          }
          if (q <= a_) return q;
        }
      case Mode::Envelope:
        // Proposal x = a u^(2/k) has density ~ x^(k/2-1) on [0, a]; accept
        // with probability exp(-x/2).
        for (;;) {
          double x = a_ * std::pow(rng.uniform(), 2.0 / k_);
          if (rng.uniform() <= std::exp(-0.5 * x)) return x;
        }
      default: {
        double u = rng.uniform();
        u = std::min(std::max(u * cdf_a_, 1e-300), cdf_a_);
        return chisq_quantile(u, k_);
      }
    }
  }

 private:
  enum class Mode { Plain, Envelope, InverseCdf };
  int k_;
  double a_;
  double cdf_a_;
  Mode mode_;
};

void radial_samples(int k, double a, int count, Rng& rng, Matrix& out) {
  TruncatedChisq radius(k, a);
  Vec g(k);
  for (int s = 0; s < count; ++s) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (int j = 0; j < k; ++j) {
        g[j] = rng.normal();
        norm2 += g[j] * g[j];
      }
    } while (norm2 == 0.0);
    double r = std::sqrt(radius.draw(rng) / norm2);
    double* row = out.row_ptr(s);
    for (int j = 0; j < k; ++j) row[j] = g[j] * r;
  }
}

void gibbs_samples(const Matrix& a_mat, double a, int count, Rng& rng, Matrix& out) {
  int k = a_mat.rows();
  Vec x(k, 0.0);    // current state, starts at the feasible origin
  Vec s(k, 0.0);    // A x
  double q = 0.0;   // x' A x
  const int burn_in = 1000;
  int sweeps_since_refresh = 0;
  for (int iter = -burn_in; iter < count; ++iter) {
    for (int c = 0; c < k; ++c) {
      double acc = a_mat(c, c);
      double b = s[c] - acc * x[c];
      double others = q - 2.0 * x[c] * s[c] + acc * x[c] * x[c];
      double disc = b * b - acc * (others - a);
      if (disc < 0.0) disc = 0.0;  // feasibility guarantees >= 0 up to rounding
      double root = std::sqrt(disc);
      double lo = (-b - root) / acc;
      double hi = (-b + root) / acc;
      double t = truncated_standard_normal(lo, hi, rng);
      for (int j = 0; j < k; ++j) s[j] += a_mat(j, c) * (t - x[c]);
      q = others + 2.0 * b * t + acc * t * t;
      x[c] = t;
    }
    if (++sweeps_since_refresh == 64) {
      // Rebuild the cached products to stop rounding drift.
      sweeps_since_refresh = 0;
      s = a_mat * x;
      q = dot(x, s);
    }
    if (iter >= 0) out.set_row(iter, x);
  }
}

}  // namespace

Matrix sample_constrained_gaussian(const Matrix& a_mat, double a, int count, Rng& rng) {
  if (!(a > 0.0)) throw NumericError("constrained sampling requires a positive threshold");
  if (a_mat.rows() != a_mat.cols() || a_mat.rows() < 1)
    throw ConfigError("constraint matrix must be square");
  int k = a_mat.rows();
  Matrix out(count, k);
  if (is_identity(a_mat))
    radial_samples(k, a, count, rng, out);
  else
    gibbs_samples(a_mat, a, count, rng, out);
  return out;
}

Vec sample_L(int k, double a, int count, Rng& rng) {
  Matrix eta = sample_constrained_gaussian(Matrix::identity(k), a, count, rng);
  return eta.col(0);
}

AsymptoticLaw make_law(double variance, double r2, Vec mu, Matrix a_mat, double a) {
  AsymptoticLaw law;
  if (!(variance > 0.0)) throw NumericError("law variance must be positive");
  if (r2 < 0.0 || r2 > 1.0) throw NumericError("law R^2 must lie in [0, 1]");
  law.variance = variance;
  law.r2 = r2;
  if (r2 > 0.0) {
    double n = norm2(mu);
    if (!(n > 0.0)) throw NumericError("law direction vector must be non-zero");
    if (std::abs(n - 1.0) > 1e-10)
      for (double& v : mu) v /= n;
    law.mu = std::move(mu);
    law.a_mat = std::move(a_mat);
    if (!(a > 0.0)) throw NumericError("law threshold must be positive");
    law.a = a;
  }
  return law;
}

Vec sample_law(const AsymptoticLaw& law, int count, Rng& rng) {
  double sd_normal = std::sqrt(law.variance * (1.0 - law.r2));
  Vec out(count);
  if (law.r2 == 0.0) {
    for (int i = 0; i < count; ++i) out[i] = sd_normal * rng.normal();
    return out;
  }
  double r_scale = std::sqrt(law.variance * law.r2);
  Matrix eta = sample_constrained_gaussian(law.a_mat, law.a, count, rng);
  for (int i = 0; i < count; ++i) {
    double proj = 0.0;
    const double* row = eta.row_ptr(i);
    for (size_t j = 0; j < law.mu.size(); ++j) proj += law.mu[j] * row[j];
    out[i] = sd_normal * rng.normal() + r_scale * proj;
  }
  return out;
}

Vec law_quantiles(const AsymptoticLaw& law, const Vec& zetas, int mc_size, Rng& rng) {
  if (mc_size < 10000) throw ConfigError("law quantiles need at least 10^4 draws");
  for (double z : zetas)
    if (!(z > 0.0 && z < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
  Vec sample = sample_law(law, mc_size, rng);
  std::sort(sample.begin(), sample.end());
  Vec out(zetas.size());
  for (size_t i = 0; i < zetas.size(); ++i) {
    long idx = static_cast<long>(zetas[i] * mc_size);
    idx = std::min<long>(std::max<long>(idx, 0), mc_size - 1);
    out[i] = sample[idx];
  }
  return out;
}

double law_quantile(const AsymptoticLaw& law, double zeta, int mc_size, Rng& rng) {
  return law_quantiles(law, {zeta}, mc_size, rng)[0];
}

namespace {

struct ArmIndex {
  std::vector<int> arm[2];
  double e1 = 0.0;
};

ArmIndex split_arms(const std::vector<int>& z) {
  ArmIndex idx;
  for (int i = 0; i < static_cast<int>(z.size()); ++i) idx.arm[z[i] == 1 ? 1 : 0].push_back(i);
  for (int zz = 0; zz < 2; ++zz)
    if (idx.arm[zz].size() < 2)
      throw NumericError("arm-wise covariances need at least two clusters per arm");
  idx.e1 = static_cast<double>(idx.arm[1].size()) / z.size();
  return idx;
}

// Sample covariance of columns a against columns b over the given rows,
// divisor (rows - 1).
Matrix subset_cov(const Matrix& a, const Matrix& b, const std::vector<int>& rows) {
  int m = static_cast<int>(rows.size());
  Vec amean(a.cols(), 0.0), bmean(b.cols(), 0.0);
  for (int r : rows) {
    for (int j = 0; j < a.cols(); ++j) amean[j] += a(r, j);
    for (int j = 0; j < b.cols(); ++j) bmean[j] += b(r, j);
  }
  for (double& v : amean) v /= m;
  for (double& v : bmean) v /= m;
  Matrix out(a.cols(), b.cols());
  for (int r : rows)
    for (int p = 0; p < a.cols(); ++p) {
      double ac = a(r, p) - amean[p];
      for (int q = 0; q < b.cols(); ++q) out(p, q) += ac * (b(r, q) - bmean[q]);
    }
  return (1.0 / (m - 1)) * out;
}

Vec subset_cov(const Matrix& a, const Vec& b, const std::vector<int>& rows) {
  Matrix bm(static_cast<int>(b.size()), 1);
  bm.set_col(0, b);
  return subset_cov(a, bm, rows).col(0);
}

double subset_var(const Vec& v, const std::vector<int>& rows) {
  double mean = 0.0;
  for (int r : rows) mean += v[r];
  mean /= rows.size();
  double s = 0.0;
  for (int r : rows) s += (v[r] - mean) * (v[r] - mean);
  return s / (rows.size() - 1);
}

// Columns of b not exactly equal to one already in a, appended to a.
Matrix dedup_union(const Matrix& a, const Matrix& b) {
  if (b.empty()) return a;
  if (a.empty()) return b;
  std::vector<int> keep;
  for (int jb = 0; jb < b.cols(); ++jb) {
    bool dup = false;
    for (int ja = 0; ja < a.cols() && !dup; ++ja) {
      dup = true;
      for (int i = 0; i < a.rows(); ++i)
        if (a(i, ja) != b(i, jb)) {
          dup = false;
          break;
        }
    }
    if (!dup) keep.push_back(jb);
  }
  if (keep.empty()) return a;
  return hcat(a, b.columns(keep));
}

std::vector<int> all_columns(const Matrix& m) {
  std::vector<int> cols(m.cols());
  std::iota(cols.begin(), cols.end(), 0);
  return cols;
}

// Shared core of the two improved-variance estimators, operating on the
// per-cluster residual statistic and the cluster-level covariate matrices.
ImprovedEstimates improved_core(const Vec& resid_stat, const Matrix& design_data,
                                const Matrix& condition_data, const ArmIndex& arms) {
  double e1 = arms.e1, e0 = 1.0 - arms.e1;
  ImprovedEstimates out;
  out.arm1_var = subset_var(resid_stat, arms.arm[1]) / e1;
  out.arm0_var = subset_var(resid_stat, arms.arm[0]) / e0;

  Matrix cond_cov = finite_pop_cov(condition_data);
  Matrix cond_l;
  try {
    cond_l = cholesky(cond_cov, "cov of the union covariate set");
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) +
                       "; the improved estimator assumes this covariance is invertible");
  }
  Vec d1 = subset_cov(condition_data, resid_stat, arms.arm[1]);
  Vec d0 = subset_cov(condition_data, resid_stat, arms.arm[0]);
  Vec dd(d1.size());
  for (size_t j = 0; j < d1.size(); ++j) dd[j] = d1[j] - d0[j];
  out.diff_projection = dot(dd, chol_solve(cond_l, dd));

  out.v_adj = out.arm1_var + out.arm0_var - out.diff_projection;
  if (out.v_adj < 0.0) {
    out.v_adj = 0.0;
    ++out.clip_events;
  }

  // R^2 numerator: arm-wise projections on the design covariates use the
  // arm-wise covariate covariance; the difference projection uses the
  // full-population one.
  Matrix design_cov_l = cholesky(finite_pop_cov(design_data), "design covariate covariance");
  Vec c1 = subset_cov(design_data, resid_stat, arms.arm[1]);
  Vec c0 = subset_cov(design_data, resid_stat, arms.arm[0]);
  double proj1 = 0.0, proj0 = 0.0;
  {
    Matrix cov1_l = cholesky(subset_cov(design_data, design_data, arms.arm[1]),
                             "arm-1 design covariate covariance");
    Matrix cov0_l = cholesky(subset_cov(design_data, design_data, arms.arm[0]),
                             "arm-0 design covariate covariance");
    proj1 = dot(c1, chol_solve(cov1_l, c1));
    proj0 = dot(c0, chol_solve(cov0_l, c0));
  }
  Vec cdiff(c1.size());
  for (size_t j = 0; j < c1.size(); ++j) cdiff[j] = c1[j] - c0[j];
  double diff_proj = dot(cdiff, chol_solve(design_cov_l, cdiff));
  out.r2_numerator = proj1 / e1 + proj0 / e0 - diff_proj;

  if (out.v_adj > 0.0) {
    out.r2_adj = out.r2_numerator / out.v_adj;
    if (out.r2_adj < 0.0 || out.r2_adj > 1.0) {
      out.r2_adj = std::min(std::max(out.r2_adj, 0.0), 1.0);
      ++out.clip_events;
    }
  } else {
    out.r2_adj = 0.0;
  }

  // mu_hat: plug-in direction of the projection, mapped through the
  // inverse square root of the imbalance covariance and normalized.
  int k = design_data.cols();
  out.mu_hat.assign(k, 0.0);
  out.mu_hat[0] = 1.0;
  Vec h(k);
  for (int j = 0; j < k; ++j) h[j] = c1[j] / e1 + c0[j] / e0;
  EigenSym eig = eigen_sym((1.0 / (e1 * e0)) * finite_pop_cov(design_data));
  bool ok = true;
  for (double lam : eig.values)
    if (!(lam > 0.0)) ok = false;
  if (ok) {
    Vec mu(k, 0.0);
    for (int q = 0; q < k; ++q) {
      double proj = 0.0;
      for (int j = 0; j < k; ++j) proj += eig.vectors(j, q) * h[j];
      proj /= std::sqrt(eig.values[q]);
      for (int j = 0; j < k; ++j) mu[j] += eig.vectors(j, q) * proj;
    }
    double n = norm2(mu);
    if (n > 0.0 && std::isfinite(n)) {
      for (double& v : mu) v /= n;
      out.mu_hat = mu;
    } else {
      ++out.clip_events;
    }
  }
  return out;
}

}  // namespace

ImprovedEstimates improved_variance_haj(const ClusterExperiment& exp, const std::vector<int>& z,
                                        const std::vector<int>& analysis_cols,
                                        const std::vector<int>& design_cols) {
  if (exp.y_obs.empty()) throw ConfigError("improved variance requires observed outcomes");
  ArmIndex arms = split_arms(z);

  Matrix w = analysis_cols.empty() ? Matrix(exp.num_units(), 0) : exp.x.columns(analysis_cols);
  std::vector<int> zu(exp.num_units());
  for (int i = 0; i < exp.num_clusters(); ++i)
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) zu[j] = z[i];
  RegressionFit fit = fit_ols_interacted(exp.y_obs, zu, w);
  Vec u_tilde = scaled_cluster_totals(exp, fit.residuals);

  std::vector<int> dcols = design_cols.empty() ? all_columns(exp.x) : design_cols;
  Matrix xt = scaled_cluster_totals(exp, exp.x.columns(dcols));
  Matrix wt = w.empty() ? Matrix(exp.num_clusters(), 0) : scaled_cluster_totals(exp, w);
  Matrix gt = dedup_union(xt, wt);
  return improved_core(u_tilde, xt, gt, arms);
}

ImprovedEstimates improved_variance_ht(const ClusterExperiment& exp, const std::vector<int>& z,
                                       const std::vector<int>& analysis_cols,
                                       const std::vector<int>& design_cols) {
  if (exp.y_obs.empty()) throw ConfigError("improved variance requires observed outcomes");
  ArmIndex arms = split_arms(z);

  Vec yt = scaled_cluster_totals(exp, exp.y_obs);
  Matrix v = analysis_cols.empty() ? Matrix(exp.num_clusters(), 0) : exp.c.columns(analysis_cols);
  RegressionFit fit = fit_ols_interacted(yt, z, v);

  std::vector<int> dcols = design_cols.empty() ? all_columns(exp.c) : design_cols;
  Matrix c = exp.c.columns(dcols);
  return improved_core(fit.residuals, c, c, arms);
}

IntervalEstimate normal_interval(const EstimateReport& report, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ConfigError("confidence level must lie strictly in (0, 1)");
  double zq = normal_quantile(0.5 + 0.5 * level);
  double se = std::sqrt(std::max(report.variance_hat, 0.0));
  return {report.tau_hat - zq * se, report.tau_hat + zq * se};
}

IntervalEstimate improved_interval(const EstimateReport& report, const ImprovedEstimates& ie,
                                   const Matrix& constraint, double a, int m, double level,
                                   int mc_size, Rng& rng) {
  if (!(level > 0.0 && level < 1.0))
    throw ConfigError("confidence level must lie strictly in (0, 1)");
  if (m < 1) throw ConfigError("improved_interval: cluster count must be positive");
  double varsigma = 1.0 - level;
  AsymptoticLaw law = make_law(1.0, ie.r2_adj, ie.mu_hat, constraint, a);
  Vec q = law_quantiles(law, {0.5 * varsigma, 1.0 - 0.5 * varsigma}, mc_size, rng);
  double se = std::sqrt(std::max(ie.v_adj, 0.0) / m);
  return {report.tau_hat + se * q[0], report.tau_hat + se * q[1]};
}

Matrix constraint_matrix(const BalanceCriterion& crit, int m1) {
  if (crit.tiered())
    throw ConfigError("improved intervals are not defined for tiered criteria");
  int k = crit.dimension();
  if (crit.kind == CriterionKind::Mahalanobis) return Matrix::identity(k);
  int m = crit.data.rows();
  double e1 = static_cast<double>(m1) / m;
  Matrix v = (1.0 / (e1 * (1.0 - e1))) * finite_pop_cov(crit.data);
  Matrix vroot = sym_sqrt(v);
  return vroot * crit.a_matrix * vroot;
}

IntervalEstimate improved_interval_for(const BalanceCriterion& crit, int m1,
                                       const EstimateReport& report,
                                       const ImprovedEstimates& ie, double level, int mc_size,
                                       Rng& rng) {
  Matrix b = constraint_matrix(crit, m1);
  ImprovedEstimates use = ie;
  if (crit.kind == CriterionKind::Mahalanobis) {
    // Rotation invariance of the spherical constraint: any unit direction
    // gives the same law, so the first basis vector stands in for mu_hat.
    use.mu_hat.assign(crit.dimension(), 0.0);
    use.mu_hat[0] = 1.0;
  }
  int m = crit.data.rows();
  return improved_interval(report, use, b, crit.threshold, m, level, mc_size, rng);
}

}  // namespace clusterre
