#include "clusterre/estimate.hpp"

#include <cmath>
#include <numeric>

#include "clusterre/errors.hpp"

namespace clusterre {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Ht: return "ht";
    case EstimatorKind::Haj: return "haj";
    case EstimatorKind::HtAdj: return "ht_adj";
    default: return "haj_adj";
  }
}

std::string to_string(SeFlavor flavor) {
  switch (flavor) {
    case SeFlavor::Hw: return "HW";
    case SeFlavor::Lz: return "LZ";
    default: return "improved";
  }
}

namespace {

void require_observed(const ClusterExperiment& exp) {
  if (exp.y_obs.empty()) throw ConfigError("estimation requires observed outcomes");
}

void require_assignment(const ClusterExperiment& exp, const std::vector<int>& z) {
  if (static_cast<int>(z.size()) != exp.num_clusters())
    throw ConfigError("assignment length != clusters");
}

// Expands per-cluster assignments to unit rows.
std::vector<int> unit_assignment(const ClusterExperiment& exp, const std::vector<int>& z) {
  std::vector<int> zu(exp.num_units());
  for (int i = 0; i < exp.num_clusters(); ++i)
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) zu[j] = z[i];
  return zu;
}

std::vector<int> unit_cluster_ids(const ClusterExperiment& exp) {
  std::vector<int> ids(exp.num_units());
  for (int i = 0; i < exp.num_clusters(); ++i)
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) ids[j] = i;
  return ids;
}

}  // namespace

double tau_ht(const ClusterExperiment& exp, const std::vector<int>& z) {
  require_observed(exp);
  require_assignment(exp, z);
  Vec yt = scaled_cluster_totals(exp, exp.y_obs);
  double s1 = 0.0, s0 = 0.0;
  int m1 = 0;
  int m = exp.num_clusters();
  for (int i = 0; i < m; ++i) {
    if (z[i] == 1) {
      s1 += yt[i];
      ++m1;
    } else {
      s0 += yt[i];
    }
  }
  if (m1 == 0 || m1 == m) throw NumericError("tau_ht: an arm is empty");
  return s1 / m1 - s0 / (m - m1);
}

double tau_haj(const ClusterExperiment& exp, const std::vector<int>& z) {
  require_observed(exp);
  require_assignment(exp, z);
  double s1 = 0.0, s0 = 0.0;
  long n1 = 0, n0 = 0;
  for (int i = 0; i < exp.num_clusters(); ++i) {
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) {
      if (z[i] == 1) {
        s1 += exp.y_obs[j];
        ++n1;
      } else {
        s0 += exp.y_obs[j];
        ++n0;
      }
    }
  }
  if (n1 == 0 || n0 == 0) throw NumericError("tau_haj: an arm has no units");
  return s1 / n1 - s0 / n0;
}

RegressionFit fit_ols_interacted(const Vec& response, const std::vector<int>& z,
                                 const Matrix& covariates,
                                 const std::vector<std::string>& covariate_names) {
  int n = static_cast<int>(response.size());
  if (static_cast<int>(z.size()) != n) throw ConfigError("fit_ols_interacted: row mismatch");
  int k = covariates.empty() ? 0 : covariates.cols();
  if (k > 0 && covariates.rows() != n)
    throw ConfigError("fit_ols_interacted: covariate rows != responses");

  RegressionFit fit;
  fit.names.push_back("(intercept)");
  fit.names.push_back("z");
  for (int c = 0; c < k; ++c) {
    std::string base = c < static_cast<int>(covariate_names.size())
                           ? covariate_names[c]
                           : "x" + std::to_string(c + 1);
    fit.names.push_back(base);
  }
  for (int c = 0; c < k; ++c) fit.names.push_back("z:" + fit.names[2 + c]);

  Vec mean(k, 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) mean[c] += covariates(i, c);
  for (double& v : mean) v /= std::max(n, 1);

  int p = 2 + 2 * k;
  fit.design = Matrix(n, p);
  for (int i = 0; i < n; ++i) {
    fit.design(i, 0) = 1.0;
    fit.design(i, 1) = z[i];
    for (int c = 0; c < k; ++c) {
      double xc = covariates(i, c) - mean[c];
      fit.design(i, 2 + c) = xc;
      fit.design(i, 2 + k + c) = z[i] * xc;
    }
  }
  fit.beta = ols_solve(fit.design, response, fit.names);
  fit.residuals.resize(n);
  for (int i = 0; i < n; ++i) {
    double fitted = 0.0;
    const double* row = fit.design.row_ptr(i);
    for (int c = 0; c < p; ++c) fitted += row[c] * fit.beta[c];
    fit.residuals[i] = response[i] - fitted;
  }
  Matrix xtx(p, p);
  for (int i = 0; i < n; ++i) {
    const double* row = fit.design.row_ptr(i);
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b) xtx(a, b) += row[a] * row[b];
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) xtx(a, b) = xtx(b, a);
  fit.xtx_inv = spd_inverse(xtx, "design matrix normal equations");
  fit.treatment_col = 1;
  return fit;
}

Matrix sandwich_hw(const RegressionFit& fit, bool small_sample) {
  int n = fit.design.rows();
  int p = fit.design.cols();
  Matrix meat(p, p);
  for (int i = 0; i < n; ++i) {
    const double* row = fit.design.row_ptr(i);
    double e2 = fit.residuals[i] * fit.residuals[i];
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b) meat(a, b) += row[a] * row[b] * e2;
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) meat(a, b) = meat(b, a);
  Matrix v = fit.xtx_inv * meat * fit.xtx_inv;
  if (small_sample && n > p) v = (static_cast<double>(n) / (n - p)) * v;
  return v;
}

Matrix sandwich_lz(const RegressionFit& fit, const std::vector<int>& cluster_ids,
                   bool small_sample) {
  int n = fit.design.rows();
  int p = fit.design.cols();
  if (static_cast<int>(cluster_ids.size()) != n)
    throw ConfigError("sandwich_lz: cluster ids must cover every row");
  int g = 0;
  for (int id : cluster_ids) {
    if (id < 0) throw ConfigError("sandwich_lz: negative cluster id");
    g = std::max(g, id + 1);
  }
  Matrix scores(g, p);
  std::vector<int> seen(g, 0);
  for (int i = 0; i < n; ++i) {
    const double* row = fit.design.row_ptr(i);
    double* srow = scores.row_ptr(cluster_ids[i]);
    seen[cluster_ids[i]] = 1;
    for (int a = 0; a < p; ++a) srow[a] += row[a] * fit.residuals[i];
  }
  int groups = std::accumulate(seen.begin(), seen.end(), 0);
  Matrix meat(p, p);
  for (int i = 0; i < g; ++i) {
    const double* srow = scores.row_ptr(i);
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b) meat(a, b) += srow[a] * srow[b];
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) meat(a, b) = meat(b, a);
  Matrix v = fit.xtx_inv * meat * fit.xtx_inv;
  if (small_sample && groups > 1 && n > p)
    v = (static_cast<double>(groups) / (groups - 1)) *
        (static_cast<double>(n - 1) / (n - p)) * v;
  return v;
}

EstimateReport estimate(const ClusterExperiment& exp, const std::vector<int>& z,
                        EstimatorKind kind, const EstimateOptions& opts) {
  require_observed(exp);
  require_assignment(exp, z);
  EstimateReport report;
  report.estimator = kind;

  bool cluster_level = (kind == EstimatorKind::Ht || kind == EstimatorKind::HtAdj);
  bool adjusted = (kind == EstimatorKind::HtAdj || kind == EstimatorKind::HajAdj);

  if (cluster_level) {
    Vec yt = scaled_cluster_totals(exp, exp.y_obs);
    Matrix cov(exp.num_clusters(), 0);
    std::vector<std::string> names;
    if (adjusted) {
      if (exp.c.empty() && !opts.analysis_columns.empty())
        throw ConfigError("estimate: no cluster covariates for adjustment");
      std::vector<int> cols = opts.analysis_columns;
      if (cols.empty() && !exp.c.empty()) {
        cols.resize(exp.c.cols());
        std::iota(cols.begin(), cols.end(), 0);
      }
      if (!cols.empty()) {
        cov = exp.c.columns(cols);
        for (int c : cols) names.push_back("c" + std::to_string(c + 1));
      }
    }
    report.fit = fit_ols_interacted(yt, z, cov, names);
    report.tau_hat = report.fit.beta[report.fit.treatment_col];
    Matrix v = sandwich_hw(report.fit, opts.small_sample);
    report.variance_hat = v(report.fit.treatment_col, report.fit.treatment_col);
    report.se_flavor = SeFlavor::Hw;
  } else {
    std::vector<int> zu = unit_assignment(exp, z);
    Matrix cov(exp.num_units(), 0);
    std::vector<std::string> names;
    if (adjusted) {
      if (exp.x.empty() && !opts.analysis_columns.empty())
        throw ConfigError("estimate: no individual covariates for adjustment");
      std::vector<int> cols = opts.analysis_columns;
      if (cols.empty() && !exp.x.empty()) {
        cols.resize(exp.x.cols());
        std::iota(cols.begin(), cols.end(), 0);
      }
      if (!cols.empty()) {
        cov = exp.x.columns(cols);
        for (int c : cols) names.push_back("x" + std::to_string(c + 1));
      }
    }
    report.fit = fit_ols_interacted(exp.y_obs, zu, cov, names);
    report.tau_hat = report.fit.beta[report.fit.treatment_col];
    Matrix v = sandwich_lz(report.fit, unit_cluster_ids(exp), opts.small_sample);
    report.variance_hat = v(report.fit.treatment_col, report.fit.treatment_col);
    report.se_flavor = SeFlavor::Lz;
  }
  return report;
}

}  // namespace clusterre
