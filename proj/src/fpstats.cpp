#include "clusterre/fpstats.hpp"

#include <cmath>
#include <numeric>

#include "clusterre/errors.hpp"

namespace clusterre {

void ClusterExperiment::finalize() {
  int m = static_cast<int>(sizes.size());
  if (m == 0) throw ConfigError("experiment has no clusters");
  offsets.assign(m + 1, 0);
  for (int i = 0; i < m; ++i) {
    if (sizes[i] < 1) throw ConfigError("cluster sizes must be >= 1");
    offsets[i + 1] = offsets[i] + sizes[i];
  }
  int n = offsets.back();
  if (!x.empty() && x.rows() != n) throw ConfigError("individual covariate rows != total units");
  if (!c.empty() && c.rows() != m) throw ConfigError("cluster covariate rows != clusters");
  if (!y_obs.empty() && static_cast<int>(y_obs.size()) != n)
    throw ConfigError("observed outcome length != total units");
  for (int zz = 0; zz < 2; ++zz)
    if (!y_pot[zz].empty() && static_cast<int>(y_pot[zz].size()) != n)
      throw ConfigError("potential outcome length != total units");
}

double ClusterExperiment::true_tau() const {
  if (!has_potential_outcomes()) throw NumericError("true_tau requires potential outcomes");
  double s = 0.0;
  int n = num_units();
  for (int j = 0; j < n; ++j) s += y_pot[1][j] - y_pot[0][j];
  return s / n;
}

ClusterExperiment make_experiment(const std::vector<int>& sizes) {
  ClusterExperiment exp;
  exp.sizes = sizes;
  exp.finalize();
  return exp;
}

void center_covariates(ClusterExperiment& exp) {
  if (!exp.x.empty()) {
    int n = exp.x.rows();
    for (int k = 0; k < exp.x.cols(); ++k) {
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += exp.x(i, k);
      mean /= n;
      for (int i = 0; i < n; ++i) exp.x(i, k) -= mean;
    }
  }
  if (!exp.c.empty()) {
    int m = exp.c.rows();
    for (int k = 0; k < exp.c.cols(); ++k) {
      double mean = 0.0;
      for (int i = 0; i < m; ++i) mean += exp.c(i, k);
      mean /= m;
      for (int i = 0; i < m; ++i) exp.c(i, k) -= mean;
    }
  }
}

Vec scaled_cluster_totals(const ClusterExperiment& exp, const Vec& unit_values) {
  int m = exp.num_clusters();
  int n = exp.num_units();
  if (static_cast<int>(unit_values.size()) != n)
    throw ConfigError("scaled_cluster_totals: value length != total units");
  double scale = static_cast<double>(m) / n;
  Vec out(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) s += unit_values[j];
    out[i] = s * scale;
  }
  return out;
}

Matrix scaled_cluster_totals(const ClusterExperiment& exp, const Matrix& unit_values) {
  int m = exp.num_clusters();
  int n = exp.num_units();
  if (unit_values.rows() != n)
    throw ConfigError("scaled_cluster_totals: value rows != total units");
  double scale = static_cast<double>(m) / n;
  Matrix out(m, unit_values.cols());
  for (int i = 0; i < m; ++i) {
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) {
      const double* row = unit_values.row_ptr(j);
      double* orow = out.row_ptr(i);
      for (int k = 0; k < unit_values.cols(); ++k) orow[k] += row[k];
    }
    double* orow = out.row_ptr(i);
    for (int k = 0; k < unit_values.cols(); ++k) orow[k] *= scale;
  }
  return out;
}

Vec normalized_sizes(const ClusterExperiment& exp) {
  int m = exp.num_clusters();
  double n = exp.num_units();
  Vec w(m);
  for (int i = 0; i < m; ++i) w[i] = exp.sizes[i] * m / n;
  return w;
}

Matrix size_and_scaled_totals(const ClusterExperiment& exp) {
  int m = exp.num_clusters();
  Matrix xt = exp.x.empty() ? Matrix(m, 0) : scaled_cluster_totals(exp, exp.x);
  // A constant cluster size carries no balance information and would make
  // the covariance singular; include it only when it varies.
  bool size_varies = false;
  for (int i = 1; i < m; ++i)
    if (exp.sizes[i] != exp.sizes[0]) size_varies = true;
  if (!size_varies) return xt;
  Matrix out(m, 1 + xt.cols());
  double mean_size = static_cast<double>(exp.num_units()) / m;
  for (int i = 0; i < m; ++i) {
    out(i, 0) = exp.sizes[i] - mean_size;
    for (int k = 0; k < xt.cols(); ++k) out(i, 1 + k) = xt(i, k);
  }
  // Scaled totals of centered x already have mean zero over clusters; make it
  // exact against accumulated rounding.
  for (int k = 1; k < out.cols(); ++k) {
    double mean = 0.0;
    for (int i = 0; i < m; ++i) mean += out(i, k);
    mean /= m;
    for (int i = 0; i < m; ++i) out(i, k) -= mean;
  }
  return out;
}

double finite_pop_var(const Vec& a) { return finite_pop_cov(a, a); }

double finite_pop_cov(const Vec& a, const Vec& b) {
  size_t m = a.size();
  if (b.size() != m) throw ConfigError("finite_pop_cov: length mismatch");
  if (m < 2) throw NumericError("finite_pop_cov: population must have at least two members");
  double abar = std::accumulate(a.begin(), a.end(), 0.0) / m;
  double bbar = std::accumulate(b.begin(), b.end(), 0.0) / m;
  double s = 0.0;
  for (size_t i = 0; i < m; ++i) s += (a[i] - abar) * (b[i] - bbar);
  return s / (m - 1);
}

Matrix finite_pop_cov(const Matrix& a, const Matrix& b) {
  int m = a.rows();
  if (b.rows() != m) throw ConfigError("finite_pop_cov: row mismatch");
  if (m < 2) throw NumericError("finite_pop_cov: population must have at least two members");
  Vec amean(a.cols(), 0.0), bmean(b.cols(), 0.0);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < a.cols(); ++k) amean[k] += a(i, k);
    for (int k = 0; k < b.cols(); ++k) bmean[k] += b(i, k);
  }
  for (double& v : amean) v /= m;
  for (double& v : bmean) v /= m;
  Matrix out(a.cols(), b.cols());
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < a.cols(); ++p) {
      double ac = a(i, p) - amean[p];
      for (int q = 0; q < b.cols(); ++q) out(p, q) += ac * (b(i, q) - bmean[q]);
    }
  return (1.0 / (m - 1)) * out;
}

Matrix finite_pop_cov(const Matrix& a) { return finite_pop_cov(a, a); }

Vec finite_pop_cov(const Matrix& a, const Vec& b) {
  Matrix bm(static_cast<int>(b.size()), 1);
  bm.set_col(0, b);
  return finite_pop_cov(a, bm).col(0);
}

OrthoTransform orthogonalize_columns(const Matrix& data) {
  Matrix cov = finite_pop_cov(data);
  Matrix l;
  try {
    l = cholesky(cov, "covariate covariance");
  } catch (const NumericError& e) {
    throw NumericError(std::string("orthogonalization failed: ") + e.what());
  }
  // T = L^-1 (triangular, positive diagonal) gives cov(data T') = I, so the
  // transformed columns are orthogonal with unit variance and column k mixes
  // original columns 1..k only.
  int k = cov.rows();
  OrthoTransform out;
  out.t = Matrix(k, k);
  for (int i = 0; i < k; ++i) {
    // Column i of L^-1 solves L y = e_i by forward substitution.
    Vec y(k, 0.0);
    for (int r = 0; r < k; ++r) {
      double s = (r == i) ? 1.0 : 0.0;
      for (int q = 0; q < r; ++q) s -= l(r, q) * y[q];
      y[r] = s / l(r, r);
    }
    for (int j = 0; j < k; ++j) out.t(j, i) = y[j];
  }
  return out;
}

Matrix apply_ortho(const OrthoTransform& o, const Matrix& data) {
  return data * transpose(o.t);
}

}  // namespace clusterre
