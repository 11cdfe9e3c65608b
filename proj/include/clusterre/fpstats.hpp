#pragma once

#include <array>
#include <string>
#include <vector>

#include "clusterre/linalg.hpp"

namespace clusterre {

// A cluster-randomized experiment: M clusters of units stored contiguously,
// individual- and cluster-level covariates, and observed and/or potential
// outcomes. Covariates are expected to be centered (see center_covariates):
// individual covariates to mean zero over all N units, cluster covariates to
// mean zero over the M clusters.
struct ClusterExperiment {
  std::vector<int> sizes;   // n_i, one per cluster
  std::vector<int> offsets; // unit index range of cluster i is [offsets[i], offsets[i+1])
  Matrix x;                 // N x Kx individual-level covariates
  Matrix c;                 // M x Kc cluster-level covariates
  Vec y_obs;                // observed outcomes (size N) or empty
  std::array<Vec, 2> y_pot; // potential outcomes Y(0), Y(1) (size N each) or empty
  std::vector<int> z;       // cluster assignments, or empty

  int num_clusters() const { return static_cast<int>(sizes.size()); }
  int num_units() const { return offsets.empty() ? 0 : offsets.back(); }
  bool has_potential_outcomes() const {
    return !y_pot[0].empty() && !y_pot[1].empty();
  }

  // Average treatment effect from potential outcomes (simulation mode).
  double true_tau() const;

  // Fills offsets from sizes and validates shapes.
  void finalize();
};

// Builds an experiment from per-cluster sizes; covariates/outcomes are
// attached afterwards.
ClusterExperiment make_experiment(const std::vector<int>& sizes);

// Centers individual covariates over units and cluster covariates over
// clusters, in place.
void center_covariates(ClusterExperiment& exp);

// Scaled cluster totals: component i is (sum over units j in cluster i of
// value_ij) * M / N.
Vec scaled_cluster_totals(const ClusterExperiment& exp, const Vec& unit_values);
Matrix scaled_cluster_totals(const ClusterExperiment& exp, const Matrix& unit_values);

// Normalized cluster sizes n_i * M / N; their mean is exactly 1.
Vec normalized_sizes(const ClusterExperiment& exp);

// Default cluster-level covariate set (n_i, scaled totals of x), centered.
// The size goes in column 0.
Matrix size_and_scaled_totals(const ClusterExperiment& exp);

// Finite-population variance and covariance with divisor M - 1.
double finite_pop_var(const Vec& a);
double finite_pop_cov(const Vec& a, const Vec& b);
// Column-wise versions: rows are population members.
Matrix finite_pop_cov(const Matrix& a, const Matrix& b);
Matrix finite_pop_cov(const Matrix& a);
Vec finite_pop_cov(const Matrix& a, const Vec& b);

// Triangular change of basis that makes the finite-population covariance of
// the transformed columns diagonal. Column order encodes decreasing
// importance: transformed column k is a combination of columns 1..k only, and
// column 1 keeps its direction. Transformed data is data * T' (equivalently
// each row vector r maps to T r).
struct OrthoTransform {
  Matrix t;  // K x K, t(i, j) = 0 for j > i, positive diagonal
};

OrthoTransform orthogonalize_columns(const Matrix& data);
Matrix apply_ortho(const OrthoTransform& o, const Matrix& data);

}  // namespace clusterre
