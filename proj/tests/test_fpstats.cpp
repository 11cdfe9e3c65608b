#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clusterre/errors.hpp"
#include "clusterre/fpstats.hpp"
#include "clusterre/rng.hpp"

using namespace clusterre;

TEST_CASE("finite-population covariance hand values") {
  Vec constant = {2.0, 2.0, 2.0};
  CHECK(finite_pop_var(constant) == 0.0);
  Vec a = {1.0, 2.0, 3.0};
  CHECK(finite_pop_var(a) == doctest::Approx(1.0).epsilon(1e-15));
  Vec b = {3.0, 2.0, 1.0};
  CHECK(finite_pop_cov(a, b) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(finite_pop_var(Vec{1.0}), NumericError);
}

TEST_CASE("finite-population covariance is symmetric, PSD, and bilinear") {
  Rng rng(7);
  int m = 20, k = 4;
  Matrix data(m, k);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) data(i, j) = rng.normal();
  Matrix cov = finite_pop_cov(data);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) CHECK(cov(i, j) == doctest::Approx(cov(j, i)).epsilon(1e-12));
  // PSD: quadratic forms non-negative.
  for (int t = 0; t < 10; ++t) {
    Vec v(k);
    for (int j = 0; j < k; ++j) v[j] = rng.normal();
    CHECK(quad_form(cov, v) >= -1e-12);
  }
  // Bilinearity in the first argument.
  Vec u = data.col(0), w = data.col(1), y = data.col(2);
  Vec combo(m);
  for (int i = 0; i < m; ++i) combo[i] = 2.0 * u[i] - 3.0 * w[i];
  CHECK(finite_pop_cov(combo, y) ==
        doctest::Approx(2.0 * finite_pop_cov(u, y) - 3.0 * finite_pop_cov(w, y)).epsilon(1e-12));
}

TEST_CASE("scaled cluster totals hand values") {
  ClusterExperiment exp = make_experiment({2, 2});
  Vec values = {1.0, 1.0, 3.0, 3.0};
  Vec t = scaled_cluster_totals(exp, values);
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[1] == doctest::Approx(3.0));

  Vec zeros(4, 0.0);
  Vec tz = scaled_cluster_totals(exp, zeros);
  CHECK(tz[0] == 0.0);
  CHECK(tz[1] == 0.0);

  // Singleton clusters: identity.
  ClusterExperiment singles = make_experiment({1, 1, 1});
  Vec raw = {4.0, -1.0, 2.5};
  Vec ts = scaled_cluster_totals(singles, raw);
  for (int i = 0; i < 3; ++i) CHECK(ts[i] == doctest::Approx(raw[i]));

  CHECK_THROWS_AS(scaled_cluster_totals(exp, Vec{1.0, 2.0}), ConfigError);
}

TEST_CASE("centering zeroes covariate means and scaled totals") {
  Rng rng(9);
  ClusterExperiment exp = make_experiment({3, 1, 4, 2});
  int n = exp.num_units();
  exp.x = Matrix(n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) exp.x(i, j) = rng.normal() + 5.0;
  exp.c = Matrix(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) exp.c(i, j) = rng.normal() - 2.0;
  center_covariates(exp);
  for (int j = 0; j < 2; ++j) {
    double xm = 0.0, cm = 0.0;
    for (int i = 0; i < n; ++i) xm += exp.x(i, j);
    for (int i = 0; i < 4; ++i) cm += exp.c(i, j);
    CHECK(std::abs(xm / n) < 1e-12);
    CHECK(std::abs(cm / 4) < 1e-12);
    // Scaled totals of centered unit covariates have zero mean over clusters.
    Vec t = scaled_cluster_totals(exp, exp.x.col(j));
    double tm = 0.0;
    for (double v : t) tm += v;
    CHECK(std::abs(tm / 4) < 1e-12);
  }
  Vec w = normalized_sizes(exp);
  double wm = 0.0;
  for (double v : w) wm += v;
  CHECK(wm / 4 == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("orthogonalization: identity for orthogonal unit-variance input") {
  // Columns orthogonal with unit finite-population variance.
  Matrix data(4, 2,
              {1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0});
  // cov_f = (4-1)^-1 * 4/3... rescale to unit variance: entries +-sqrt(3)/2.
  double s = std::sqrt(3.0) / 2.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) data(i, j) *= s;
  OrthoTransform o = orthogonalize_columns(data);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(o.t(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
}

TEST_CASE("orthogonalization diagonalizes correlated columns") {
  Rng rng(13);
  int m = 50;
  Matrix data(m, 3);
  for (int i = 0; i < m; ++i) {
    double base = rng.normal();
    data(i, 0) = base;
    data(i, 1) = 0.7 * base + rng.normal();
    data(i, 2) = -0.3 * base + 0.5 * rng.normal();
  }
  OrthoTransform o = orthogonalize_columns(data);
  // Triangular with the first direction preserved.
  CHECK(o.t(0, 1) == 0.0);
  CHECK(o.t(0, 2) == 0.0);
  CHECK(o.t(1, 2) == 0.0);
  CHECK(o.t(0, 0) > 0.0);
  Matrix transformed = apply_ortho(o, data);
  Matrix cov = finite_pop_cov(transformed);
  double diag_max = 0.0;
  for (int i = 0; i < 3; ++i) diag_max = std::max(diag_max, std::abs(cov(i, i)));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(std::abs(cov(i, j)) < 1e-10 * diag_max);
}

TEST_CASE("orthogonalization commutes with cluster aggregation") {
  // Transforming unit covariates then aggregating equals aggregating then
  // transforming (linearity of the scaled totals).
  Rng rng(31);
  ClusterExperiment exp = make_experiment({2, 3, 1, 2, 4});
  int n = exp.num_units();
  exp.x = Matrix(n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) exp.x(i, j) = rng.normal();
  center_covariates(exp);
  Matrix xt = scaled_cluster_totals(exp, exp.x);
  OrthoTransform o = orthogonalize_columns(xt);
  Matrix route1 = scaled_cluster_totals(exp, apply_ortho(o, exp.x));
  Matrix route2 = apply_ortho(o, xt);
  for (int i = 0; i < exp.num_clusters(); ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(route1(i, j) == doctest::Approx(route2(i, j)).epsilon(1e-12));
}

TEST_CASE("orthogonalization of a single column is a positive scalar") {
  Matrix data(5, 1, {1.0, 2.0, 3.0, 4.0, 5.0});
  OrthoTransform o = orthogonalize_columns(data);
  CHECK(o.t.rows() == 1);
  CHECK(o.t(0, 0) > 0.0);
  Matrix t = apply_ortho(o, data);
  CHECK(finite_pop_var(t.col(0)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonalization names the dependent column") {
  Matrix data(6, 2);
  for (int i = 0; i < 6; ++i) {
    data(i, 0) = i;
    data(i, 1) = 2.0 * i;  // exactly dependent
  }
  CHECK_THROWS_WITH_AS(orthogonalize_columns(data), doctest::Contains("index 1"), NumericError);
}

TEST_CASE("size_and_scaled_totals centers the size column first") {
  Rng rng(41);
  ClusterExperiment exp = make_experiment({1, 2, 3, 2});
  exp.x = Matrix(exp.num_units(), 1);
  for (int i = 0; i < exp.num_units(); ++i) exp.x(i, 0) = rng.normal();
  center_covariates(exp);
  Matrix c = size_and_scaled_totals(exp);
  CHECK(c.cols() == 2);
  double mean0 = 0.0;
  for (int i = 0; i < 4; ++i) mean0 += c(i, 0);
  CHECK(std::abs(mean0) < 1e-12);
  CHECK(c(0, 0) == doctest::Approx(1.0 - 8.0 / 4.0));
}
