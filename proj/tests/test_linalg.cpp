#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clusterre/errors.hpp"
#include "clusterre/linalg.hpp"
#include "clusterre/rng.hpp"

using namespace clusterre;

namespace {

Matrix random_spd(int n, Rng& rng) {
  Matrix b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
  Matrix s = transpose(b) * b;
  for (int i = 0; i < n; ++i) s(i, i) += 0.5;
  return s;
}

}  // namespace

TEST_CASE("cholesky reconstructs and solves") {
  Rng rng(17);
  for (int n : {1, 2, 5, 9}) {
    Matrix a = random_spd(n, rng);
    Matrix l = cholesky(a);
    Matrix back = l * transpose(l);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(back(i, j) == doctest::Approx(a(i, j)).epsilon(1e-10));
    Vec b(n);
    for (int i = 0; i < n; ++i) b[i] = rng.normal();
    Vec x = chol_solve(l, b);
    Vec ax = a * x;
    for (int i = 0; i < n; ++i) CHECK(ax[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
}

TEST_CASE("cholesky rejects non-positive-definite input") {
  Matrix a(2, 2, {1.0, 2.0, 2.0, 1.0});
  CHECK_THROWS_AS(cholesky(a), NumericError);
  Matrix singular(2, 2, {1.0, 1.0, 1.0, 1.0});
  CHECK_THROWS_AS(cholesky(singular), NumericError);
}

TEST_CASE("spd inverse multiplies to identity") {
  Rng rng(3);
  Matrix a = random_spd(4, rng);
  Matrix inv = spd_inverse(a);
  Matrix id = a * inv;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(id(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
}

TEST_CASE("jacobi eigendecomposition matches known spectrum") {
  Matrix a(2, 2, {2.0, 1.0, 1.0, 2.0});
  EigenSym e = eigen_sym(a);
  CHECK(e.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.values[1] == doctest::Approx(3.0).epsilon(1e-12));
  // Reconstruction A = V diag(l) V'.
  Rng rng(5);
  Matrix b = random_spd(6, rng);
  EigenSym eb = eigen_sym(b);
  Matrix recon(6, 6);
  for (int k = 0; k < 6; ++k)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        recon(i, j) += eb.values[k] * eb.vectors(i, k) * eb.vectors(j, k);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK(recon(i, j) == doctest::Approx(b(i, j)).epsilon(1e-9));
}

TEST_CASE("symmetric square root squares back") {
  Rng rng(11);
  Matrix a = random_spd(5, rng);
  Matrix r = sym_sqrt(a);
  Matrix sq = r * r;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(sq(i, j) == doctest::Approx(a(i, j)).epsilon(1e-9));
}

TEST_CASE("ols_solve satisfies the normal equations to 1e-10") {
  Rng rng(23);
  int n = 40, p = 6;
  Matrix x(n, p);
  Vec y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
    y[i] = rng.normal();
  }
  Vec beta = ols_solve(x, y);
  // X'(y - X beta) should vanish relative to X'y.
  Vec xty(p, 0.0), xtxb(p, 0.0);
  for (int i = 0; i < n; ++i) {
    double fit = 0.0;
    for (int j = 0; j < p; ++j) fit += x(i, j) * beta[j];
    for (int j = 0; j < p; ++j) {
      xty[j] += x(i, j) * y[i];
      xtxb[j] += x(i, j) * fit;
    }
  }
  double scale = norm2(xty);
  for (int j = 0; j < p; ++j) CHECK(std::abs(xty[j] - xtxb[j]) < 1e-10 * scale);
}

TEST_CASE("ols_solve names the rank-deficient column") {
  Matrix x(4, 3);
  for (int i = 0; i < 4; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    x(i, 2) = 2.0 * i;  // collinear with column 1
  }
  Vec y = {1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_WITH_AS(ols_solve(x, y, {"(intercept)", "age", "age_doubled"}),
                       doctest::Contains("age_doubled"), NumericError);
}
