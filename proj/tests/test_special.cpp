#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clusterre/errors.hpp"
#include "clusterre/special.hpp"

using namespace clusterre;

TEST_CASE("chi-square CDF at zero and simple anchors") {
  for (int k = 1; k <= 12; ++k) CHECK(chisq_cdf(0.0, k) == 0.0);
  // K = 2 has the closed form 1 - exp(-a/2).
  for (double a : {0.01, 0.5, 2.0, 10.0})
    CHECK(chisq_cdf(a, 2) == doctest::Approx(1.0 - std::exp(-0.5 * a)).epsilon(1e-12));
}

TEST_CASE("chi-square quantile anchors") {
  // K = 2, p = 0.001: -2 ln(0.999).
  CHECK(chisq_quantile(0.001, 2) == doctest::Approx(-2.0 * std::log(0.999)).epsilon(1e-10));
  CHECK(chisq_quantile(0.001, 2) == doctest::Approx(0.0020010007).epsilon(1e-7));
  // K = 1: square of the standard normal quantile.
  double z = normal_quantile(0.5005);
  CHECK(chisq_quantile(0.001, 1) == doctest::Approx(z * z).epsilon(1e-8));
  CHECK(chisq_quantile(0.001, 1) == doctest::Approx(1.5708e-6).epsilon(1e-3));
}

TEST_CASE("chi-square quantile/CDF round trip on the working grid") {
  for (int k = 1; k <= 12; ++k) {
    for (double a : {0.001, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0}) {
      double p = chisq_cdf(a, k);
      if (p <= 0.0 || p >= 1.0) continue;
      if (p < 1.0 - 1e-9) {
        CHECK(chisq_quantile(p, k) == doctest::Approx(a).epsilon(1e-8));
      } else {
        // Upper-tail saturation: the stored probability determines the
        // argument only up to its own rounding, so invert in p-space.
        CHECK(chisq_cdf(chisq_quantile(p, k), k) == doctest::Approx(p).epsilon(1e-12));
      }
    }
    for (double p : {0.0001, 0.001, 0.01, 0.1, 0.5, 0.9, 0.99})
      CHECK(chisq_cdf(chisq_quantile(p, k), k) == doctest::Approx(p).epsilon(1e-8));
  }
}

TEST_CASE("chi-square input validation") {
  CHECK_THROWS_AS(chisq_quantile(0.0, 3), NumericError);
  CHECK_THROWS_AS(chisq_quantile(1.0, 3), NumericError);
  CHECK_THROWS_AS(chisq_quantile(0.5, 0), NumericError);
  CHECK_THROWS_AS(chisq_cdf(-1.0, 3), NumericError);
}

TEST_CASE("normal quantile anchors and round trip") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  for (double p : {1e-10, 1e-6, 0.001, 0.01, 0.3, 0.5, 0.7, 0.99, 0.999999})
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  CHECK_THROWS_AS(normal_quantile(0.0), NumericError);
}
