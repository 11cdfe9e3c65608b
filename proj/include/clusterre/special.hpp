#pragma once

namespace clusterre {

// Regularized lower incomplete gamma P(s, x). Series expansion for
// x < s + 1, Lentz continued fraction for the upper tail otherwise.
double gamma_p(double s, double x);

// Chi-square distribution with k degrees of freedom.
double chisq_cdf(double a, int k);
// Inverse of chisq_cdf, accurate to 1e-10 relative. Requires 0 < p < 1.
double chisq_quantile(double p, int k);
double chisq_pdf(double x, int k);

// Standard normal CDF / density / quantile. The quantile uses Acklam's
// rational approximation polished by one Newton step on the erfc-based CDF,
// which keeps full precision far into the tails.
double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);

}  // namespace clusterre
