#include "clusterre/special.hpp"

#include <cmath>
#include <limits>

#include "clusterre/errors.hpp"

namespace clusterre {

namespace {

// Series representation of P(s, x), valid and fast for x < s + 1.
double gamma_p_series(double s, double x) {
  double ap = s;
  double term = 1.0 / s;
  double sum = term;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16)
      return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
  }
  return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
}

// Modified Lentz continued fraction for Q(s, x), used when x >= s + 1.
double gamma_q_cf(double s, double x) {
  const double tiny = std::numeric_limits<double>::min() / 1e-30;
  double b = x + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    double an = -i * (i - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + s * std::log(x) - std::lgamma(s)) * h;
}

}  // namespace

double gamma_p(double s, double x) {
  if (!(s > 0.0)) throw NumericError("gamma_p: shape must be positive");
  if (x < 0.0) throw NumericError("gamma_p: argument must be non-negative");
  if (x == 0.0) return 0.0;
  if (x < s + 1.0) return gamma_p_series(s, x);
  return 1.0 - gamma_q_cf(s, x);
}

double chisq_cdf(double a, int k) {
  if (k < 1) throw NumericError("chisq_cdf: degrees of freedom must be >= 1");
  if (a < 0.0) throw NumericError("chisq_cdf: argument must be non-negative");
  return gamma_p(0.5 * k, 0.5 * a);
}

double chisq_pdf(double x, int k) {
  if (x <= 0.0) return (k == 2 && x == 0.0) ? 0.5 : 0.0;
  double s = 0.5 * k;
  return std::exp((s - 1.0) * std::log(x) - 0.5 * x - s * std::log(2.0) - std::lgamma(s));
}

double chisq_quantile(double p, int k) {
  if (k < 1) throw NumericError("chisq_quantile: degrees of freedom must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw NumericError("chisq_quantile: p must lie in (0, 1)");

  // Wilson-Hilferty starting point, then a bracket that surely contains the
  // root, then safeguarded Newton.
  double z = normal_quantile(p);
  double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  double x = k * t * t * t;
  if (!(x > 0.0) || !std::isfinite(x)) x = static_cast<double>(k);

  double lo = 0.0, hi = x;
  while (chisq_cdf(hi, k) < p) {
    lo = hi;
    hi = std::max(2.0 * hi, 1e-300);
    if (hi > 1e12) break;
  }
  if (chisq_cdf(x, k) < p) x = 0.5 * (lo + hi);

  for (int it = 0; it < 200; ++it) {
    double f = chisq_cdf(x, k) - p;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    double d = chisq_pdf(x, k);
    double step = (d > 0.0) ? f / d : 0.0;
    double next = x - step;
    if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-12 * std::max(next, 1e-300)) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericError("normal_quantile: p must lie in (0, 1)");

  // Acklam's rational approximation (relative error ~1e-9).
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley-accelerated Newton step against the erfc-based CDF.
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

}  // namespace clusterre
