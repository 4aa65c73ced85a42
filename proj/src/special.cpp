#include <cmath>
#include <limits>
#include <string>

#include "uflow/errors.hpp"
#include "uflow/numerics.hpp"

namespace uflow {

namespace {

template <typename T>
T log_beta(T a, T b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for I_x(a, b), modified Lentz evaluation.
template <typename T>
T incomplete_beta_cf(T a, T b, T x) {
  const T tiny = std::numeric_limits<T>::min() / std::numeric_limits<T>::epsilon();
  const T eps = std::numeric_limits<T>::epsilon();
  const T qab = a + b;
  const T qap = a + 1;
  const T qam = a - 1;
  T c = 1;
  T d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  T h = d;
  for (int m = 1; m <= 10000; ++m) {
    const T m2 = 2 * m;
    T aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const T del = d * c;
    h *= del;
    if (std::abs(del - 1) <= eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

template <typename T>
T log_incomplete_beta_impl(T x, T a, T b) {
  if (x == 0) return -std::numeric_limits<T>::infinity();
  if (x == 1) return 0;
  const T log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1) / (a + b + 2)) {
    return log_front + std::log(incomplete_beta_cf(a, b, x)) - std::log(a);
  }
  const T complement = std::exp(log_front + std::log(incomplete_beta_cf(b, a, 1 - x)) - std::log(b));
  return std::log1p(-complement);
}

}  // namespace

double log_incomplete_beta(double x, double a, double b, Precision precision) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw DomainError("incomplete beta requires a > 0 and b > 0");
  }
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete beta requires 0 <= x <= 1");
  if (precision == Precision::extended) {
    return static_cast<double>(log_incomplete_beta_impl<long double>(x, a, b));
  }
  return log_incomplete_beta_impl<double>(x, a, b);
}

double log_binomial_tail(double k, double n, double q, Precision precision) {
  if (!std::isfinite(k) || !std::isfinite(n) || !(n > 0.0)) {
    throw DomainError("binomial tail requires finite n > 0");
  }
  if (k < 0.0 || k > n) {
    throw DomainError("binomial tail requires 0 <= k <= n (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (!(q > 0.0 && q < 1.0)) throw DomainError("binomial tail requires 0 < q < 1");
  if (k == 0.0) return 0.0;
  return log_incomplete_beta(q, k, n - k + 1.0, precision);
}

double chi2_cdf(double x) {
  if (!(x > 0.0)) return 0.0;
  return std::erf(std::sqrt(0.5 * x));
}

double chi2_quantile(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw DomainError("chi2 quantile requires 0 <= p < 1, got " + std::to_string(p));
  }
  if (p == 0.0) return 0.0;
  // Compare in the upper tail for accuracy as p approaches 1.
  const double tail = 1.0 - p;
  auto below = [&](double x) { return std::erfc(std::sqrt(0.5 * x)) > tail; };
  double lo = 0.0;
  double hi = 1.0;
  while (below(hi)) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (below(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace uflow
