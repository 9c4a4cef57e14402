#include "privleak/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "privleak/error.hpp"

namespace privleak {

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300, eps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sum_sq_dev(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s;
}

}  // namespace

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("roc_auc got " + std::to_string(scores.size()) + " scores and " + std::to_string(labels.size()) +
                     " labels");
  double positives = 0, negatives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("roc_auc labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError("roc_auc got a non-finite score");
    (labels[i] ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) throw ConfigError("roc_auc needs both member and non-member labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    curve.points.push_back({s, fp / negatives, tp / positives});
  }
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  return area;
}

double attack_efficacy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size() || scores.empty())
    throw ShapeError("attack_efficacy needs equally many scores and labels, at least one");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += (scores[i] >= threshold) == (labels[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::string_view to_string(Tails tails) { return tails == Tails::one ? "one" : "two"; }

Tails tails_from_string(std::string_view name) {
  if (name == "one") return Tails::one;
  if (name == "two") return Tails::two;
  throw ConfigError("tails must be 'one' or 'two', got '" + std::string(name) + "'");
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ConfigError("incomplete_beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("incomplete_beta needs x in [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  // The fraction converges fastest below the mean; use the symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * beta_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ConfigError("student_t_cdf needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

TTestResult t_test_independent(std::span<const double> a, std::span<const double> b, Tails tails) {
  if (a.size() < 2 || b.size() < 2)
    throw ConfigError("t_test_independent needs at least 2 samples per group, got " + std::to_string(a.size()) +
                      " and " + std::to_string(b.size()));
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean_of(a), mb = mean_of(b);
  TTestResult r;
  r.tails = tails;
  r.df = static_cast<int>(a.size() + b.size() - 2);
  const double pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / r.df;
  if (pooled == 0.0) {
    if (ma != mb) throw NumericError("t_test_independent: zero pooled variance with unequal means");
    r.t = 0.0;
    r.p = tails == Tails::one ? 0.5 : 1.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  if (tails == Tails::one) {
    r.p = 1.0 - student_t_cdf(r.t, r.df);
    if (r.t > 0) r.p = 0.5 * incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
  } else {
    r.p = std::min(1.0, incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t)));
  }
  return r;
}

double efficacy_ratio(double attack_efficacy, double test_accuracy) {
  if (!(test_accuracy > 0.0)) throw ConfigError("efficacy_ratio needs a positive test accuracy");
  if (!std::isfinite(attack_efficacy)) throw NumericError("efficacy_ratio got a non-finite efficacy");
  return attack_efficacy / test_accuracy;
}

std::string format3(double value) { return fmt::format("{:.3f}", value); }

}  // namespace privleak
