#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "privleak/error.hpp"

namespace privleak {

struct RocPoint {
  double threshold = 0.0;  // predict member when score >= threshold
  double fpr = 0.0;
  double tpr = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) at threshold +inf to (1,1)
  double auc = 0.0;

  friend bool operator==(const RocCurve&, const RocCurve&) = default;
};

/// Sweeps every distinct score as a threshold (ties enter together) and
/// integrates by the trapezoid rule. Labels are 1 for members.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under an ordered point list.
double trapezoid_auc(const std::vector<RocPoint>& points);

/// Fraction of correct decisions with "member" meaning score >= threshold.
double attack_efficacy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

enum class Tails { one, two };

std::string_view to_string(Tails tails);
Tails tails_from_string(std::string_view name);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  Tails tails = Tails::one;

  friend bool operator==(const TTestResult&, const TTestResult&) = default;
};

/// Regularized incomplete beta I_x(a, b), by continued fraction.
double incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

/// Pooled-variance two-sample t-test. One-tailed tests H1: mean(a) > mean(b).
TTestResult t_test_independent(std::span<const double> a, std::span<const double> b, Tails tails = Tails::one);

/// attack_efficacy / test_accuracy.
double efficacy_ratio(double attack_efficacy, double test_accuracy);

/// Fixed 3-decimal rendering used for every printed metric.
std::string format3(double value);

}  // namespace privleak
