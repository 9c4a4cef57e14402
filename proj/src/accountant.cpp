#include <algorithm>
#include <cmath>
#include <limits>

#include "privleak/optim.hpp"

namespace privleak {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// log(exp(a) - exp(b)) for a >= b.
double log_sub(double a, double b) {
  if (b == kNegInf) return a;
  if (a <= b) return kNegInf;
  return a + std::log1p(-std::exp(b - a));
}

/// log(erfc(x)) without underflow for large x.
double log_erfc(double x) {
  const double r = std::erfc(x);
  if (r > 1e-300) return std::log(r);
  // Asymptotic series of erfc for large positive x.
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(M_PI) +
         std::log1p(-1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2));
}

/// Integer orders: binomial expansion of E[(mu_1/mu_0)^alpha] under the
/// q-mixture.
double log_moment_integer(double q, double sigma, int alpha) {
  double acc = kNegInf;
  const double lq = std::log(q), l1q = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    const double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) - std::lgamma(alpha - k + 1.0);
    const double term = log_binom + k * lq + (alpha - k) * l1q + (k * static_cast<double>(k) - k) / (2 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

/// Fractional orders: two-sided series split at z0 where the mixture
/// densities cross; summed until both tails drop below e^-30.
double log_moment_fractional(double q, double sigma, double alpha) {
  double log_a0 = kNegInf, log_a1 = kNegInf;
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double lq = std::log(q), l1q = std::log1p(-q);
  // Generalised binomial coefficient C(alpha, i), tracked as log magnitude + sign.
  double log_coef = 0.0;
  double sign = 1.0;
  for (int i = 0;; ++i) {
    if (i > 0) {
      const double factor = (alpha - (i - 1)) / i;
      if (factor == 0.0) break;
      log_coef += std::log(std::abs(factor));
      if (factor < 0) sign = -sign;
    }
    const double j = alpha - i;
    const double log_t0 = log_coef + i * lq + j * l1q;
    const double log_t1 = log_coef + j * lq + i * l1q;
    const double log_e0 = std::log(0.5) + log_erfc((i - z0) / (std::sqrt(2.0) * sigma));
    const double log_e1 = std::log(0.5) + log_erfc((z0 - j) / (std::sqrt(2.0) * sigma));
    const double log_s0 = log_t0 + (i * static_cast<double>(i) - i) / (2 * sigma * sigma) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2 * sigma * sigma) + log_e1;
    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0) break;
  }
  return log_add(log_a0, log_a1);
}

}  // namespace

void DpConfig::validate() const {
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm))
    throw ConfigError("clip_norm must be positive, got " + std::to_string(clip_norm));
  if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier))
    throw ConfigError("noise_multiplier must be non-negative, got " + std::to_string(noise_multiplier));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive, got " + std::to_string(learning_rate));
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0,1), got " + std::to_string(delta));
}

std::vector<double> default_rdp_orders() {
  std::vector<double> orders;
  for (int k = 5; k <= 256; ++k) orders.push_back(0.25 * k);
  return orders;
}

double rdp_subsampled_gaussian(double q, double sigma, double order) {
  if (!(order > 1.0)) throw ConfigError("RDP order must exceed 1");
  if (!(sigma > 0.0)) throw ConfigError("RDP of the Gaussian mechanism needs sigma > 0");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("sampling rate must lie in [0,1]");
  if (q == 0.0) return 0.0;
  if (q == 1.0) return order / (2.0 * sigma * sigma);
  const double log_a = std::floor(order) == order ? log_moment_integer(q, sigma, static_cast<int>(order))
                                                  : log_moment_fractional(q, sigma, order);
  return log_a / (order - 1.0);
}

PrivacySpent compute_epsilon(std::int64_t dataset_size, const DpConfig& cfg, double epochs) {
  cfg.validate();
  if (dataset_size < 1) throw ConfigError("dataset size must be positive");
  if (cfg.batch_size > dataset_size)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  if (cfg.noise_multiplier == 0.0) throw ConfigError("noise_multiplier 0 gives no finite epsilon");
  if (!(epochs >= 0.0)) throw ConfigError("epochs must be non-negative");

  PrivacySpent spent;
  spent.delta = cfg.delta;
  spent.sampling_rate = static_cast<double>(cfg.batch_size) / static_cast<double>(dataset_size);
  spent.steps = static_cast<std::int64_t>(std::ceil(epochs * static_cast<double>(dataset_size) /
                                                    static_cast<double>(cfg.batch_size)));
  spent.epsilon = std::numeric_limits<double>::infinity();
  const double log_inv_delta = std::log(1.0 / cfg.delta);
  for (double order : default_rdp_orders()) {
    const double rdp = static_cast<double>(spent.steps) *
                       rdp_subsampled_gaussian(spent.sampling_rate, cfg.noise_multiplier, order);
    const double eps = rdp + log_inv_delta / (order - 1.0);
    if (eps < spent.epsilon) {
      spent.epsilon = eps;
      spent.order = order;
    }
  }
  return spent;
}

}  // namespace privleak
