#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "privleak/network.hpp"

namespace privleak {

struct DpConfig {
  double clip_norm = 1.5;
  double noise_multiplier = 1.3;
  double learning_rate = 0.1;
  Index batch_size = 128;
  double delta = 1e-5;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const DpConfig&, const DpConfig&) = default;
};

struct PrivacySpent {
  double epsilon = 0.0;
  double delta = 0.0;
  std::int64_t steps = 0;
  double sampling_rate = 0.0;
  double order = 0.0;  // RDP order attaining the minimum

  friend bool operator==(const PrivacySpent&, const PrivacySpent&) = default;
};

/// theta <- theta - lr * g.
template <typename Scalar>
void sgd_step(Network<Scalar>& net, const ParamSet<Scalar>& grads, double learning_rate) {
  if (grads.size() != net.params.size())
    throw ShapeError("gradient has " + std::to_string(grads.size()) + " values for " +
                     std::to_string(net.params.size()) + " parameters");
  if (!grads.values().allFinite()) throw NumericError("non-finite gradient passed to sgd_step");
  net.params.values() -= static_cast<Scalar>(learning_rate) * grads.values();
}

/// g * min(1, C / ||g||_2); the zero vector maps to itself.
template <typename Derived>
Vec<typename Derived::Scalar> clip_per_example(const Eigen::MatrixBase<Derived>& grad, double clip_norm) {
  using Scalar = typename Derived::Scalar;
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive, got " + std::to_string(clip_norm));
  const double norm = grad.template cast<double>().norm();
  Vec<Scalar> out = grad;
  if (norm > clip_norm) out *= static_cast<Scalar>(clip_norm / norm);
  return out;
}

/// One DP-SGD update from a [B, P] matrix of per-example gradients:
/// g_hat = (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / B, theta -= lr * g_hat.
/// Clipped gradients are summed in index order; noise is drawn per
/// coordinate in parameter order.
template <typename Scalar>
void dp_sgd_step(Network<Scalar>& net, const RowMat<Scalar>& per_example_grads, const DpConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index batch = per_example_grads.rows();
  if (batch < 1) throw ConfigError("dp_sgd_step needs at least one per-example gradient");
  if (per_example_grads.cols() != net.params.size())
    throw ShapeError("per-example gradients have " + std::to_string(per_example_grads.cols()) + " columns for " +
                     std::to_string(net.params.size()) + " parameters");
  if (!per_example_grads.allFinite()) throw NumericError("non-finite per-example gradient passed to dp_sgd_step");

  Vec<Scalar> sum = Vec<Scalar>::Zero(net.params.size());
  for (Index i = 0; i < batch; ++i) sum += clip_per_example(per_example_grads.row(i).transpose(), cfg.clip_norm);

  if (cfg.noise_multiplier > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_multiplier * cfg.clip_norm);
    for (Index k = 0; k < sum.size(); ++k) sum[k] += static_cast<Scalar>(noise(rng));
  }
  sum /= static_cast<Scalar>(batch);
  net.params.values() -= static_cast<Scalar>(cfg.learning_rate) * sum;
}

/// Order grid 1.25, 1.5, ..., 64.
std::vector<double> default_rdp_orders();

/// Renyi-DP of one step of the Poisson-subsampled Gaussian mechanism at
/// order `order`, sampling rate q and noise multiplier sigma.
double rdp_subsampled_gaussian(double q, double sigma, double order);

/// (epsilon, delta) spent by ceil(epochs * n / B) DP-SGD steps, minimising
/// rdp + ln(1/delta) / (order - 1) over the order grid.
PrivacySpent compute_epsilon(std::int64_t dataset_size, const DpConfig& cfg, double epochs);

}  // namespace privleak
