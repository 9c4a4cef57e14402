#include "privleak/train.hpp"

#include <algorithm>
#include <numeric>

namespace privleak {

void FitOptions::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1, got " + std::to_string(max_epochs));
  if (patience < 1) throw ConfigError("patience must be at least 1, got " + std::to_string(patience));
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (dp) dp->validate();
}

bool EarlyStopper::observe(double value) {
  constexpr double slack = 1e-12;  // accuracies are ratios of counts
  if (!seen_) {
    seen_ = true;
    reference_ = best_ = value;
    return true;
  }
  if (value - reference_ >= min_delta_ - slack && value > reference_) {
    reference_ = value;
    stale_ = 0;
  } else {
    ++stale_;
  }
  if (value > best_) {
    best_ = value;
    return true;
  }
  return false;
}

double train_epoch(Network<float>& net, const Tensor<float>& inputs, std::span<const int> labels,
                   const FitOptions& options, Rng& rng) {
  const Index n = inputs.dim(0);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("train_epoch: label count does not match inputs");
  const Index batch = options.dp ? options.dp->batch_size : options.batch_size;
  const double lr = options.dp ? options.dp->learning_rate : options.learning_rate;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);

  double total = 0.0;
  std::vector<Index> rows;
  std::vector<int> y;
  for (Index begin = 0; begin < n; begin += batch) {
    const Index count = std::min(batch, n - begin);
    rows.assign(order.begin() + begin, order.begin() + begin + count);
    y.clear();
    for (Index r : rows) y.push_back(labels[static_cast<std::size_t>(r)]);
    const auto x = gather_rows(inputs, rows);
    const auto trace = forward(net, x, Mode::train, rng);
    total += loss(net, trace.output, y) * static_cast<double>(count);
    if (options.dp)
      dp_sgd_step(net, per_example_gradients(net, trace, y), *options.dp, rng);
    else
      sgd_step(net, backward(net, trace, y), lr);
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

FitResult fit(Network<float>& net, const Tensor<float>& inputs, std::span<const int> labels,
              const MonitorFn& monitor, const FitOptions& options, Rng& rng, const EpochCallback& on_epoch) {
  options.validate();
  EarlyStopper stopper(options.patience, options.min_delta);
  FitResult result;
  Vec<float> best = net.params.values();
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = train_epoch(net, inputs, labels, options, rng);
    record.monitor = monitor(net);
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stopper.observe(record.monitor)) {
      best = net.params.values();
      result.best_epoch = epoch;
      result.best_monitor = record.monitor;
    }
    if (stopper.should_stop()) break;
  }
  net.params.values() = best;
  return result;
}

}  // namespace privleak
