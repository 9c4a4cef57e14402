#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "privleak/network.hpp"
#include "privleak/optim.hpp"

namespace privleak {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double monitor = 0.0;  // accuracy on the monitored split

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct FitOptions {
  int max_epochs = 25;
  int patience = 3;
  double min_delta = 0.001;  // absolute, in accuracy units
  Index batch_size = 128;
  double learning_rate = 0.1;
  std::optional<DpConfig> dp;  // DP-SGD when set (its learning rate and batch size win)

  void validate() const;
};

struct FitResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_monitor = 0.0;
};

/// Patience counter plus argmax tracking. An epoch counts as progress when
/// it beats the last progress value by at least min_delta; the argmax is
/// tracked independently so sub-threshold gains are still kept.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Returns true when `value` is a new maximum.
  bool observe(double value);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  int stale_ = 0;
  bool seen_ = false;
  double reference_ = 0.0;
  double best_ = 0.0;
};

/// One pass over (inputs, labels) in a fresh random order. Dropout runs in
/// train mode. Returns the example-weighted mean training loss.
double train_epoch(Network<float>& net, const Tensor<float>& inputs, std::span<const int> labels,
                   const FitOptions& options, Rng& rng);

using MonitorFn = std::function<double(const Network<float>&)>;
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains until early stopping or max_epochs and leaves `net` holding the
/// parameters of the epoch with the highest monitor value.
FitResult fit(Network<float>& net, const Tensor<float>& inputs, std::span<const int> labels,
              const MonitorFn& monitor, const FitOptions& options, Rng& rng, const EpochCallback& on_epoch = {});

}  // namespace privleak
