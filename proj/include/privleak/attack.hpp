#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "privleak/data.hpp"
#include "privleak/metrics.hpp"
#include "privleak/network.hpp"

namespace privleak {

struct AttackTraining {
  double learning_rate = 0.1;
  Index batch_size = 64;
  int max_epochs = 100;
  int patience = 5;
  double validation_fraction = 0.2;
  /// Feed probabilities sorted in descending order instead of by class.
  bool sort_probs = false;

  void validate() const;
  friend bool operator==(const AttackTraining&, const AttackTraining&) = default;
};

struct AttackModel {
  Network<float> net;
  bool sort_probs = false;
  double validation_accuracy = 0.0;
  int epochs_trained = 0;
  int best_epoch = 0;
};

struct AttackEvaluation {
  double efficacy = 0.0;
  RocCurve roc;
  Index n_eval = 0;
};

/// [N, 10] attack inputs; rows optionally sorted descending.
Tensor<float> attack_features(const Tensor<float>& probs, bool sort_probs);
Tensor<float> attack_features(const std::vector<AttackRecord>& records, bool sort_probs);

/// Membership scores in (0,1) for rows of target probabilities.
std::vector<double> attack_scores(const AttackModel& attack, const Tensor<float>& target_probs);

/// Eval-mode shadow outputs for both splits (member bit 1 for shadow_in),
/// balanced by subsampling.
std::vector<AttackRecord> build_attack_dataset(const Network<float>& shadow, const LabeledDataset& shadow_in,
                                               const LabeledDataset& shadow_out, Rng& rng);

/// Plain SGD on binary cross-entropy with an 80/20 split and early stopping
/// on validation accuracy; returns the best epoch's parameters.
AttackModel train_attack_model(const std::vector<AttackRecord>& records, std::uint64_t seed,
                               const AttackTraining& options = {},
                               const std::function<void(int epoch, double val_accuracy)>& progress = {});

/// Draws n_eval members from target_train and n_eval non-members from
/// target_test, queries the target in eval mode and scores the attack.
AttackEvaluation evaluate_attack(const AttackModel& attack, const Network<float>& target,
                                 const LabeledDataset& target_train, const LabeledDataset& target_test, Index n_eval,
                                 Rng& rng);

}  // namespace privleak
