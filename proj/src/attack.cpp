#include "privleak/attack.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "privleak/train.hpp"

namespace privleak {

namespace {

std::vector<int> member_bits(const std::vector<AttackRecord>& records) {
  std::vector<int> bits;
  bits.reserve(records.size());
  for (const auto& r : records) bits.push_back(r.member);
  return bits;
}

std::vector<Index> sample_rows(Index available, Index count, Rng& rng) {
  std::vector<Index> rows(static_cast<std::size_t>(available));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(count));
  return rows;
}

void append_records(std::vector<AttackRecord>& out, const Tensor<float>& probs, int member) {
  const auto rows = probs.rows();
  for (Index r = 0; r < rows.rows(); ++r) {
    AttackRecord rec;
    for (Index c = 0; c < kClasses; ++c) rec.probs[static_cast<std::size_t>(c)] = rows(r, c);
    rec.member = member;
    out.push_back(rec);
  }
}

}  // namespace

void AttackTraining::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("attack learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("attack batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("attack max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("attack patience must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("attack validation_fraction must lie in (0,1)");
}

Tensor<float> attack_features(const Tensor<float>& probs, bool sort_probs) {
  if (probs.rank() != 2 || probs.dim(1) != kClasses)
    throw ShapeError("attack inputs must be [N,10] probabilities, got " + to_string(probs.shape()));
  Tensor<float> x = probs;
  if (sort_probs) {
    auto rows = x.rows();
    for (Index r = 0; r < rows.rows(); ++r) std::sort(rows.row(r).begin(), rows.row(r).end(), std::greater<>());
  }
  return x;
}

Tensor<float> attack_features(const std::vector<AttackRecord>& records, bool sort_probs) {
  Tensor<float> probs({static_cast<Index>(records.size()), kClasses});
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t c = 0; c < kClasses; ++c) probs[static_cast<Index>(i) * kClasses + static_cast<Index>(c)] = records[i].probs[c];
  return attack_features(probs, sort_probs);
}

std::vector<double> attack_scores(const AttackModel& attack, const Tensor<float>& target_probs) {
  const auto out = predict(attack.net, attack_features(target_probs, attack.sort_probs));
  return std::vector<double>(out.data().begin(), out.data().end());
}

std::vector<AttackRecord> build_attack_dataset(const Network<float>& shadow, const LabeledDataset& shadow_in,
                                               const LabeledDataset& shadow_out, Rng& rng) {
  if (output_dim(shadow.spec) != kClasses)
    throw ShapeError("shadow model '" + shadow.spec.name + "' outputs " + std::to_string(output_dim(shadow.spec)) +
                     " values, the attack needs 10");
  std::vector<AttackRecord> records;
  records.reserve(static_cast<std::size_t>(shadow_in.size() + shadow_out.size()));
  append_records(records, predict(shadow, shadow_in.images), 1);
  append_records(records, predict(shadow, shadow_out.images), 0);
  return balanced_subsample(records, rng);
}

AttackModel train_attack_model(const std::vector<AttackRecord>& records, std::uint64_t seed,
                               const AttackTraining& options,
                               const std::function<void(int, double)>& progress) {
  options.validate();
  if (records.empty()) throw ConfigError("train_attack_model: no records");
  const auto members = std::count_if(records.begin(), records.end(), [](const AttackRecord& r) { return r.member == 1; });
  if (2 * members != static_cast<std::ptrdiff_t>(records.size()))
    throw ConfigError("train_attack_model: records are unbalanced (" + std::to_string(members) + " members of " +
                      std::to_string(records.size()) + ")");

  Rng rng(derive_seed(seed, 0));
  std::vector<Index> order(records.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(options.validation_fraction * static_cast<double>(records.size())));
  if (n_val == 0 || n_val == records.size()) throw ConfigError("train_attack_model: too few records to split");

  const Tensor<float> features = attack_features(records, options.sort_probs);
  const auto bits = member_bits(records);
  const std::vector<Index> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const std::vector<Index> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const auto x_train = gather_rows(features, train_rows);
  const auto x_val = gather_rows(features, val_rows);
  std::vector<int> y_train, y_val;
  for (Index r : train_rows) y_train.push_back(bits[static_cast<std::size_t>(r)]);
  for (Index r : val_rows) y_val.push_back(bits[static_cast<std::size_t>(r)]);

  AttackModel model{build_network<float>(attack_mlp(kClasses, 64), derive_seed(seed, 1)), options.sort_probs};
  FitOptions fit_options;
  fit_options.max_epochs = options.max_epochs;
  fit_options.patience = options.patience;
  fit_options.min_delta = 0.0;
  fit_options.batch_size = options.batch_size;
  fit_options.learning_rate = options.learning_rate;

  const MonitorFn monitor = [&](const Network<float>& net) {
    const auto out = predict(net, x_val);
    return attack_efficacy(std::vector<double>(out.data().begin(), out.data().end()), y_val);
  };
  Rng train_rng(derive_seed(seed, 2));
  const auto result = fit(model.net, x_train, y_train, monitor, fit_options, train_rng, [&](const EpochRecord& e) {
    if (progress) progress(e.epoch, e.monitor);
  });
  model.validation_accuracy = result.best_monitor;
  model.epochs_trained = static_cast<int>(result.history.size());
  model.best_epoch = result.best_epoch;
  return model;
}

AttackEvaluation evaluate_attack(const AttackModel& attack, const Network<float>& target,
                                 const LabeledDataset& target_train, const LabeledDataset& target_test, Index n_eval,
                                 Rng& rng) {
  if (n_eval < 1) throw ConfigError("n_eval must be at least 1");
  if (n_eval > target_train.size() || n_eval > target_test.size())
    throw ConfigError("n_eval " + std::to_string(n_eval) + " exceeds the available members (" +
                      std::to_string(target_train.size()) + ") or non-members (" + std::to_string(target_test.size()) +
                      ")");
  const auto in_rows = sample_rows(target_train.size(), n_eval, rng);
  const auto out_rows = sample_rows(target_test.size(), n_eval, rng);

  const auto probs_in = predict(target, gather_rows(target_train.images, in_rows));
  const auto probs_out = predict(target, gather_rows(target_test.images, out_rows));
  std::vector<double> scores = attack_scores(attack, probs_in);
  const auto scores_out = attack_scores(attack, probs_out);
  scores.insert(scores.end(), scores_out.begin(), scores_out.end());
  std::vector<int> labels(static_cast<std::size_t>(n_eval), 1);
  labels.resize(static_cast<std::size_t>(2 * n_eval), 0);

  AttackEvaluation eval;
  eval.n_eval = n_eval;
  eval.efficacy = attack_efficacy(scores, labels);
  eval.roc = roc_auc(scores, labels);
  return eval;
}

}  // namespace privleak
