#pragma once

#include <json.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "privleak/attack.hpp"
#include "privleak/data.hpp"
#include "privleak/metrics.hpp"
#include "privleak/optim.hpp"
#include "privleak/train.hpp"

namespace privleak {

enum class Variant { vanilla, dropout, dp, dp_dropout };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::vanilla, Variant::dropout, Variant::dp,
                                                     Variant::dp_dropout};

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
inline bool uses_dp(Variant v) { return v == Variant::dp || v == Variant::dp_dropout; }
inline bool uses_dropout(Variant v) { return v == Variant::dropout || v == Variant::dp_dropout; }

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t attack = 3;

  friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct ShadowTraining {
  double learning_rate = 0.05;
  Index batch_size = 128;
  int max_epochs = 25;

  friend bool operator==(const ShadowTraining&, const ShadowTraining&) = default;
};

struct ExperimentConfig {
  Source dataset = Source::mnist;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  /// Optimizer settings for every target; clip_norm and noise_multiplier
  /// only apply to the DP variants.
  DpConfig dp;
  int max_epochs = 25;
  int patience = 3;
  double min_delta = 0.001;  // 0.1 percentage points
  double dropout_rate = 0.5;
  double input_dropout_rate = 0.2;
  Seeds seeds;
  Index n_eval = 5000;
  ShadowTraining shadow;
  AttackTraining attack;
  /// Desk-scale knobs: keep only the first N train/test examples (0 = all).
  Index train_limit = 0;
  Index test_limit = 0;
  /// Confidence of MC dropout averaged over this many passes (dropout variants).
  int mc_samples = 20;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

NetworkSpec target_spec(Variant v, Source source, const ExperimentConfig& cfg);
Shape input_shape(Source source);

struct VariantResult {
  Variant variant = Variant::vanilla;
  double test_accuracy = 0.0;
  double attack_efficacy = 0.0;
  double auc = 0.0;
  double ratio = 0.0;
  std::optional<PrivacySpent> privacy;
  int epochs_trained = 0;
  int best_epoch = 0;
  /// Mean max-probability on the test split (eval mode).
  double test_confidence = 0.0;
  /// Same, averaged over MC-dropout passes; dropout variants only.
  std::optional<double> mc_confidence;
  std::vector<EpochRecord> history;

  friend bool operator==(const VariantResult&, const VariantResult&) = default;
};

struct ShadowSummary {
  Index in_size = 0;
  Index out_size = 0;
  double out_accuracy = 0.0;
  int epochs_trained = 0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  Index attack_records = 0;
  double attack_validation_accuracy = 0.0;
  int attack_epochs = 0;

  friend bool operator==(const ShadowSummary&, const ShadowSummary&) = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string status = "complete";
  std::string failed_stage;
  std::string error;
  ExperimentConfig config;
  std::optional<ShadowSummary> shadow;
  std::vector<VariantResult> rows;
  /// Dropout variants vs the rest over every efficacy in this report.
  std::optional<TTestResult> ttest;

  bool complete() const { return status == "complete"; }
  const VariantResult* find(Variant v) const;
  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Raised by run_experiment; names the stage that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message, bool config_error)
      : Error(stage + ": " + message), stage_(std::move(stage)), config_error_(config_error) {}
  const std::string& stage() const { return stage_; }
  /// The cause was a ConfigError (bad settings rather than a pipeline fault).
  bool config_error() const { return config_error_; }

 private:
  std::string stage_;
  bool config_error_;
};

struct RunHooks {
  /// Called after every epoch of every training stage.
  std::function<void(const std::string& stage, const EpochRecord&)> on_epoch;
  /// Called when a stage starts.
  std::function<void(const std::string& stage)> on_stage;
  /// Checked between epochs; a set flag aborts the run as "interrupted".
  const std::atomic<bool>* cancel = nullptr;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// Dataset directory for cfg (data_dir/<dataset>).
std::filesystem::path dataset_dir(const ExperimentConfig& cfg);
DatasetPair load_experiment_data(const ExperimentConfig& cfg);

struct TargetResult {
  Network<float> net;
  FitResult fit;
  std::optional<PrivacySpent> privacy;
};

/// SGD or DP-SGD with early stopping on test accuracy; returns the
/// best-test-accuracy parameters.
TargetResult train_target(Variant v, const DatasetPair& data, const ExperimentConfig& cfg,
                          const EpochCallback& on_epoch = {});

struct ShadowResult {
  Network<float> net;
  FitResult fit;
};

/// VGG-style shadow trained on shadow_in, early-stopped on shadow_out.
ShadowResult train_shadow(const LabeledDataset& shadow_in, const LabeledDataset& shadow_out,
                          const ExperimentConfig& cfg, const EpochCallback& on_epoch = {});

struct AttackSetup {
  ShadowSummary summary;
  Network<float> shadow;
  AttackModel attack;
};

/// Shadow datasets, shadow model and attack model for one dataset.
AttackSetup prepare_attack(const LabeledDataset& train, const ExperimentConfig& cfg, const RunHooks& hooks = {});

/// Test accuracy, attack metrics and confidences of one trained target.
VariantResult assess_target(Variant v, const TargetResult& target, const DatasetPair& data, const AttackModel& attack,
                            const ExperimentConfig& cfg, AttackEvaluation* evaluation = nullptr);

/// Dropout variants against the others; empty unless both groups have two
/// or more rows.
std::optional<TTestResult> dropout_ttest(const std::vector<VariantResult>& rows);

/// Full pipeline; writes report.json, timings.json, checkpoints/ (targets,
/// shadow and attack) and roc/
/// under cfg.output_dir. On failure the partial report is written with
/// status "failed" and a StageError is thrown.
RunReport run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {});

void save_report(const std::filesystem::path& path, const RunReport& report);
RunReport load_report(const std::filesystem::path& path);

void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc);
RocCurve read_roc_csv(const std::filesystem::path& path);

nlohmann::json history_to_json(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> history_from_json(const nlohmann::json& j);
nlohmann::json privacy_to_json(const PrivacySpent& p);
PrivacySpent privacy_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);
void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

}  // namespace privleak
