#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "privleak/experiment.hpp"

namespace privleak {

/// Row label used in the rendered tables ("LeNet-5 with DP & dropout").
std::string variant_label(Variant v);

/// One (dataset, variant) cell pair gathered from one or more reports.
struct SummaryEntry {
  Source dataset = Source::mnist;
  Variant variant = Variant::vanilla;
  double test_accuracy = 0.0;
  double attack_efficacy = 0.0;
  double auc = 0.0;
  double ratio = 0.0;
};

/// Complete reports only; a (dataset, variant) pair seen twice is a ConfigError.
std::vector<SummaryEntry> collect_entries(const std::vector<RunReport>& reports);

/// Accuracy/efficacy per dataset, in percent, CIFAR-10 columns first.
std::string render_summary_text(const std::vector<SummaryEntry>& entries);
std::string render_summary_csv(const std::vector<SummaryEntry>& entries);
/// Efficacy / accuracy per dataset.
std::string render_ratio_text(const std::vector<SummaryEntry>& entries);
std::string render_ratio_csv(const std::vector<SummaryEntry>& entries);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::string> keys;                            // first column
  std::vector<std::vector<std::optional<double>>> values;  // empty cell = nullopt
};

/// Parses the CSV emitted above; throws FormatError on ragged rows or bad numbers.
CsvTable parse_table_csv(const std::string& text);

struct NamedCurve {
  std::string name;
  RocCurve roc;
};

/// Overlaid ROC polylines on a 600x600 canvas with the random-guess diagonal.
std::string render_roc_svg(const std::vector<NamedCurve>& curves, const std::string& title);

}  // namespace privleak
