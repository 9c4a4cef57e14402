#include "privleak/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

namespace privleak {

namespace {

constexpr std::array<Source, 2> kColumnOrder{Source::cifar10, Source::mnist};

std::string dataset_label(Source s) { return s == Source::mnist ? "MNIST" : "CIFAR-10"; }

using Grid = std::map<std::pair<Variant, Source>, SummaryEntry>;

struct Layout {
  std::vector<Variant> variants;
  std::vector<Source> datasets;
  Grid grid;
};

Layout layout(const std::vector<SummaryEntry>& entries) {
  Layout l;
  for (const auto& e : entries) l.grid[{e.variant, e.dataset}] = e;
  for (Variant v : kAllVariants)
    if (std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.variant == v; }))
      l.variants.push_back(v);
  for (Source s : kColumnOrder)
    if (std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.dataset == s; }))
      l.datasets.push_back(s);
  return l;
}

std::string aligned(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c == 0)
        line += fmt::format("{:<{}}", cells[r][c], width[c]);
      else
        line += fmt::format("  {:>{}}", cells[r][c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  return out;
}

template <typename Cell>
std::vector<std::vector<std::string>> table(const Layout& l, const std::vector<std::string>& header,
                                            bool label_rows, Cell cell) {
  std::vector<std::vector<std::string>> rows{header};
  for (Variant v : l.variants) {
    std::vector<std::string> row{label_rows ? variant_label(v) : std::string(to_string(v))};
    for (Source s : l.datasets) {
      const auto it = l.grid.find({v, s});
      for (auto& text : cell(it == l.grid.end() ? nullptr : &it->second)) row.push_back(std::move(text));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += "\n";
  }
  return out;
}

std::string pct(double fraction) { return format3(100.0 * fraction); }

std::vector<std::string> summary_cells(const SummaryEntry* e, const std::string& missing) {
  if (!e) return {missing, missing};
  return {pct(e->test_accuracy), pct(e->attack_efficacy)};
}

std::vector<std::string> ratio_cells(const SummaryEntry* e, const std::string& missing) {
  return {e ? format3(e->ratio) : missing};
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::vanilla: return "Vanilla LeNet-5";
    case Variant::dropout: return "LeNet-5 with dropout";
    case Variant::dp: return "LeNet-5 with DP";
    case Variant::dp_dropout: return "LeNet-5 with DP & dropout";
  }
  return "?";
}

std::vector<SummaryEntry> collect_entries(const std::vector<RunReport>& reports) {
  std::vector<SummaryEntry> out;
  for (const auto& r : reports) {
    if (!r.complete())
      throw ConfigError("report for " + std::string(to_string(r.config.dataset)) + " is marked failed at stage '" +
                        r.failed_stage + "'");
    for (const auto& row : r.rows) {
      const bool seen = std::any_of(out.begin(), out.end(), [&](const SummaryEntry& e) {
        return e.dataset == r.config.dataset && e.variant == row.variant;
      });
      if (seen)
        throw ConfigError("two reports contain " + std::string(to_string(r.config.dataset)) + "/" +
                          std::string(to_string(row.variant)));
      out.push_back({r.config.dataset, row.variant, row.test_accuracy, row.attack_efficacy, row.auc, row.ratio});
    }
  }
  return out;
}

std::string render_summary_text(const std::vector<SummaryEntry>& entries) {
  const auto l = layout(entries);
  std::vector<std::string> header{""};
  for (Source s : l.datasets) {
    header.push_back(dataset_label(s) + " Test");
    header.push_back("Attack Efficacy");
  }
  return aligned(table(l, header, true, [](const SummaryEntry* e) { return summary_cells(e, "-"); }));
}

std::string render_summary_csv(const std::vector<SummaryEntry>& entries) {
  const auto l = layout(entries);
  std::vector<std::string> header{"variant"};
  for (Source s : l.datasets) {
    header.push_back(std::string(to_string(s)) + "_test_accuracy");
    header.push_back(std::string(to_string(s)) + "_attack_efficacy");
  }
  return csv(table(l, header, false, [](const SummaryEntry* e) { return summary_cells(e, ""); }));
}

std::string render_ratio_text(const std::vector<SummaryEntry>& entries) {
  const auto l = layout(entries);
  std::vector<std::string> header{""};
  for (Source s : l.datasets) header.push_back(dataset_label(s));
  return aligned(table(l, header, true, [](const SummaryEntry* e) { return ratio_cells(e, "-"); }));
}

std::string render_ratio_csv(const std::vector<SummaryEntry>& entries) {
  const auto l = layout(entries);
  std::vector<std::string> header{"variant"};
  for (Source s : l.datasets) header.push_back(std::string(to_string(s)) + "_ratio");
  return csv(table(l, header, false, [](const SummaryEntry* e) { return ratio_cells(e, ""); }));
}

CsvTable parse_table_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw FormatError(fmt::format("CSV line {}: {} cells, header has {}", line_no, cells.size(), t.header.size()));
    t.keys.push_back(cells[0]);
    std::vector<std::optional<double>> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        row.emplace_back();
        continue;
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[c].size())
        throw FormatError(fmt::format("CSV line {}: '{}' is not a number", line_no, cells[c]));
      row.push_back(v);
    }
    t.values.push_back(std::move(row));
  }
  if (t.header.empty()) throw FormatError("CSV table is empty");
  return t;
}

std::string render_roc_svg(const std::vector<NamedCurve>& curves, const std::string& title) {
  constexpr double kSize = 600.0, kLeft = 70.0, kRight = 30.0, kTop = 40.0, kBottom = 60.0;
  constexpr double kW = kSize - kLeft - kRight, kH = kSize - kTop - kBottom;
  static constexpr std::array<const char*, 6> kColors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                      "#8c564b"};
  auto px = [&](double fpr) { return kLeft + fpr * kW; };
  auto py = [&](double tpr) { return kTop + (1.0 - tpr) * kH; };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
      "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n"
      "<text x=\"300\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n"
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
      xml_escape(title), kLeft, kTop, kW, kH);
  for (int k = 0; k <= 10; k += 2) {
    const double v = k / 10.0;
    s += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.1f}</text>\n",
        px(v), kTop + kH + 16, v);
    s += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.1f}</text>\n",
        kLeft - 6, py(v) + 4, v);
  }
  s += fmt::format(
      "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      "False positive rate</text>\n",
      kLeft + kW / 2, kSize - 18);
  s += fmt::format(
      "<text transform=\"translate(18,{:.1f}) rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      "font-size=\"13\">True positive rate</text>\n",
      kTop + kH / 2);
  s += fmt::format(
      "<line class=\"diagonal\" x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"gray\" "
      "stroke-dasharray=\"6,4\"/>\n",
      px(0), py(0), px(1), py(1));

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kColors[i % kColors.size()];
    std::string pts;
    std::string last;
    for (const auto& p : curves[i].roc.points) {
      auto xy = fmt::format("{:.1f},{:.1f}", px(p.fpr), py(p.tpr));
      if (xy == last) continue;
      pts += (pts.empty() ? "" : " ") + xy;
      last = std::move(xy);
    }
    s += fmt::format("<polyline class=\"roc\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color,
                     pts);
    const double ly = kTop + kH - 20.0 - 18.0 * static_cast<double>(curves.size() - 1 - i);
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                     kLeft + kW - 220, ly, kLeft + kW - 196, ly, color);
    s += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"12\">{} (AUC {})</text>\n",
        kLeft + kW - 190, ly + 4, xml_escape(curves[i].name), format3(curves[i].roc.auc));
  }
  s += "</svg>\n";
  return s;
}

}  // namespace privleak
