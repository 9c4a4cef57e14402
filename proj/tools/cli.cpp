#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include "privleak/checkpoint.hpp"
#include "privleak/config.hpp"
#include "privleak/experiment.hpp"
#include "privleak/report.hpp"

namespace privleak::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kTargetsSchemaVersion = 1;

/// Flags shared by train, attack and run; only flags actually given end up
/// in the override patch.
struct ConfigFlags {
  std::string config_path;
  std::string dataset;
  std::vector<std::string> variants;
  std::string data_dir;
  std::string output_dir;
  std::uint64_t seed_data = 0, seed_init = 0, seed_attack = 0;
  double clip_norm = 0, noise_multiplier = 0, learning_rate = 0, delta = 0;
  Index batch_size = 0;
  int max_epochs = 0, patience = 0;
  Index train_limit = 0, test_limit = 0, n_eval = 0;
  bool quiet = false;
  bool verbose = false;

  std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> patches;

  template <typename T>
  void add(CLI::App* app, const std::string& flag, T& target, const std::string& help,
           std::function<void(json&, const T&)> apply) {
    auto* opt = app->add_option(flag, target, help);
    patches.emplace_back(opt, [&target, apply](json& j) { apply(j, target); });
  }

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    add<std::string>(app, "--dataset", dataset, "mnist or cifar10",
                     [](json& j, const std::string& v) { j["dataset"] = v; });
    add<std::vector<std::string>>(app, "--variant", variants,
                                  "Variant to train (repeatable): vanilla, dropout, dp, dp_dropout",
                                  [](json& j, const std::vector<std::string>& v) { j["variants"] = v; });
    add<std::string>(app, "--data-dir", data_dir, "Directory holding mnist/ and cifar10/",
                     [](json& j, const std::string& v) { j["data_dir"] = v; });
    add<std::string>(app, "-o,--output", output_dir, "Output directory",
                     [](json& j, const std::string& v) { j["output_dir"] = v; });
    add<std::uint64_t>(app, "--seed-data", seed_data, "Seed for shadow data construction",
                       [](json& j, const std::uint64_t& v) { j["seeds"]["data"] = v; });
    add<std::uint64_t>(app, "--seed-init", seed_init, "Seed for initialization and training",
                       [](json& j, const std::uint64_t& v) { j["seeds"]["init"] = v; });
    add<std::uint64_t>(app, "--seed-attack", seed_attack, "Seed for the attack model and evaluation",
                       [](json& j, const std::uint64_t& v) { j["seeds"]["attack"] = v; });
    add<double>(app, "--clip-norm", clip_norm, "DP clipping norm C",
                [](json& j, const double& v) { j["dp"]["clip_norm"] = v; });
    add<double>(app, "--noise-multiplier", noise_multiplier, "DP noise multiplier sigma",
                [](json& j, const double& v) { j["dp"]["noise_multiplier"] = v; });
    add<double>(app, "--learning-rate", learning_rate, "Target learning rate",
                [](json& j, const double& v) { j["dp"]["learning_rate"] = v; });
    add<Index>(app, "--batch-size", batch_size, "Target batch size",
               [](json& j, const Index& v) { j["dp"]["batch_size"] = v; });
    add<double>(app, "--delta", delta, "DP delta", [](json& j, const double& v) { j["dp"]["delta"] = v; });
    add<int>(app, "--max-epochs", max_epochs, "Epoch bound for target training",
             [](json& j, const int& v) { j["max_epochs"] = v; });
    add<int>(app, "--patience", patience, "Early-stopping patience",
             [](json& j, const int& v) { j["patience"] = v; });
    add<Index>(app, "--train-limit", train_limit, "Use only the first N training images (0 = all)",
               [](json& j, const Index& v) { j["train_limit"] = v; });
    add<Index>(app, "--test-limit", test_limit, "Use only the first N test images (0 = all)",
               [](json& j, const Index& v) { j["test_limit"] = v; });
    add<Index>(app, "--n-eval", n_eval, "Members and non-members drawn for each attack evaluation",
               [](json& j, const Index& v) { j["n_eval"] = v; });
    app->add_flag("-q,--quiet", quiet, "No progress output");
    app->add_flag("-v,--verbose", verbose, "Also report attack-model epochs");
  }

  ExperimentConfig resolve() const {
    json patch = json::object();
    for (const auto& [opt, apply] : patches)
      if (opt->count() > 0) apply(patch);
    auto cfg = parse_config(config_path, patch);
    if (cfg.output_dir.empty()) cfg.output_dir = fs::path("runs") / std::string(to_string(cfg.dataset));
    return cfg;
  }
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel)
      : out_(out), err_(err), cancel_(cancel) {}

  RunHooks hooks(const ExperimentConfig& cfg, const ConfigFlags& flags) const {
    RunHooks h;
    h.cancel = cancel_;
    if (flags.quiet) return h;
    const std::string tag(to_string(cfg.dataset));
    const bool verbose = flags.verbose;
    const int max_epochs = cfg.max_epochs;
    const int shadow_epochs = cfg.shadow.max_epochs;
    std::ostream& err = err_;
    h.on_stage = [&err, tag](const std::string& stage) { err << fmt::format("[{}] {}\n", tag, stage) << std::flush; };
    h.on_epoch = [&err, tag, verbose, max_epochs, shadow_epochs](const std::string& stage, const EpochRecord& e) {
      if (stage == "attack_model") {
        if (verbose) err << fmt::format("[{}] {} epoch {} val_acc {:.4f}\n", tag, stage, e.epoch, e.monitor);
        return;
      }
      const bool shadow = stage == "shadow";
      err << fmt::format("[{}] {} epoch {}/{} loss {:.4f} {} {:.4f}\n", tag, stage, e.epoch,
                         shadow ? shadow_epochs : max_epochs, e.train_loss, shadow ? "shadow_out_acc" : "test_acc",
                         e.monitor)
          << std::flush;
    };
    return h;
  }

  bool check_dataset(const ExperimentConfig& cfg) const {
    const auto dir = dataset_dir(cfg);
    if (fs::is_directory(dir)) return true;
    err_ << fmt::format("error: dataset directory not found: {} (set --data-dir or {})\n", dir.string(),
                        kDataDirEnv);
    return false;
  }

  int cmd_run(const ConfigFlags& flags) const {
    const auto cfg = flags.resolve();
    if (!check_dataset(cfg)) return kUsage;
    const auto report = run_experiment(cfg, hooks(cfg, flags));
    print_rows(report.config.dataset, report.rows);
    if (report.ttest)
      out_ << fmt::format("t-test dropout > no dropout: t {:.4f} df {} p {:.6f}\n", report.ttest->t,
                          report.ttest->df, report.ttest->p);
    out_ << fmt::format("report written to {}\n", (cfg.output_dir / "report.json").string());
    return kOk;
  }

  int cmd_train(const ConfigFlags& flags) const {
    const auto cfg = flags.resolve();
    if (!check_dataset(cfg)) return kUsage;
    const auto h = hooks(cfg, flags);
    fs::create_directories(cfg.output_dir / "checkpoints");
    if (h.on_stage) h.on_stage("load_data");
    const auto data = load_experiment_data(cfg);
    json targets = json::array();
    for (Variant v : cfg.variants) {
      const std::string name(to_string(v));
      if (h.on_stage) h.on_stage("target/" + name);
      const auto target = train_target(v, data, cfg, [&](const EpochRecord& e) {
        if (h.on_epoch) h.on_epoch("target/" + name, e);
        if (cancel_ && cancel_->load()) throw Error("interrupted");
      });
      save_checkpoint(cfg.output_dir / "checkpoints" / (name + ".nncp"), target.net);
      const double acc = target.fit.best_monitor;
      targets.push_back({{"variant", name},
                         {"test_accuracy", acc},
                         {"best_epoch", target.fit.best_epoch},
                         {"history", history_to_json(target.fit.history)},
                         {"privacy", target.privacy ? privacy_to_json(*target.privacy) : json(nullptr)}});
      std::string line = fmt::format("{:<11} test_acc {} epochs {} best {}", name, format3(100.0 * acc),
                                     target.fit.history.size(), target.fit.best_epoch);
      if (target.privacy) line += fmt::format(" epsilon {:.4f}", target.privacy->epsilon);
      out_ << line << "\n";
    }
    json doc = {{"schema_version", kTargetsSchemaVersion}, {"config", json(cfg)}, {"targets", targets}};
    std::ofstream(cfg.output_dir / "targets.json") << doc.dump(2) << "\n";
    out_ << fmt::format("checkpoints written to {}\n", (cfg.output_dir / "checkpoints").string());
    return kOk;
  }

  int cmd_attack(const ConfigFlags& flags, const std::string& targets_dir_flag) const {
    const auto cfg = flags.resolve();
    if (!check_dataset(cfg)) return kUsage;
    const fs::path targets_dir = targets_dir_flag.empty() ? cfg.output_dir : fs::path(targets_dir_flag);
    const auto index_path = targets_dir / "targets.json";
    std::ifstream in(index_path);
    if (!in) {
      err_ << fmt::format("error: {} not found; run `privleak train` first or pass --targets\n", index_path.string());
      return kUsage;
    }
    json index;
    try {
      index = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError(index_path.string() + ": malformed JSON: " + e.what());
    }
    if (index.value("schema_version", 0) != kTargetsSchemaVersion)
      throw SchemaError(index_path.string() + ": unsupported schema_version");
    ExperimentConfig trained;
    from_json(index.at("config"), trained);
    if (trained.dataset != cfg.dataset)
      throw ConfigError(fmt::format("targets in {} were trained on {}, not {}", targets_dir.string(),
                                    to_string(trained.dataset), to_string(cfg.dataset)));

    const auto h = hooks(cfg, flags);
    if (h.on_stage) h.on_stage("load_data");
    const auto data = load_experiment_data(cfg);
    const auto setup = prepare_attack(data.train, cfg, h);

    RunReport report;
    report.config = cfg;
    report.shadow = setup.summary;
    fs::create_directories(cfg.output_dir / "roc");
    for (Variant v : cfg.variants) {
      const std::string name(to_string(v));
      const auto it = std::find_if(index.at("targets").begin(), index.at("targets").end(),
                                   [&](const json& t) { return t.at("variant") == name; });
      if (it == index.at("targets").end())
        throw ConfigError(fmt::format("no trained '{}' target in {}", name, index_path.string()));
      if (h.on_stage) h.on_stage("evaluate/" + name);
      TargetResult target{load_checkpoint(targets_dir / "checkpoints" / (name + ".nncp")), {}, {}};
      target.fit.history = history_from_json(it->at("history"));
      target.fit.best_epoch = it->at("best_epoch").get<int>();
      target.fit.best_monitor = it->at("test_accuracy").get<double>();
      if (!it->at("privacy").is_null()) target.privacy = privacy_from_json(it->at("privacy"));
      AttackEvaluation eval;
      report.rows.push_back(assess_target(v, target, data, setup.attack, cfg, &eval));
      write_roc_csv(cfg.output_dir / "roc" / (name + ".csv"), eval.roc);
      std::ofstream(cfg.output_dir / "roc" / (name + ".svg"))
          << render_roc_svg({{name, eval.roc}}, std::string(to_string(cfg.dataset)) + " " + name);
    }
    report.ttest = dropout_ttest(report.rows);
    save_report(cfg.output_dir / "report.json", report);
    print_rows(cfg.dataset, report.rows);
    out_ << fmt::format("report written to {}\n", (cfg.output_dir / "report.json").string());
    return kOk;
  }

  int cmd_report(const std::vector<std::string>& paths, const std::string& output, bool as_csv) const {
    std::vector<RunReport> reports;
    for (const auto& p : paths) reports.push_back(load_report(p));
    const auto entries = collect_entries(reports);
    if (as_csv) {
      out_ << render_summary_csv(entries) << "\n" << render_ratio_csv(entries);
    } else {
      out_ << "Test accuracy and attack efficacy (%)\n" << render_summary_text(entries) << "\n";
      out_ << "Ratio of attack efficacy to test accuracy\n" << render_ratio_text(entries);
    }
    std::vector<double> with, without;
    for (const auto& e : entries) (uses_dropout(e.variant) ? with : without).push_back(e.attack_efficacy);
    if (with.size() >= 2 && without.size() >= 2) {
      const auto t = t_test_independent(with, without, Tails::one);
      out_ << fmt::format("\nt-test dropout > no dropout (pooled, one-tailed): t {:.4f} df {} p {:.6f}\n", t.t, t.df,
                          t.p);
    }
    if (output.empty()) return kOk;

    const fs::path dir(output);
    fs::create_directories(dir);
    std::ofstream(dir / "summary.csv") << render_summary_csv(entries);
    std::ofstream(dir / "ratios.csv") << render_ratio_csv(entries);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      std::vector<NamedCurve> curves;
      for (const auto& row : r.rows) {
        const auto csv = fs::path(paths[i]).parent_path() / "roc" / (std::string(to_string(row.variant)) + ".csv");
        if (!fs::exists(csv)) {
          err_ << fmt::format("warning: {} missing; curve skipped\n", csv.string());
          continue;
        }
        curves.push_back({variant_label(row.variant), read_roc_csv(csv)});
      }
      const std::string dataset(to_string(r.config.dataset));
      const auto svg = dir / fmt::format("roc_{}.svg", dataset);
      std::ofstream(svg) << render_roc_svg(curves, "ROC of the membership attack, " + dataset);
    }
    out_ << fmt::format("tables and plots written to {}\n", dir.string());
    return kOk;
  }

  int cmd_epsilon(std::int64_t n, const DpConfig& dp, double epochs) const {
    dp.validate();
    const auto p = compute_epsilon(n, dp, epochs);
    out_ << fmt::format("epsilon {:.6f} delta {} order {} steps {} sampling_rate {:.6g}\n", p.epsilon, p.delta,
                        p.order, p.steps, p.sampling_rate);
    return kOk;
  }

 private:
  void print_rows(Source dataset, const std::vector<VariantResult>& rows) const {
    for (const auto& r : rows) {
      std::string line = fmt::format("{} {:<11} test_acc {} efficacy {} auc {} ratio {}", to_string(dataset),
                                     to_string(r.variant), format3(100.0 * r.test_accuracy),
                                     format3(100.0 * r.attack_efficacy), format3(r.auc), format3(r.ratio));
      if (r.privacy) line += fmt::format(" epsilon {:.4f}", r.privacy->epsilon);
      out_ << line << "\n";
    }
  }

  std::ostream& out_;
  std::ostream& err_;
  const std::atomic<bool>* cancel_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  CLI::App app{"Membership-inference bench for dropout and DP-SGD trained LeNet-5 models", "privleak"};
  app.require_subcommand(1);

  ConfigFlags run_flags, train_flags, attack_flags;
  auto* run_cmd = app.add_subcommand("run", "Train every variant, attack them and write report.json");
  run_flags.attach(run_cmd);
  auto* train_cmd = app.add_subcommand("train", "Train target variants and save checkpoints");
  train_flags.attach(train_cmd);
  auto* attack_cmd = app.add_subcommand("attack", "Train shadow and attack models against saved targets");
  attack_flags.attach(attack_cmd);
  std::string targets_dir;
  attack_cmd->add_option("--targets", targets_dir, "Directory written by `privleak train` (default: output dir)");

  auto* report_cmd = app.add_subcommand("report", "Render tables and ROC plots from report files");
  std::vector<std::string> report_paths;
  std::string report_output;
  bool report_csv = false;
  report_cmd->add_option("reports", report_paths, "report.json files")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("-o,--output", report_output, "Write summary.csv, ratios.csv and roc_<dataset>.svg here");
  report_cmd->add_flag("--csv", report_csv, "Print CSV instead of aligned text");

  auto* eps_cmd = app.add_subcommand("epsilon", "Privacy spent by DP-SGD");
  std::int64_t eps_n = 60000;
  double eps_epochs = 25.0;
  DpConfig eps_dp;
  eps_cmd->add_option("-n,--examples", eps_n, "Training set size")->capture_default_str();
  eps_cmd->add_option("--epochs", eps_epochs, "Epochs trained")->capture_default_str();
  eps_cmd->add_option("--batch-size", eps_dp.batch_size, "Batch size")->capture_default_str();
  eps_cmd->add_option("--noise-multiplier", eps_dp.noise_multiplier, "Noise multiplier sigma")->capture_default_str();
  eps_cmd->add_option("--delta", eps_dp.delta, "Target delta")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Runner runner(out, err, cancel);
  try {
    if (*run_cmd) return runner.cmd_run(run_flags);
    if (*train_cmd) return runner.cmd_train(train_flags);
    if (*attack_cmd) return runner.cmd_attack(attack_flags, targets_dir);
    if (*report_cmd) return runner.cmd_report(report_paths, report_output, report_csv);
    if (*eps_cmd) return runner.cmd_epsilon(eps_n, eps_dp, eps_epochs);
  } catch (const StageError& e) {
    err << fmt::format("error: stage {} failed: {}\n", e.stage(), e.what());
    return e.config_error() ? kUsage : kPipelineFailure;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kPipelineFailure;
  }
  return kUsage;
}

}  // namespace privleak::cli
