#include "privleak/experiment.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "privleak/checkpoint.hpp"
#include "privleak/report.hpp"

namespace privleak {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sub-stream ids for derive_seed.
constexpr std::uint64_t kShadowSplitStream = 0;
constexpr std::uint64_t kShadowInitStream = 50;
constexpr std::uint64_t kShadowTrainStream = 51;
constexpr std::uint64_t kSubsampleStream = 0;
constexpr std::uint64_t kAttackModelStream = 1;

std::uint64_t variant_id(Variant v) { return static_cast<std::uint64_t>(v); }

/// Reads an object field by field, remembering which keys were consumed so
/// leftovers can be reported.
class FieldReader {
 public:
  FieldReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError((prefix_.empty() ? "config" : "'" + prefix_ + "'") + " must be a JSON object");
  }

  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json* find(const std::string& key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    if constexpr (std::is_unsigned_v<T>) {
      if (!v->is_number_unsigned()) throw ConfigError("field '" + name(key) + "' must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v->is_number_integer()) throw ConfigError("field '" + name(key) + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError("field '" + name(key) + "' must be a number");
    }
    try {
      v->get_to(out);
    } catch (const json::exception&) {
      throw ConfigError("field '" + name(key) + "' has the wrong type (" + v->type_name() + ")");
    }
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!known_.count(item.key())) throw ConfigError("unknown field '" + name(item.key()) + "'");
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> known_;
};

void check_finite(const json& j, const std::string& path) {
  if (j.is_number_float() && !std::isfinite(j.get<double>()))
    throw NumericError("report field '" + path + "' is not finite");
  if (j.is_object())
    for (const auto& item : j.items()) check_finite(item.value(), path.empty() ? item.key() : path + "." + item.key());
  if (j.is_array())
    for (std::size_t i = 0; i < j.size(); ++i) check_finite(j[i], path + "[" + std::to_string(i) + "]");
}

json privacy_json(const PrivacySpent& p) {
  return {{"epsilon", p.epsilon}, {"delta", p.delta}, {"steps", p.steps}, {"sampling_rate", p.sampling_rate},
          {"order", p.order}};
}

PrivacySpent privacy_from(const json& j) {
  PrivacySpent p;
  p.epsilon = j.at("epsilon").get<double>();
  p.delta = j.at("delta").get<double>();
  p.steps = j.at("steps").get<std::int64_t>();
  p.sampling_rate = j.at("sampling_rate").get<double>();
  p.order = j.at("order").get<double>();
  return p;
}

json history_json(const std::vector<EpochRecord>& h) {
  json out = json::array();
  for (const auto& e : h) out.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"monitor", e.monitor}});
  return out;
}

std::vector<EpochRecord> history_from(const json& j) {
  std::vector<EpochRecord> h;
  for (const auto& e : j)
    h.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("monitor").get<double>()});
  return h;
}

json ttest_json(const TTestResult& t) {
  return {{"t", t.t}, {"df", t.df}, {"p", t.p}, {"tails", std::string(to_string(t.tails))}};
}

TTestResult ttest_from(const json& j) {
  TTestResult t;
  t.t = j.at("t").get<double>();
  t.df = j.at("df").get<int>();
  t.p = j.at("p").get<double>();
  t.tails = tails_from_string(j.at("tails").get<std::string>());
  return t;
}

class Interrupted : public Error {
 public:
  Interrupted() : Error("interrupted") {}
};

double mean_max_prob(const Tensor<float>& probs) {
  return probs.rows().rowwise().maxCoeff().cast<double>().mean();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::dropout: return "dropout";
    case Variant::dp: return "dp";
    case Variant::dp_dropout: return "dp_dropout";
  }
  return "?";
}

Variant variant_from_string(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected vanilla, dropout, dp or dp_dropout)");
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("variants must name at least one variant");
  std::set<Variant> seen;
  for (Variant v : variants)
    if (!seen.insert(v).second) throw ConfigError("variants lists '" + std::string(to_string(v)) + "' twice");
  try {
    dp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dp.") + e.what());
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1, got " + std::to_string(max_epochs));
  if (patience < 1) throw ConfigError("patience must be at least 1, got " + std::to_string(patience));
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
  if (!(input_dropout_rate >= 0.0 && input_dropout_rate < 1.0))
    throw ConfigError("input_dropout_rate must lie in [0,1)");
  if (n_eval < 1) throw ConfigError("n_eval must be at least 1, got " + std::to_string(n_eval));
  if (!(shadow.learning_rate > 0.0)) throw ConfigError("shadow.learning_rate must be positive");
  if (shadow.batch_size < 1) throw ConfigError("shadow.batch_size must be at least 1");
  if (shadow.max_epochs < 1) throw ConfigError("shadow.max_epochs must be at least 1");
  attack.validate();
  if (train_limit < 0) throw ConfigError("train_limit must be non-negative");
  if (test_limit < 0) throw ConfigError("test_limit must be non-negative");
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
}

Shape input_shape(Source source) { return {kImageSide, kImageSide, source == Source::mnist ? 1 : 3}; }

NetworkSpec target_spec(Variant v, Source source, const ExperimentConfig& cfg) {
  auto spec = lenet5(input_shape(source), uses_dropout(v), cfg.dropout_rate, cfg.input_dropout_rate, kClasses);
  spec.name = std::string(to_string(source)) + "_" + std::string(to_string(v));
  return spec;
}

const VariantResult* RunReport::find(Variant v) const {
  for (const auto& r : rows)
    if (r.variant == v) return &r;
  return nullptr;
}

fs::path dataset_dir(const ExperimentConfig& cfg) { return cfg.data_dir / std::string(to_string(cfg.dataset)); }

DatasetPair load_experiment_data(const ExperimentConfig& cfg) {
  auto [train, test] = load_dataset(cfg.dataset, dataset_dir(cfg));
  return {head(train, cfg.train_limit), head(test, cfg.test_limit)};
}

TargetResult train_target(Variant v, const DatasetPair& data, const ExperimentConfig& cfg,
                          const EpochCallback& on_epoch) {
  if (data.train.source != cfg.dataset || data.test.source != cfg.dataset)
    throw ConfigError("train_target: data is " + std::string(to_string(data.train.source)) + " but the config names " +
                      std::string(to_string(cfg.dataset)));
  if (data.train.channels() != input_shape(cfg.dataset)[2])
    throw ShapeError("train_target: images have " + std::to_string(data.train.channels()) + " channels");

  TargetResult result{build_network<float>(target_spec(v, cfg.dataset, cfg), derive_seed(cfg.seeds.init, variant_id(v) + 1)), {}, {}};
  FitOptions options;
  options.max_epochs = cfg.max_epochs;
  options.patience = cfg.patience;
  options.min_delta = cfg.min_delta;
  options.batch_size = cfg.dp.batch_size;
  options.learning_rate = cfg.dp.learning_rate;
  if (uses_dp(v)) options.dp = cfg.dp;

  const MonitorFn monitor = [&](const Network<float>& net) {
    return accuracy(predict(net, data.test.images), data.test.labels);
  };
  Rng rng(derive_seed(cfg.seeds.init, 100 + variant_id(v)));
  result.fit = fit(result.net, data.train.images, data.train.labels, monitor, options, rng, on_epoch);
  if (uses_dp(v)) result.privacy = compute_epsilon(data.train.size(), cfg.dp, result.fit.best_epoch);
  return result;
}

ShadowResult train_shadow(const LabeledDataset& shadow_in, const LabeledDataset& shadow_out,
                          const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  if (shadow_in.split != Split::shadow_in || shadow_out.split != Split::shadow_out)
    throw ConfigError("train_shadow needs the shadow_in and shadow_out splits");
  ShadowResult result{build_network<float>(vgg_shadow(input_shape(cfg.dataset), kClasses),
                                           derive_seed(cfg.seeds.init, kShadowInitStream)), {}};
  FitOptions options;
  options.max_epochs = cfg.shadow.max_epochs;
  options.patience = cfg.patience;
  options.min_delta = cfg.min_delta;
  options.batch_size = cfg.shadow.batch_size;
  options.learning_rate = cfg.shadow.learning_rate;
  const MonitorFn monitor = [&](const Network<float>& net) {
    return accuracy(predict(net, shadow_out.images, 250), shadow_out.labels);
  };
  Rng rng(derive_seed(cfg.seeds.init, kShadowTrainStream));
  result.fit = fit(result.net, shadow_in.images, shadow_in.labels, monitor, options, rng, on_epoch);
  return result;
}

AttackSetup prepare_attack(const LabeledDataset& train, const ExperimentConfig& cfg, const RunHooks& hooks) {
  auto stage = [&](const char* name) {
    if (hooks.on_stage) hooks.on_stage(name);
  };
  stage("shadow_data");
  Rng split_rng(derive_seed(cfg.seeds.data, kShadowSplitStream));
  const auto [shadow_in, shadow_out] = build_shadow_datasets(train, split_rng);

  stage("shadow");
  const auto shadow = train_shadow(shadow_in, shadow_out, cfg, [&](const EpochRecord& e) {
    if (hooks.on_epoch) hooks.on_epoch("shadow", e);
    if (hooks.cancel && hooks.cancel->load()) throw Interrupted();
  });

  stage("attack_model");
  Rng sub_rng(derive_seed(cfg.seeds.attack, kSubsampleStream));
  const auto records = build_attack_dataset(shadow.net, shadow_in, shadow_out, sub_rng);
  AttackSetup setup;
  setup.attack = train_attack_model(records, derive_seed(cfg.seeds.attack, kAttackModelStream), cfg.attack,
                                    [&](int epoch, double acc) {
                                      if (hooks.on_epoch) hooks.on_epoch("attack_model", {epoch, 0.0, acc});
                                      if (hooks.cancel && hooks.cancel->load()) throw Interrupted();
                                    });
  setup.shadow = shadow.net;
  auto& s = setup.summary;
  s.in_size = shadow_in.size();
  s.out_size = shadow_out.size();
  s.out_accuracy = shadow.fit.best_monitor;
  s.epochs_trained = static_cast<int>(shadow.fit.history.size());
  s.best_epoch = shadow.fit.best_epoch;
  s.history = shadow.fit.history;
  s.attack_records = static_cast<Index>(records.size());
  s.attack_validation_accuracy = setup.attack.validation_accuracy;
  s.attack_epochs = setup.attack.epochs_trained;
  return setup;
}

VariantResult assess_target(Variant v, const TargetResult& target, const DatasetPair& data, const AttackModel& attack,
                            const ExperimentConfig& cfg, AttackEvaluation* evaluation) {
  VariantResult r;
  r.variant = v;
  const auto test_probs = predict(target.net, data.test.images);
  r.test_accuracy = accuracy(test_probs, data.test.labels);
  r.test_confidence = mean_max_prob(test_probs);
  r.privacy = target.privacy;
  r.epochs_trained = static_cast<int>(target.fit.history.size());
  r.best_epoch = target.fit.best_epoch;
  r.history = target.fit.history;

  Rng eval_rng(derive_seed(cfg.seeds.attack, 10 + variant_id(v)));
  const auto eval = evaluate_attack(attack, target.net, data.train, data.test, cfg.n_eval, eval_rng);
  r.attack_efficacy = eval.efficacy;
  r.auc = eval.roc.auc;
  r.ratio = efficacy_ratio(r.attack_efficacy, r.test_accuracy);

  if (uses_dropout(v)) {
    Rng mc_rng(derive_seed(cfg.seeds.init, 200 + variant_id(v)));
    const auto sample = head(data.test, 1000);
    const auto mc = mc_predict(target.net, sample.images, cfg.mc_samples, mc_rng);
    r.mc_confidence = mc.confidence.cast<double>().mean();
  }
  if (evaluation) *evaluation = eval;
  return r;
}

std::optional<TTestResult> dropout_ttest(const std::vector<VariantResult>& rows) {
  std::vector<double> with, without;
  for (const auto& r : rows) (uses_dropout(r.variant) ? with : without).push_back(r.attack_efficacy);
  if (with.size() < 2 || without.size() < 2) return std::nullopt;
  return t_test_independent(with, without, Tails::one);
}

RunReport run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks) {
  cfg.validate();
  RunReport report;
  report.config = cfg;
  const fs::path out = cfg.output_dir;
  json timings = json::object();
  std::string stage = "setup";
  auto clock = std::chrono::steady_clock::now();
  const auto run_start = clock;

  auto enter = [&](std::string name) {
    const auto now = std::chrono::steady_clock::now();
    if (stage != "setup") timings[stage] = std::chrono::duration<double>(now - clock).count();
    clock = now;
    stage = std::move(name);
    if (hooks.on_stage) hooks.on_stage(stage);
  };
  auto epoch_hook = [&](const std::string& name) {
    return [&hooks, name](const EpochRecord& e) {
      if (hooks.on_epoch) hooks.on_epoch(name, e);
      if (hooks.cancel && hooks.cancel->load()) throw Interrupted();
    };
  };
  auto write_timings = [&]() {
    if (out.empty()) return;
    timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    write_text(out / "timings.json", timings.dump(2) + "\n");
  };

  try {
    if (!out.empty()) {
      fs::create_directories(out / "checkpoints");
      fs::create_directories(out / "roc");
    }
    enter("load_data");
    const DatasetPair data = load_experiment_data(cfg);

    RunHooks attack_hooks = hooks;
    attack_hooks.on_stage = [&](const std::string& name) { enter(name); };
    const AttackSetup setup = prepare_attack(data.train, cfg, attack_hooks);
    report.shadow = setup.summary;
    if (!out.empty()) {
      save_checkpoint(out / "checkpoints" / "shadow.nncp", setup.shadow);
      save_checkpoint(out / "checkpoints" / "attack.nncp", setup.attack.net);
    }

    for (Variant v : cfg.variants) {
      const std::string name(to_string(v));
      enter("target/" + name);
      const TargetResult target = train_target(v, data, cfg, epoch_hook("target/" + name));
      if (!out.empty()) save_checkpoint(out / "checkpoints" / (name + ".nncp"), target.net);

      enter("evaluate/" + name);
      AttackEvaluation eval;
      report.rows.push_back(assess_target(v, target, data, setup.attack, cfg, &eval));
      if (!out.empty()) {
        write_roc_csv(out / "roc" / (name + ".csv"), eval.roc);
        write_text(out / "roc" / (name + ".svg"),
                   render_roc_svg({{name, eval.roc}}, std::string(to_string(cfg.dataset)) + " " + name));
      }
    }
    enter("write_outputs");
    report.ttest = dropout_ttest(report.rows);
    if (!out.empty()) {
      save_report(out / "report.json", report);
      write_timings();
    }
    return report;
  } catch (const std::exception& e) {
    report.status = "failed";
    report.failed_stage = stage;
    report.error = e.what();
    if (!out.empty()) {
      try {
        save_report(out / "report.json", report);
        write_timings();
      } catch (const std::exception&) {
        // The original error is the one worth surfacing.
      }
    }
    throw StageError(stage, e.what(), dynamic_cast<const ConfigError*>(&e) != nullptr);
  }
}

json history_to_json(const std::vector<EpochRecord>& history) { return history_json(history); }
std::vector<EpochRecord> history_from_json(const json& j) { return history_from(j); }
json privacy_to_json(const PrivacySpent& p) { return privacy_json(p); }
PrivacySpent privacy_from_json(const json& j) { return privacy_from(j); }

void write_roc_csv(const fs::path& path, const RocCurve& roc) {
  std::string text = "threshold,fpr,tpr\n";
  for (const auto& p : roc.points) text += fmt::format("{},{},{}\n", p.threshold, p.fpr, p.tpr);
  write_text(path, text);
}

RocCurve read_roc_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "threshold,fpr,tpr")
    throw FormatError(path.string() + ": expected header 'threshold,fpr,tpr'");
  RocCurve roc;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    try {
      roc.points.push_back({std::stod(a), std::stod(b), std::stod(c)});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  if (roc.points.size() < 2) throw FormatError(path.string() + ": ROC curve needs at least 2 points");
  roc.auc = trapezoid_auc(roc.points);
  return roc;
}

void to_json(json& j, const ExperimentConfig& c) {
  json variants = json::array();
  for (Variant v : c.variants) variants.push_back(std::string(to_string(v)));
  j = {{"dataset", std::string(to_string(c.dataset))},
       {"variants", variants},
       {"dp",
        {{"clip_norm", c.dp.clip_norm},
         {"noise_multiplier", c.dp.noise_multiplier},
         {"learning_rate", c.dp.learning_rate},
         {"batch_size", c.dp.batch_size},
         {"delta", c.dp.delta}}},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"min_delta", c.min_delta},
       {"dropout_rate", c.dropout_rate},
       {"input_dropout_rate", c.input_dropout_rate},
       {"seeds", {{"data", c.seeds.data}, {"init", c.seeds.init}, {"attack", c.seeds.attack}}},
       {"n_eval", c.n_eval},
       {"shadow",
        {{"learning_rate", c.shadow.learning_rate},
         {"batch_size", c.shadow.batch_size},
         {"max_epochs", c.shadow.max_epochs}}},
       {"attack",
        {{"learning_rate", c.attack.learning_rate},
         {"batch_size", c.attack.batch_size},
         {"max_epochs", c.attack.max_epochs},
         {"patience", c.attack.patience},
         {"validation_fraction", c.attack.validation_fraction},
         {"sort_probs", c.attack.sort_probs}}},
       {"train_limit", c.train_limit},
       {"test_limit", c.test_limit},
       {"mc_samples", c.mc_samples},
       {"data_dir", c.data_dir.string()},
       {"output_dir", c.output_dir.string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  FieldReader r(j, "");
  if (const json* v = r.find("dataset")) {
    if (!v->is_string()) throw ConfigError("field 'dataset' must be a string");
    try {
      c.dataset = source_from_string(v->get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("field 'dataset': ") + e.what());
    }
  }
  if (const json* v = r.find("variants")) {
    if (!v->is_array()) throw ConfigError("field 'variants' must be an array of names");
    c.variants.clear();
    for (const auto& name : *v) {
      if (!name.is_string()) throw ConfigError("field 'variants' must be an array of names");
      try {
        c.variants.push_back(variant_from_string(name.get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("field 'variants': ") + e.what());
      }
    }
  }
  if (const json* v = r.find("dp")) {
    FieldReader d(*v, "dp");
    d.get("clip_norm", c.dp.clip_norm);
    d.get("noise_multiplier", c.dp.noise_multiplier);
    d.get("learning_rate", c.dp.learning_rate);
    d.get("batch_size", c.dp.batch_size);
    d.get("delta", c.dp.delta);
    d.finish();
  }
  r.get("max_epochs", c.max_epochs);
  r.get("patience", c.patience);
  r.get("min_delta", c.min_delta);
  r.get("dropout_rate", c.dropout_rate);
  r.get("input_dropout_rate", c.input_dropout_rate);
  if (const json* v = r.find("seeds")) {
    FieldReader s(*v, "seeds");
    s.get("data", c.seeds.data);
    s.get("init", c.seeds.init);
    s.get("attack", c.seeds.attack);
    s.finish();
  }
  r.get("n_eval", c.n_eval);
  if (const json* v = r.find("shadow")) {
    FieldReader s(*v, "shadow");
    s.get("learning_rate", c.shadow.learning_rate);
    s.get("batch_size", c.shadow.batch_size);
    s.get("max_epochs", c.shadow.max_epochs);
    s.finish();
  }
  if (const json* v = r.find("attack")) {
    FieldReader a(*v, "attack");
    a.get("learning_rate", c.attack.learning_rate);
    a.get("batch_size", c.attack.batch_size);
    a.get("max_epochs", c.attack.max_epochs);
    a.get("patience", c.attack.patience);
    a.get("validation_fraction", c.attack.validation_fraction);
    if (const json* s = a.find("sort_probs")) {
      if (!s->is_boolean()) throw ConfigError("field 'attack.sort_probs' must be true or false");
      c.attack.sort_probs = s->get<bool>();
    }
    a.finish();
  }
  r.get("train_limit", c.train_limit);
  r.get("test_limit", c.test_limit);
  r.get("mc_samples", c.mc_samples);
  std::string path;
  if (r.find("data_dir")) {
    r.get("data_dir", path);
    c.data_dir = path;
  }
  if (r.find("output_dir")) {
    r.get("output_dir", path);
    c.output_dir = path;
  }
  r.finish();
}

void to_json(json& j, const RunReport& r) {
  json config = r.config;
  // Locations are not part of the experiment; leaving them out keeps
  // reports from identical runs in different directories byte-identical.
  config.erase("data_dir");
  config.erase("output_dir");
  json rows = json::array();
  for (const auto& v : r.rows) {
    json row = {{"variant", std::string(to_string(v.variant))},
                {"test_accuracy", v.test_accuracy},
                {"attack_efficacy", v.attack_efficacy},
                {"auc", v.auc},
                {"ratio", v.ratio},
                {"privacy", v.privacy ? privacy_json(*v.privacy) : json(nullptr)},
                {"epochs_trained", v.epochs_trained},
                {"best_epoch", v.best_epoch},
                {"test_confidence", v.test_confidence},
                {"mc_confidence", v.mc_confidence ? json(*v.mc_confidence) : json(nullptr)},
                {"history", history_json(v.history)}};
    rows.push_back(std::move(row));
  }
  json shadow = nullptr;
  if (r.shadow) {
    const auto& s = *r.shadow;
    shadow = {{"in_size", s.in_size},
              {"out_size", s.out_size},
              {"out_accuracy", s.out_accuracy},
              {"epochs_trained", s.epochs_trained},
              {"best_epoch", s.best_epoch},
              {"history", history_json(s.history)},
              {"attack_records", s.attack_records},
              {"attack_validation_accuracy", s.attack_validation_accuracy},
              {"attack_epochs", s.attack_epochs}};
  }
  j = {{"schema_version", r.schema_version},
       {"status", r.status},
       {"failed_stage", r.failed_stage},
       {"error", r.error},
       {"config", config},
       {"shadow", shadow},
       {"rows", rows},
       {"ttest", r.ttest ? ttest_json(*r.ttest) : json(nullptr)}};
}

void from_json(const json& j, RunReport& r) {
  if (!j.is_object()) throw SchemaError("report must be a JSON object");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw SchemaError("report has no integer schema_version");
  r.schema_version = j["schema_version"].get<int>();
  if (r.schema_version != kReportSchemaVersion)
    throw SchemaError("report schema_version " + std::to_string(r.schema_version) + " is not supported (expected " +
                      std::to_string(kReportSchemaVersion) + ")");
  try {
    r.status = j.at("status").get<std::string>();
    r.failed_stage = j.at("failed_stage").get<std::string>();
    r.error = j.at("error").get<std::string>();
    r.config = ExperimentConfig{};
    from_json(j.at("config"), r.config);
    r.shadow.reset();
    if (!j.at("shadow").is_null()) {
      const auto& s = j.at("shadow");
      ShadowSummary sum;
      sum.in_size = s.at("in_size").get<Index>();
      sum.out_size = s.at("out_size").get<Index>();
      sum.out_accuracy = s.at("out_accuracy").get<double>();
      sum.epochs_trained = s.at("epochs_trained").get<int>();
      sum.best_epoch = s.at("best_epoch").get<int>();
      sum.history = history_from(s.at("history"));
      sum.attack_records = s.at("attack_records").get<Index>();
      sum.attack_validation_accuracy = s.at("attack_validation_accuracy").get<double>();
      sum.attack_epochs = s.at("attack_epochs").get<int>();
      r.shadow = sum;
    }
    r.rows.clear();
    for (const auto& row : j.at("rows")) {
      VariantResult v;
      v.variant = variant_from_string(row.at("variant").get<std::string>());
      v.test_accuracy = row.at("test_accuracy").get<double>();
      v.attack_efficacy = row.at("attack_efficacy").get<double>();
      v.auc = row.at("auc").get<double>();
      v.ratio = row.at("ratio").get<double>();
      if (!row.at("privacy").is_null()) v.privacy = privacy_from(row.at("privacy"));
      v.epochs_trained = row.at("epochs_trained").get<int>();
      v.best_epoch = row.at("best_epoch").get<int>();
      v.test_confidence = row.at("test_confidence").get<double>();
      if (!row.at("mc_confidence").is_null()) v.mc_confidence = row.at("mc_confidence").get<double>();
      v.history = history_from(row.at("history"));
      r.rows.push_back(std::move(v));
    }
    r.ttest.reset();
    if (!j.at("ttest").is_null()) r.ttest = ttest_from(j.at("ttest"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report does not match schema: ") + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("report does not match schema: ") + e.what());
  }
}

void save_report(const fs::path& path, const RunReport& report) {
  const json j = report;
  check_finite(j, "");
  write_text(path, j.dump(2) + "\n");
}

RunReport load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": malformed JSON: " + e.what());
  }
  try {
    return j.get<RunReport>();
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace privleak
