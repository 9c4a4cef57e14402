#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "fixtures.hpp"
#include "privleak/experiment.hpp"

using namespace privleak;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args, const std::atomic<bool>* cancel = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err, cancel);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_run(const std::string& command, const fixtures::TempDir& data,
                                   const std::filesystem::path& out) {
  return {command,        "--data-dir", data.path().string(), "-o",      out.string(), "--max-epochs", "1",
          "--batch-size", "32",         "--n-eval",           "40",      "-c",         (data.path() / "small.json").string()};
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"fly"}).code == cli::kUsage);
  CHECK(invoke({"run", "--no-such-flag"}).code == cli::kUsage);
  CHECK(invoke({"run", "-c", "/nonexistent/config.json"}).code == cli::kUsage);
  CHECK(invoke({"report"}).code == cli::kUsage);
  CHECK(invoke({"--help"}).code == cli::kOk);

  fixtures::TempDir dir("cli_usage");
  const auto cfg = dir.path() / "bad.json";
  std::ofstream(cfg) << "{\"dp\": {\"clip_norm\": -1.5}}";
  const auto bad = invoke({"run", "-c", cfg.string(), "--data-dir", dir.path().string()});
  CHECK(bad.code == cli::kUsage);
  CHECK(bad.err.find("clip_norm") != std::string::npos);

  const auto neg = invoke({"run", "--clip-norm", "-2", "--data-dir", dir.path().string()});
  CHECK(neg.code == cli::kUsage);
  CHECK(neg.err.find("clip_norm") != std::string::npos);

  CHECK(invoke({"run", "--variant", "bayes"}).code == cli::kUsage);
}

TEST_CASE("missing dataset directory exits 2 and names the path") {
  fixtures::TempDir dir("cli_missing");
  const auto missing = dir.path() / "nowhere";
  const auto r = invoke({"run", "--data-dir", missing.string(), "-o", (dir.path() / "out").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find((missing / "mnist").string()) != std::string::npos);
}

TEST_CASE("epsilon subcommand") {
  const auto r = invoke({"epsilon"});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("epsilon 1.060498") != std::string::npos);
  CHECK(r.out.find("steps 11719") != std::string::npos);
  CHECK(invoke({"epsilon", "--noise-multiplier", "-1"}).code == cli::kUsage);
}

TEST_CASE("run, train, attack and report on synthetic data") {
  fixtures::TempDir data("cli_data");
  fixtures::write_fake_mnist(data.path(), 300, 150);
  std::ofstream(data.path() / "small.json")
      << R"({"shadow": {"max_epochs": 1, "batch_size": 32}, "attack": {"max_epochs": 3}, "mc_samples": 2})";
  fixtures::TempDir out("cli_out");

  const auto run = invoke(small_run("run", data, out.path() / "run"));
  CHECK(run.code == cli::kOk);
  CHECK(std::filesystem::exists(out.path() / "run" / "report.json"));
  CHECK(run.err.find("[mnist] target/vanilla epoch 1/1") != std::string::npos);
  CHECK(run.out.find("report written") != std::string::npos);

  // train + attack reproduce the one-shot run.
  CHECK(invoke(small_run("train", data, out.path() / "split")).code == cli::kOk);
  CHECK(std::filesystem::exists(out.path() / "split" / "checkpoints" / "dp.nncp"));
  CHECK(invoke(small_run("attack", data, out.path() / "split")).code == cli::kOk);
  CHECK(load_report(out.path() / "split" / "report.json") == load_report(out.path() / "run" / "report.json"));

  const auto rep = invoke({"report", (out.path() / "run" / "report.json").string(), "-o",
                           (out.path() / "tables").string()});
  CHECK(rep.code == cli::kOk);
  CHECK(rep.out.find("Vanilla LeNet-5") != std::string::npos);
  CHECK(rep.out.find("t-test") != std::string::npos);
  CHECK(std::filesystem::exists(out.path() / "tables" / "summary.csv"));
  CHECK(std::filesystem::exists(out.path() / "tables" / "ratios.csv"));
  CHECK(std::filesystem::exists(out.path() / "tables" / "roc_mnist.svg"));

  const auto csv = invoke({"report", "--csv", (out.path() / "run" / "report.json").string()});
  CHECK(csv.out.rfind("variant,mnist_test_accuracy,mnist_attack_efficacy\n", 0) == 0);

  // A cancelled run exits 1 and leaves a failed report behind.
  std::atomic<bool> cancel{true};
  const auto stopped = invoke(small_run("run", data, out.path() / "stopped"), &cancel);
  CHECK(stopped.code == cli::kPipelineFailure);
  CHECK(stopped.err.find("interrupted") != std::string::npos);
  CHECK(load_report(out.path() / "stopped" / "report.json").status == "failed");

  std::ofstream(out.path() / "v9.json") << R"({"schema_version": 9})";
  const auto schema = invoke({"report", (out.path() / "v9.json").string()});
  CHECK(schema.code == cli::kPipelineFailure);
  CHECK(schema.err.find("schema_version 9") != std::string::npos);
}
