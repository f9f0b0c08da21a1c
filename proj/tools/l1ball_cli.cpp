// Command-line front end for the experiment runner.
//
//   l1ball run <config> [--threads N] [--output DIR]
//   l1ball generate <spec> [--output DIR]
//   l1ball summarize <bundle>
//   l1ball metrics <bundle> <truth>
//
// Exit codes: 0 ok, 2 configuration or data error, 3 diagnostics failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "l1ball/data_io.hpp"
#include "l1ball/errors.hpp"
#include "l1ball/experiment.hpp"

namespace fs = std::filesystem;
using namespace l1ball;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiagnosticsFailure = 3;

int cmd_run(const fs::path& config_path, int threads, const std::string& output) {
  ExperimentConfig config = load_config(config_path);
  if (!output.empty()) config.output_dir = output;
  const ExperimentResult res = run_experiment(config, threads);
  std::cout << "bundle: " << config.output_dir.string() << '\n';
  std::cout << "seconds: " << format_number(res.seconds) << '\n';
  std::cout << "max_rhat: " << format_number(res.summary.max_rhat) << '\n';
  std::cout << "cardinality mode: ";
  Index mode = 0;
  res.summary.cardinality_pmf.maxCoeff(&mode);
  std::cout << mode << '\n';
  if (res.has_truth) {
    std::cout << "fpr: " << format_number(res.metrics.fpr) << "\nfnr: " << format_number(res.metrics.fnr) << '\n';
  }
  if (!res.diagnostics_ok) {
    std::cerr << "diagnostics failure: " << res.diagnostics_message << '\n';
    return kDiagnosticsFailure;
  }
  return kOk;
}

int cmd_generate(const fs::path& spec_path, const std::string& output) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot open " + spec_path.string());
  Json spec;
  try {
    spec = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(spec_path.string() + ": " + e.what());
  }
  fs::path dir = output;
  if (dir.empty()) {
    const fs::path base = spec_path.parent_path().empty() ? fs::path(".") : spec_path.parent_path();
    dir = base / spec.value("output_dir", "data");
  }
  spec.erase("output_dir");
  const Dataset data = generate_dataset(spec);
  const Json block = write_dataset(data, dir);
  std::cout << "data written to " << dir.string() << '\n' << block.dump(2) << '\n';
  return kOk;
}

int cmd_summarize(const fs::path& bundle) {
  std::cout << summary_to_json(summarize_bundle(bundle)) << '\n';
  return kOk;
}

int cmd_metrics(const fs::path& bundle, const fs::path& truth) {
  const SelectionMetrics m = bundle_metrics(bundle, truth);
  std::cout << "fpr,fnr\n" << format_number(m.fpr) << ',' << format_number(m.fnr) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian sparsity with l1-ball priors: experiment runner"};
  app.require_subcommand(1);

  std::string config_path, spec_path, bundle_path, truth_path, output;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run an experiment config and write its result bundle");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--threads", threads, "Worker threads for chains (default: L1BALL_THREADS or all cores)");
  run->add_option("--output", output, "Override the bundle directory");

  auto* generate = app.add_subcommand("generate", "Write synthetic data files and ground truth from a spec");
  generate->add_option("spec", spec_path, "Generator spec (JSON)")->required();
  generate->add_option("--output", output, "Output directory");

  auto* summarize = app.add_subcommand("summarize", "Recompute the posterior summary of a bundle");
  summarize->add_option("bundle", bundle_path, "Result bundle directory")->required();

  auto* metrics = app.add_subcommand("metrics", "FPR and FNR of a bundle's Frechet mean against the truth");
  metrics->add_option("bundle", bundle_path, "Result bundle directory")->required();
  metrics->add_option("truth", truth_path, "Truth CSV with a 'theta' column")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, threads, output);
    if (*generate) return cmd_generate(spec_path, output);
    if (*summarize) return cmd_summarize(bundle_path);
    if (*metrics) return cmd_metrics(bundle_path, truth_path);
  } catch (const DiagnosticsError& e) {
    std::cerr << "diagnostics failure: " << e.what() << '\n';
    return kDiagnosticsFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
