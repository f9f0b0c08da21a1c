#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "l1ball/models.hpp"
#include "l1ball/sampler.hpp"
#include "l1ball/summaries.hpp"

namespace l1ball {

using Json = nlohmann::ordered_json;

struct SamplerSettings {
  int chains = 2;
  int warmup = 500;
  int samples = 500;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_depth = 10;
  bool dense_metric = false;
};

/// One experiment, read from a self-contained JSON file:
///   model        registered model name
///   data         {"path": ...} (or "affinity"/"structural" for structured),
///                or {"generator": {...}} with the same keys as a generate spec
///   prior        base, scale, radius, radius_scale, theory {b1, b2, b3}, and
///                model extras (k1, mu_prior_sd, sigma2_shape, sigma2_rate,
///                lambda_sparse, factors, kappa)
///   sampler      chains, warmup, samples, seed, target_accept, max_depth, metric
///   summary      alpha
///   diagnostics  max_divergence_rate, max_rhat (0 disables), min_ebfmi
///   output_dir   bundle directory, relative to the config file
struct ExperimentConfig {
  std::string name;
  std::string model;
  Json data;
  Json prior;
  SamplerSettings sampler;
  double alpha = 0.05;
  double max_divergence_rate = 0.05;
  double max_rhat = 0.0;
  double min_ebfmi = 0.0;
  std::filesystem::path output_dir;
  std::filesystem::path base_dir;  // resolves relative paths
};

/// Throws ConfigError on malformed JSON, unknown keys or invalid values.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Observed data plus optional ground truth, as produced by a generator or
/// read from files.
struct Dataset {
  std::string model;
  RegressionData regression;
  GridData grid;
  MixtureData mixture;
  LowRankSparseData low_rank;
  StructuredData structured;
  Vector truth;  // support ground truth for selection metrics; may be empty
};

/// Builds the data of a generator spec: {"kind": model name, "seed": ..., ...}.
Dataset generate_dataset(const Json& spec);
/// Writes the data files and a truth.csv sidecar into dir and returns the
/// data block a config can reference.
Json write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const ExperimentConfig& config);

/// Builds the posterior of the configured model and prior on the data.
std::unique_ptr<TargetPosterior> build_target(const ExperimentConfig& config, const Dataset& data);
/// Count summarized by the cardinality posterior: |C|, K, rank or changes.
CountFunctional model_count(const std::string& model);
Index model_count_max(const std::string& model, const Dataset& data);

struct SelectionMetrics {
  double fpr = 0.0;  // false non-zeros among true zeros
  double fnr = 0.0;  // false zeros among true non-zeros
};

/// Compares supports by literal zero tests. Throws InputError when the truth
/// is empty or the lengths differ.
SelectionMetrics compute_selection_metrics(const VectorRef& estimate, const VectorRef& truth);

struct ExperimentResult {
  std::vector<ChainResult> chains;
  PosteriorSummary summary;
  bool has_truth = false;
  SelectionMetrics metrics;
  double seconds = 0.0;
  bool diagnostics_ok = true;
  std::string diagnostics_message;
};

/// Runs the chains, writes the bundle (config.json, samples_chain{k}.csv,
/// summary.json, diagnostics.json, metrics.csv) when write_bundle is set and
/// checks the diagnostics thresholds. threads <= 0 reads L1BALL_THREADS and
/// falls back to the number of logical cores.
ExperimentResult run_experiment(const ExperimentConfig& config, int threads = 0, bool write_bundle = true);

/// Re-reads the sample files of a bundle and recomputes its summary.
PosteriorSummary summarize_bundle(const std::filesystem::path& bundle);
/// FPR/FNR of the bundle's Frechet mean against a truth CSV (column "theta").
SelectionMetrics bundle_metrics(const std::filesystem::path& bundle, const std::filesystem::path& truth_csv);

/// Threads from L1BALL_THREADS, else hardware concurrency (at least 1).
int default_threads();

}  // namespace l1ball
