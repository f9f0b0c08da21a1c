#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "l1ball/priors.hpp"
#include "l1ball/projection.hpp"

namespace l1ball {

/// Per-chain scratch space a target may use to carry solver warm starts
/// between gradient evaluations. Never shared across chains.
class TargetWorkspace {
 public:
  virtual ~TargetWorkspace() = default;
};

/// One draw in constrained coordinates. theta is the post-projection value and
/// carries literal zeros.
struct SampleRecord {
  Vector theta;
  double r = 0.0;
  std::vector<std::pair<std::string, double>> extras;
  double log_posterior = 0.0;
  double accept_stat = 0.0;
  Vector contrast;  // exactly sparse D theta, for linear-map balls only
  Vector position;  // unconstrained sampler coordinates q
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
  double step_size = 0.0;

  double extra(const std::string& name) const;
};

struct Evaluation {
  double log_density = 0.0;
  Vector gradient;
  bool kink = false;  // gradient unreliable; treated as a divergence
};

/// Log posterior over unconstrained q. Implementations must be safe to call
/// concurrently through const methods; per-chain state lives in a workspace.
class TargetPosterior {
 public:
  virtual ~TargetPosterior() = default;

  virtual Index dimension() const = 0;
  virtual Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const = 0;

  virtual std::unique_ptr<TargetWorkspace> make_workspace() const { return nullptr; }
  /// Starting point for a chain. Default: uniform(-2, 2) coordinates.
  virtual Vector initial_position(Rng& rng) const;
  /// Maps q to a record (theta, r, extras). Default: theta = q.
  virtual SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const;
};

/// Target assembled from plain functions, mainly for tests and small problems.
class FunctionTarget : public TargetPosterior {
 public:
  using LogDensity = std::function<double(const Vector&)>;
  using Gradient = std::function<Vector(const Vector&)>;

  FunctionTarget(Index dimension, LogDensity log_density, Gradient gradient);

  Index dimension() const override { return dimension_; }
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;

 private:
  Index dimension_;
  LogDensity log_density_;
  Gradient gradient_;
};

struct ChainState {
  Vector position;
  Vector momentum;
  double step_size = 0.1;
  int n_leapfrog = 0;
  std::uint64_t rng_seed = 0;
  int iteration = 0;
  bool divergent = false;
};

/// L leapfrog steps of size eps under the kinetic energy 0.5 p' diag(inv_metric) p.
/// A non-finite log density or gradient, or a kink, stops the trajectory and
/// sets the divergence flag on the returned state.
ChainState leapfrog(const ChainState& state, const TargetPosterior& target, double eps, int steps,
                    const Vector& inv_metric = Vector());

struct NutsOptions {
  double target_accept = 0.8;
  int max_depth = 10;
  double max_delta_h = 1000.0;
  double initial_step_size = 0.0;  // <= 0: heuristic search
  bool adapt_metric = true;
  /// Dense adaptation captures linear correlations such as the ridge along
  /// the l1 slack of active coordinates; it costs O(d^2) per leapfrog step.
  enum class Metric { diagonal, dense };
  Metric metric = Metric::diagonal;
  double max_warmup_divergence_rate = 0.5;
};

struct ChainDiagnostics {
  double step_size = 0.0;
  Vector inv_metric;        // diagonal of the inverse metric
  Matrix dense_inv_metric;  // full inverse metric; empty for the diagonal kind
  int warmup_divergences = 0;
  int divergences = 0;
  double mean_accept_stat = 0.0;
  double mean_tree_depth = 0.0;
  int max_tree_depth_hits = 0;
  double ebfmi = 0.0;
  std::vector<int> tree_depth_histogram;
  double seconds = 0.0;
};

struct ChainResult {
  std::vector<SampleRecord> records;
  ChainDiagnostics diagnostics;
};

/// Multinomial no-U-turn sampler with dual-averaging step size and diagonal
/// metric adaptation during warmup. Deterministic for a fixed seed.
/// Throws DiagnosticsError when more than max_warmup_divergence_rate of the
/// warmup trajectories diverge.
ChainResult nuts_sample(const TargetPosterior& target, int n_warmup, int n_samples,
                        std::uint64_t seed, const NutsOptions& options = {});

/// Runs independent chains seeded with seed + chain id on up to `threads`
/// worker threads. Results are ordered by chain id.
std::vector<ChainResult> run_chains(const TargetPosterior& target, int n_chains, int n_warmup,
                                    int n_samples, std::uint64_t seed, const NutsOptions& options,
                                    int threads);

/// Energy Bayesian fraction of missing information of one chain.
double ebfmi(const std::vector<double>& energies);

/// Split potential scale reduction over chains of equal length.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Effective sample size from the initial positive sequence of autocorrelations.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

}  // namespace l1ball
