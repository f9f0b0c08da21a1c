#pragma once

#include <functional>
#include <string>
#include <vector>

#include "l1ball/sampler.hpp"

namespace l1ball {

/// Maps a draw to the quantity being summarized, g(theta). Defaults to theta.
using Functional = std::function<Vector(const SampleRecord&)>;
/// Maps a draw to a count such as |C|, the number of mixture components or a rank.
using CountFunctional = std::function<Index(const SampleRecord&)>;

Vector theta_of(const SampleRecord& record);
Index nonzero_count(const SampleRecord& record);

/// Index of the draw minimizing sum_k ||g(theta_j) - g(theta_k)||^2 over the
/// draws themselves; the lowest index wins ties. Throws InputError when empty
/// or when g changes length across draws.
std::size_t frechet_mean_index(const std::vector<SampleRecord>& records, const Functional& g = theta_of);
const SampleRecord& frechet_mean(const std::vector<SampleRecord>& records, const Functional& g = theta_of);

struct DensityRegion {
  double kappa = 0.0;         // threshold on the log posterior kernel
  std::vector<bool> flagged;  // record is inside the region
  std::size_t count = 0;
};

/// Top (1 - alpha) posterior density region among the draws. kappa is the
/// lower order statistic of the log kernels at 0-based rank floor(alpha m),
/// and draws with log kernel >= kappa are flagged.
DensityRegion top_density_region(const std::vector<SampleRecord>& records, double alpha);

/// Empirical pmf of the count over {0, ..., max_value}. max_value < 0 uses
/// the length of theta of the first draw.
Vector cardinality_posterior(const std::vector<SampleRecord>& records, const CountFunctional& count = nonzero_count,
                             Index max_value = -1);

/// Per-coordinate frequency of g(theta)_i == 0, by literal comparison.
Vector zero_probability_map(const std::vector<SampleRecord>& records, const Functional& g = theta_of);

/// Per-chain health figures carried into the summary document.
struct ChainSummary {
  double step_size = 0.0;
  int divergences = 0;
  double mean_accept_stat = 0.0;
  double ebfmi = 0.0;
  double seconds = 0.0;
};

struct PosteriorSummary {
  Vector frechet_mean;
  std::size_t frechet_index = 0;
  double kappa_alpha = 0.0;
  double alpha = 0.05;
  std::size_t region_count = 0;
  Vector cardinality_pmf;
  Vector zero_prob_map;
  std::vector<ChainSummary> chains;
  double max_rhat = 0.0;  // over theta coordinates with non-constant draws
  double min_ess = 0.0;
};

/// Summary of the pooled draws of several chains.
PosteriorSummary summarize(const std::vector<ChainResult>& chains, double alpha = 0.05,
                           const CountFunctional& count = nonzero_count, Index max_count = -1);

/// JSON document with fields frechet_mean, kappa_alpha, cardinality_pmf,
/// zero_prob_map and diagnostics. Wall-clock times are left out so that the
/// document is reproducible.
std::string summary_to_json(const PosteriorSummary& summary);

}  // namespace l1ball
