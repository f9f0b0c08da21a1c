#include "l1ball/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

void require_records(const std::vector<SampleRecord>& records, const char* what) {
  if (records.empty()) throw InputError(std::string(what) + ": empty sample set");
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

Vector theta_of(const SampleRecord& record) { return record.theta; }

Index nonzero_count(const SampleRecord& record) {
  return static_cast<Index>((record.theta.array() != 0.0).count());
}

std::size_t frechet_mean_index(const std::vector<SampleRecord>& records, const Functional& g) {
  require_records(records, "frechet_mean");
  const std::size_t m = records.size();
  std::vector<Vector> values;
  values.reserve(m);
  for (const auto& rec : records) {
    values.push_back(g(rec));
    if (values.back().size() != values.front().size()) {
      throw InputError("frechet_mean: functional length changes across draws");
    }
  }
  // sum_k ||g_j - g_k||^2 = m ||g_j - gbar||^2 + const, so the argmin over the
  // draws is the draw closest to the sample mean.
  Vector mean = Vector::Zero(values.front().size());
  for (const auto& v : values) mean += v;
  mean /= static_cast<double>(m);
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    const double d = (values[j] - mean).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = j;
    }
  }
  return best;
}

const SampleRecord& frechet_mean(const std::vector<SampleRecord>& records, const Functional& g) {
  return records[frechet_mean_index(records, g)];
}

DensityRegion top_density_region(const std::vector<SampleRecord>& records, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("top_density_region: alpha must lie in (0, 1)");
  require_records(records, "top_density_region");
  const std::size_t m = records.size();
  std::vector<double> kernels(m);
  for (std::size_t j = 0; j < m; ++j) kernels[j] = records[j].log_posterior;
  std::vector<double> sorted = kernels;
  const auto rank = std::min<std::size_t>(static_cast<std::size_t>(std::floor(alpha * static_cast<double>(m))), m - 1);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());

  DensityRegion region;
  region.kappa = sorted[rank];
  region.flagged.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    region.flagged[j] = kernels[j] >= region.kappa;
    region.count += region.flagged[j] ? 1 : 0;
  }
  return region;
}

Vector cardinality_posterior(const std::vector<SampleRecord>& records, const CountFunctional& count,
                             Index max_value) {
  require_records(records, "cardinality_posterior");
  if (max_value < 0) max_value = records.front().theta.size();
  Vector pmf = Vector::Zero(max_value + 1);
  for (const auto& rec : records) {
    const Index c = count(rec);
    if (c < 0 || c > max_value) {
      throw InputError("cardinality_posterior: count " + std::to_string(c) + " outside 0.." +
                       std::to_string(max_value));
    }
    pmf[c] += 1.0;
  }
  return pmf / static_cast<double>(records.size());
}

Vector zero_probability_map(const std::vector<SampleRecord>& records, const Functional& g) {
  require_records(records, "zero_probability_map");
  Vector freq;
  for (const auto& rec : records) {
    const Vector v = g(rec);
    if (freq.size() == 0) freq = Vector::Zero(v.size());
    if (v.size() != freq.size()) throw InputError("zero_probability_map: functional length changes across draws");
    freq.array() += (v.array() == 0.0).cast<double>();
  }
  return freq / static_cast<double>(records.size());
}

PosteriorSummary summarize(const std::vector<ChainResult>& chains, double alpha, const CountFunctional& count,
                           Index max_count) {
  std::vector<SampleRecord> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.records.begin(), c.records.end());
  require_records(pooled, "summarize");

  PosteriorSummary s;
  s.alpha = alpha;
  s.frechet_index = frechet_mean_index(pooled);
  s.frechet_mean = pooled[s.frechet_index].theta;
  const DensityRegion region = top_density_region(pooled, alpha);
  s.kappa_alpha = region.kappa;
  s.region_count = region.count;
  s.cardinality_pmf = cardinality_posterior(pooled, count, max_count);
  s.zero_prob_map = zero_probability_map(pooled);

  for (const auto& c : chains) {
    const auto& d = c.diagnostics;
    s.chains.push_back({d.step_size, d.divergences, d.mean_accept_stat, d.ebfmi, d.seconds});
  }

  // Convergence figures need chains of equal length with at least four draws.
  bool comparable = !chains.empty() && chains.front().records.size() >= 4;
  for (const auto& c : chains) comparable = comparable && c.records.size() == chains.front().records.size();
  if (comparable) {
    double max_rhat = 0.0;
    double min_ess = std::numeric_limits<double>::infinity();
    const Index p = pooled.front().theta.size();
    for (Index i = 0; i < p; ++i) {
      std::vector<std::vector<double>> traces;
      bool varies = false;
      for (const auto& c : chains) {
        std::vector<double> t;
        t.reserve(c.records.size());
        for (const auto& rec : c.records) t.push_back(rec.theta[i]);
        varies = varies || std::any_of(t.begin(), t.end(), [&](double x) { return x != t.front(); });
        traces.push_back(std::move(t));
      }
      if (!varies) continue;
      const double rh = split_rhat(traces);
      const double ess = effective_sample_size(traces);
      if (std::isfinite(rh)) max_rhat = std::max(max_rhat, rh);
      if (std::isfinite(ess)) min_ess = std::min(min_ess, ess);
    }
    s.max_rhat = max_rhat;
    s.min_ess = std::isfinite(min_ess) ? min_ess : 0.0;
  }
  return s;
}

std::string summary_to_json(const PosteriorSummary& summary) {
  nlohmann::ordered_json doc;
  doc["frechet_mean"] = to_std(summary.frechet_mean);
  doc["frechet_index"] = summary.frechet_index;
  doc["kappa_alpha"] = summary.kappa_alpha;
  doc["alpha"] = summary.alpha;
  doc["region_count"] = summary.region_count;
  doc["cardinality_pmf"] = to_std(summary.cardinality_pmf);
  doc["zero_prob_map"] = to_std(summary.zero_prob_map);
  nlohmann::ordered_json chains = nlohmann::ordered_json::array();
  for (const auto& c : summary.chains) {
    chains.push_back({{"step_size", c.step_size},
                      {"divergences", c.divergences},
                      {"mean_accept_stat", c.mean_accept_stat},
                      {"ebfmi", c.ebfmi}});
  }
  doc["diagnostics"] = {{"chains", chains}, {"max_rhat", summary.max_rhat}, {"min_ess", summary.min_ess}};
  return doc.dump(2);
}

}  // namespace l1ball
