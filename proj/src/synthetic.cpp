#include "l1ball/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

Vector standard_normal(Index n, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = z(rng);
  return v;
}

// k distinct indices out of 0..n-1, sorted.
std::vector<Index> choose_indices(Index n, Index k, Rng& rng) {
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

void RegressionSpec::validate() const {
  require(n >= 1 && p >= 1, "regression spec: n and p must be >= 1");
  require(c0 >= 0 && c0 <= p, "regression spec: need 0 <= c0 <= p");
  require(std::isfinite(signal), "regression spec: signal must be finite");
  require(noise_sd > 0.0, "regression spec: noise_sd must be > 0");
  require(!correlated || (rho > -1.0 && rho < 1.0), "regression spec: rho must lie in (-1, 1)");
}

RegressionDataset generate_regression(const RegressionSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  RegressionDataset out;
  out.x.resize(spec.n, spec.p);
  // An AR(1) recursion across columns gives Sigma_jk = rho^|j-k| exactly.
  const double innovation = std::sqrt(1.0 - spec.rho * spec.rho);
  for (Index i = 0; i < spec.n; ++i) {
    const Vector z = standard_normal(spec.p, rng);
    out.x(i, 0) = z[0];
    for (Index j = 1; j < spec.p; ++j) {
      out.x(i, j) = spec.correlated ? spec.rho * out.x(i, j - 1) + innovation * z[j] : z[j];
    }
  }
  out.theta = Vector::Zero(spec.p);
  for (Index j : choose_indices(spec.p, spec.c0, rng)) out.theta[j] = spec.signal;
  out.y = out.x * out.theta + spec.noise_sd * standard_normal(spec.n, rng);
  return out;
}

void MixtureSpec::validate() const {
  require(n >= 1, "mixture spec: n must be >= 1");
  const Index k = weights.size() > 0 ? weights.size() : 3;
  require(means.size() == 0 || means.size() == k, "mixture spec: means must match the weights");
  require(variances.size() == 0 || variances.size() == k, "mixture spec: variances must match the weights");
  if (weights.size() > 0) {
    require((weights.array() >= 0.0).all() && std::abs(weights.sum() - 1.0) < 1e-9,
            "mixture spec: weights must be non-negative and sum to one");
  }
  if (variances.size() > 0) require((variances.array() > 0.0).all(), "mixture spec: variances must be > 0");
}

MixtureDataset generate_mixture(const MixtureSpec& spec) {
  spec.validate();
  MixtureDataset out;
  out.weights = spec.weights.size() > 0 ? spec.weights : Vector{{0.3, 0.3, 0.4}};
  const Index k = out.weights.size();
  out.means = spec.means.size() > 0 ? spec.means : (k == 3 ? Vector{{0.0, 4.0, 6.0}} : Vector::Zero(k));
  out.variances = spec.variances.size() > 0 ? spec.variances : Vector::Ones(k);

  Rng rng(spec.seed);
  std::discrete_distribution<int> label(out.weights.data(), out.weights.data() + k);
  std::normal_distribution<double> z(0.0, 1.0);
  out.y.resize(spec.n);
  out.labels.resize(static_cast<std::size_t>(spec.n));
  for (Index i = 0; i < spec.n; ++i) {
    const int c = label(rng);
    out.labels[static_cast<std::size_t>(i)] = c;
    out.y[i] = out.means[c] + std::sqrt(out.variances[c]) * z(rng);
  }
  return out;
}

void ImageSpec::validate() const {
  require(height >= 1 && width >= 2, "image spec: need height >= 1 and width >= 2");
  require(noise_sd >= 0.0, "image spec: noise_sd must be >= 0");
}

ImageDataset generate_two_block_image(const ImageSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  ImageDataset out;
  out.truth.resize(spec.height, spec.width);
  for (Index j = 0; j < spec.width; ++j) out.truth.col(j).setConstant(2 * j < spec.width ? spec.low : spec.high);
  out.pixels = out.truth;
  std::normal_distribution<double> z(0.0, spec.noise_sd);
  for (Index i = 0; i < spec.height; ++i) {
    for (Index j = 0; j < spec.width; ++j) out.pixels(i, j) += spec.noise_sd > 0.0 ? z(rng) : 0.0;
  }
  return out;
}

void LowRankSpec::validate() const {
  require(frames >= 1 && height >= 1 && width >= 1, "low-rank spec: dimensions must be >= 1");
  require(rank >= 0 && rank <= std::min(frames, height * width), "low-rank spec: rank exceeds min(T, mn)");
  require(spikes_per_frame >= 0 && spikes_per_frame <= height * width, "low-rank spec: too many spikes per frame");
  require(noise_sd >= 0.0, "low-rank spec: noise_sd must be >= 0");
}

LowRankDataset generate_low_rank_sparse(const LowRankSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index mn = spec.height * spec.width;
  LowRankDataset out;
  out.low_rank = Matrix::Zero(spec.frames, mn);
  for (Index k = 0; k < spec.rank; ++k) {
    const Vector a = standard_normal(spec.frames, rng);
    const Vector b = standard_normal(mn, rng);
    out.low_rank += a * b.transpose() / std::sqrt(static_cast<double>(mn));
  }
  out.sparse = Matrix::Zero(spec.frames, mn);
  std::bernoulli_distribution sign(0.5);
  for (Index t = 0; t < spec.frames; ++t) {
    for (Index j : choose_indices(mn, spec.spikes_per_frame, rng)) {
      out.sparse(t, j) = sign(rng) ? spec.spike_size : -spec.spike_size;
    }
  }
  out.frames = out.low_rank + out.sparse;
  if (spec.noise_sd > 0.0) {
    std::normal_distribution<double> z(0.0, spec.noise_sd);
    for (Index t = 0; t < spec.frames; ++t) {
      for (Index j = 0; j < mn; ++j) out.frames(t, j) += z(rng);
    }
  }
  return out;
}

void StructuredSpec::validate() const {
  require(p >= 2 && factors >= 1, "structured spec: need p >= 2 and factors >= 1");
  require(block_size >= 1 && p % block_size == 0, "structured spec: block_size must divide p");
  require(factors <= p / block_size, "structured spec: more factors than blocks");
  require(noise_sd >= 0.0, "structured spec: noise_sd must be >= 0");
}

StructuredDataset generate_structured(const StructuredSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  StructuredDataset out;
  out.structural = Matrix::Zero(spec.p, spec.p);
  for (Index i = 0; i < spec.p; ++i) {
    for (Index j = 0; j < spec.p; ++j) {
      out.structural(i, j) = (i != j && i / spec.block_size == j / spec.block_size) ? 1.0 : 0.0;
    }
  }
  out.loadings = Matrix::Zero(spec.p, spec.factors);
  for (Index k = 0; k < spec.factors; ++k) {
    out.loadings.block(k * spec.block_size, k, spec.block_size, 1).setConstant(spec.loading);
  }
  out.affinity = out.loadings * out.loadings.transpose();
  std::normal_distribution<double> z(0.0, spec.noise_sd);
  for (Index i = 0; i < spec.p; ++i) {
    for (Index j = i + 1; j < spec.p; ++j) {
      const double e = spec.noise_sd > 0.0 ? z(rng) : 0.0;
      out.affinity(i, j) += e;
      out.affinity(j, i) = out.affinity(i, j);
    }
  }
  return out;
}

}  // namespace l1ball
