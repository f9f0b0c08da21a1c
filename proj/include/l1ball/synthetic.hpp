#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l1ball/priors.hpp"

namespace l1ball {

// Seeded generators for the desk-scale experiments. Each returns the observed
// data together with the ground truth used for metrics.

struct RegressionSpec {
  Index n = 50;
  Index p = 300;
  Index c0 = 10;          // number of non-zero coefficients
  double signal = 5.0;    // value of every non-zero coefficient
  double noise_sd = 1.0;
  bool correlated = false;  // rows ~ N(0, Sigma) with Sigma_jk = rho^|j-k|
  double rho = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct RegressionDataset {
  Matrix x;
  Vector y;
  Vector theta;  // truth; support drawn uniformly at random
};

RegressionDataset generate_regression(const RegressionSpec& spec);

struct MixtureSpec {
  Index n = 1000;
  Vector weights;  // defaults to (0.3, 0.3, 0.4) when empty
  Vector means;    // defaults to (0, 4, 6)
  Vector variances;  // defaults to ones
  std::uint64_t seed = 1;

  void validate() const;
};

struct MixtureDataset {
  Vector y;
  std::vector<int> labels;
  Vector weights;
  Vector means;
  Vector variances;
};

MixtureDataset generate_mixture(const MixtureSpec& spec);

struct ImageSpec {
  Index height = 20;
  Index width = 20;
  double low = 0.0;
  double high = 1.0;
  double noise_sd = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ImageDataset {
  Matrix pixels;
  Matrix truth;  // left half low, right half high
};

ImageDataset generate_two_block_image(const ImageSpec& spec);

struct LowRankSpec {
  Index frames = 12;
  Index height = 8;
  Index width = 8;
  Index rank = 2;
  Index spikes_per_frame = 3;
  double spike_size = 5.0;
  double noise_sd = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LowRankDataset {
  Matrix frames;  // T x (height * width), row-major frames
  Matrix low_rank;
  Matrix sparse;
};

LowRankDataset generate_low_rank_sparse(const LowRankSpec& spec);

struct StructuredSpec {
  Index p = 12;
  Index factors = 2;
  Index block_size = 4;  // contiguous blocks; loadings live on one block each
  double loading = 1.0;
  double noise_sd = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StructuredDataset {
  Matrix affinity;
  Matrix structural;  // 1 between distinct voxels of a block, 0 elsewhere
  Matrix loadings;    // p x factors
};

StructuredDataset generate_structured(const StructuredSpec& spec);

}  // namespace l1ball
