#pragma once

#include <memory>
#include <string>
#include <vector>

#include "l1ball/priors.hpp"
#include "l1ball/projection.hpp"
#include "l1ball/sampler.hpp"

namespace l1ball {

/// Prior of one l1-ball parameter: theta = P_{B_r}(beta) with beta ~ base and
/// r ~ radius (or r set by the quantile level w).
struct BallPrior {
  BaseDistribution base;
  RadiusPrior radius;
};

/// Maps a segment q = (beta, u) of the sampler coordinates to theta on the
/// l1 ball. u = log r for exponential and half-Cauchy radius priors and
/// u = logit w for the quantile-dependent prior; the log-Jacobian of that
/// transform is part of log_prior.
class VectorBallBlock {
 public:
  explicit VectorBallBlock(BallPrior prior);

  Index p() const { return prior_.base.dimension(); }
  Index size() const { return p() + 1; }
  const BallPrior& prior() const { return prior_; }

  struct State {
    Vector theta;
    double r = 0.0;
    double w = 0.0;  // quantile level; 0 for the independent radius kinds
    ProjectionResult projection;
    QuantileRadius quantile;
    double log_prior = 0.0;
  };

  State forward(const VectorRef& q) const;
  /// Adds d(log prior)/dq plus the pull-back of g_theta = dL/dtheta into grad.
  void backward(const VectorRef& q, const State& state, const VectorRef& g_theta,
                Eigen::Ref<Vector> grad) const;
  /// beta drawn from the base prior, u set so that about half of the
  /// coordinates are active.
  Vector initial(Rng& rng) const;

 private:
  BallPrior prior_;
};

/// Log-density of sigma^2 ~ Inverse-Gamma(shape, rate) written on v = log sigma^2,
/// including the Jacobian: -shape v - rate exp(-v) + const.
double log_inverse_gamma_on_log_scale(double v, double shape, double rate);
double grad_log_inverse_gamma_on_log_scale(double v, double shape, double rate);

// ---------------------------------------------------------------------------
// Sparse linear regression.

struct RegressionData {
  Matrix x;
  Vector y;
  double sigma2_shape = 1.0;
  double sigma2_rate = 1.0;

  void validate() const;
};

struct LogLikGrad {
  double value = 0.0;
  Vector grad_theta;
  double grad_log_sigma2 = 0.0;
};

/// Gaussian log-likelihood of y ~ N(X theta, sigma2 I) with its gradient.
LogLikGrad regression_log_lik_grad(const VectorRef& theta, double sigma2, const RegressionData& data);

/// q = (beta, u, log sigma^2).
class RegressionModel : public TargetPosterior {
 public:
  RegressionModel(RegressionData data, BallPrior prior);

  Index dimension() const override { return block_.size() + 1; }
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;
  Vector initial_position(Rng& rng) const override;
  SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const override;

  const RegressionData& data() const { return data_; }

 private:
  RegressionData data_;
  VectorBallBlock block_;
};

// ---------------------------------------------------------------------------
// Piecewise-constant smoothing on a pixel grid.

struct GridData {
  Matrix pixels;  // p1 x p2; pixel (i, j) is coordinate i * p2 + j
  double mu_prior_sd = 10.0;
  double sigma2_shape = 1.0;
  double sigma2_rate = 1.0;

  void validate() const;
};

/// Horizontal differences, vertical differences, then identity rows:
/// (p1 - 1) p2 + p1 (p2 - 1) + p1 p2 rows over the row-major pixel vector.
Matrix grid_contrast_matrix(Index p1, Index p2);

/// y_ij = mu + theta_ij + noise with theta on {||D theta||_1 <= r}.
/// q = (beta, log r, mu, log sigma^2). The radius prior must be exponential
/// or half-Cauchy.
class FusedModel : public TargetPosterior {
 public:
  FusedModel(GridData data, BaseDistribution base, RadiusPrior radius, AdmmOptions admm = {1.0, 1e-9, 20000});

  Index dimension() const override { return n_pixels_ + 3; }
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;
  Vector initial_position(Rng& rng) const override;
  SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const override;
  std::unique_ptr<TargetWorkspace> make_workspace() const override;

  const Matrix& contrast() const { return projector_.contrast(); }
  const GridData& data() const { return data_; }

 private:
  struct Projected;
  Projected project(const Vector& q, TargetWorkspace* workspace) const;

  GridData data_;
  BaseDistribution base_;
  RadiusPrior radius_;
  Index n_pixels_;
  Vector y_;  // row-major pixels
  LinearMapProjector projector_;
};

// ---------------------------------------------------------------------------
// Mixture of finite mixtures.

struct MixtureData {
  Vector y;
  int k1 = 10;
  double mu_prior_sd = 10.0;
  double sigma2_shape = 1.0;
  double sigma2_rate = 1.0;

  void validate() const;
};

/// theta_k = |w_k| / sum_i |w_i| with w = P_{B_r}(beta).
/// Throws DegenerateInputError when every w_k is zero.
Vector mixture_weights_from_ball(const VectorRef& beta, double r);

/// sum_j log sum_{k: theta_k > 0} theta_k N(y_j | mu_k, sigma2_k), evaluated
/// with log-sum-exp. Throws DegenerateInputError for an empty active set.
double mixture_log_lik(const VectorRef& y, const VectorRef& theta, const VectorRef& mus,
                       const VectorRef& sigma2s);

/// q = (b (K1), log r, mu (K1), log sigma^2 (K1)) with beta = r b. Since
/// P_{B_r}(r b) = r P_{B_1}(b), the weights depend on b alone and r enters only
/// through the prior; this keeps the likelihood off the (beta, r) scale ridge.
class MixtureModel : public TargetPosterior {
 public:
  MixtureModel(MixtureData data, BallPrior prior);

  Index dimension() const override { return 3 * k1_ + 1; }
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;
  Vector initial_position(Rng& rng) const override;
  SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const override;

 private:
  MixtureData data_;
  VectorBallBlock block_;
  Index k1_;
};

// ---------------------------------------------------------------------------
// Low-rank plus sparse decomposition of a frame stack.

struct LowRankSparseData {
  Matrix frames;  // T x (height * width), one vectorized frame per row
  Index height = 0;
  Index width = 0;
  double sigma2_shape = 1.0;
  double sigma2_rate = 1.0;

  void validate() const;
};

/// M_t = L_t + S_t + E_t with L on a nuclear-norm ball and each S_t on its own
/// l1 ball. q = (beta_L, log r_L, beta_S (T rows), log r_S (T), log sigma_e^2),
/// matrices flattened row-major.
class LowRankSparseModel : public TargetPosterior {
 public:
  LowRankSparseModel(LowRankSparseData data, double lambda_low_rank, RadiusPrior radius_low_rank,
                     double lambda_sparse, RadiusPrior radius_sparse);

  Index dimension() const override;
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;
  Vector initial_position(Rng& rng) const override;
  /// theta = (vec L, vec S) row-major; extras carry rank, r_L, sigma2.
  SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const override;

  Index frames() const { return data_.frames.rows(); }
  Index pixels() const { return data_.frames.cols(); }

 private:
  LowRankSparseData data_;
  double lambda_low_rank_;
  RadiusPrior radius_low_rank_;
  double lambda_sparse_;
  RadiusPrior radius_sparse_;
};

// ---------------------------------------------------------------------------
// Structured sparsity through a correlated base measure.

struct StructuredData {
  Matrix affinity;    // A, symmetric p x p
  Matrix structural;  // S, symmetric p x p with entries in [0, 1]
  int factors = 3;    // d
  double kappa = -1.0;  // < 0: 0 when J - S is positive definite, else 1e-3
  double sigma2_shape = 1.0;
  double sigma2_rate = 1.0;

  void validate() const;
};

/// Covariance J - S + kappa I of the factor loadings' base measure.
Matrix structured_base_covariance(const MatrixRef& structural, double kappa);

/// A = sum_k lambda_k theta_k theta_k' + E over i < j with
/// theta_k = P_{B_{r_k}}(beta_k), beta_k ~ N(0, J - S + kappa I), and
/// lambda = P_{B_r~}(gamma), gamma_k ~ Exp(1).
/// q = (beta (d rows of p), log r (d), log gamma (d), log r~, log sigma^2).
class StructuredSparsityModel : public TargetPosterior {
 public:
  StructuredSparsityModel(StructuredData data, RadiusPrior radius, RadiusPrior factor_radius);

  Index dimension() const override;
  Evaluation evaluate(const Vector& q, TargetWorkspace* workspace) const override;
  Vector initial_position(Rng& rng) const override;
  /// theta = (lambda, vec theta_1..theta_d).
  SampleRecord make_record(const Vector& q, TargetWorkspace* workspace) const override;

  double kappa() const { return kappa_; }
  const BaseDistribution& base() const { return base_; }

 private:
  StructuredData data_;
  RadiusPrior radius_;
  RadiusPrior factor_radius_;
  double kappa_;
  BaseDistribution base_;
  Index p_;
  Index d_;
};

// ---------------------------------------------------------------------------

/// Name and data-file schema of each model available to the experiment runner.
struct ModelInfo {
  std::string name;
  std::string data_schema;
};

const std::vector<ModelInfo>& registered_models();
/// Throws ConfigError for an unknown name.
const ModelInfo& find_model(const std::string& name);

}  // namespace l1ball
