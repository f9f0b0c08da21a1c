#pragma once

#include <functional>
#include <limits>
#include <random>

#include "l1ball/projection.hpp"

namespace l1ball {

using Rng = std::mt19937_64;

/// Base distribution pi_beta of the unconstrained vector beta.
class BaseDistribution {
 public:
  enum class Kind { double_exponential, gaussian, cauchy };

  /// Independent DE(0, scale_i) (Laplace) coordinates.
  static BaseDistribution double_exponential(Vector scales);
  /// N(mean, cov). Throws ConfigError when cov is not symmetric positive definite.
  static BaseDistribution gaussian(Vector mean, Matrix cov);
  /// Independent Cauchy(0, scale_i) coordinates.
  static BaseDistribution cauchy(Vector scales);

  Kind kind() const { return kind_; }
  Index dimension() const { return scales_.size() > 0 ? scales_.size() : mean_.size(); }
  const Vector& scales() const { return scales_; }

  double log_density(const VectorRef& beta) const;
  /// Gradient of log_density; defined almost everywhere (DE has a kink at 0,
  /// where the zero subgradient is returned).
  Vector grad_log_density(const VectorRef& beta) const;
  Vector sample(Rng& rng) const;

 private:
  BaseDistribution() = default;

  Kind kind_ = Kind::double_exponential;
  Vector scales_;
  Vector mean_;
  Matrix chol_lower_;  // L with cov = L L^T
  double log_det_ = 0.0;
};

/// Convenience wrapper matching the named operation: exact log-density of beta.
double log_prior_density(const VectorRef& beta, const BaseDistribution& base);

/// Prior on the radius r, or on the quantile level w for the beta-dependent form.
class RadiusPrior {
 public:
  enum class Kind { exponential, half_cauchy, quantile_dependent };

  /// pi(r) = alpha^{-1} exp(-r / alpha), with alpha the mean.
  static RadiusPrior exponential(double alpha);
  static RadiusPrior half_cauchy(double scale = 1.0);
  /// w ~ Beta(a_w, b_w); r follows from the (1 - w)-quantile of |beta|.
  static RadiusPrior quantile_dependent(double a_w, double b_w);

  Kind kind() const { return kind_; }
  double first() const { return a_; }
  double second() const { return b_; }

  /// log pi(r) for the independent kinds, log Beta(w) for quantile_dependent.
  double log_density(double value) const;
  /// d/dvalue of log_density.
  double grad_log_density(double value) const;
  double sample(Rng& rng) const;

 private:
  RadiusPrior(Kind kind, double a, double b);

  Kind kind_;
  double a_;
  double b_;
};

// ---------------------------------------------------------------------------
// Closed-form kernels and cardinality laws.

/// pr(|C| = j | r) under iid DE(0, lambda) beta: truncated Poisson in j - 1.
double cardinality_pmf(int j, int p, double r, double lambda);

/// pr(|C| = j) after integrating r ~ Exp(mean alpha).
double marginal_cardinality_pmf(int j, int p, double lambda, double alpha);

/// Log prior kernel of theta given r under iid DE(0, lambda) beta.
///
/// On the boundary ||theta||_1 = r this is
/// log[(2 lambda)^{-|C|} / binom(p, |C|) * lambda * exp(-r / lambda)];
/// strictly inside the ball it is the product DE log-density.
double de_boundary_log_kernel(const VectorRef& theta, double r, double lambda);

/// pr(theta_i = 0) = 1 - exp(-(mu / c) / lambda_i).
double zero_probability_adaptive(double mu_over_c, double lambda_i);

/// log binom(n, k) through log-gamma.
double log_binomial(int n, int k);

struct QuantileRadius {
  double mu_tilde = 0.0;  // soft threshold
  double radius = 0.0;    // sum_i (|beta_i| - mu_tilde)_+
  Index rank = 0;         // 1-based order statistic of |beta| used as mu_tilde
};

/// mu_tilde = lower (type-1) empirical (1 - w)-quantile of |beta|, i.e. the
/// k-th smallest magnitude with k = clamp(floor(p (1 - w)), 1, p).
QuantileRadius radius_from_quantile(const VectorRef& beta, double w);

struct TheoryHyperparams {
  double b1 = 1.0;
  double b2 = 1.0;
  double b3 = 0.0;
};

struct TheoryScales {
  double lambda = 0.0;
  double alpha = 0.0;
  double lambda_star = 0.0;  // (lambda + alpha) / (lambda alpha)
};

/// lambda = b1 p^b2 / ||X||_{2,inf}, alpha = p^b3 / ||X||_{2,inf}.
/// Requires b1 > 0, b2 > b3, b3 <= 1 and a positive column norm.
TheoryScales theory_lambda_alpha(int p, double x_col_norm, const TheoryHyperparams& hp);

/// Largest column Euclidean norm ||X||_{2,inf}.
double max_column_norm(const MatrixRef& x);

// ---------------------------------------------------------------------------
// Spike-and-slab equivalent base density.

/// A univariate density given by its log-pdf and a sampler.
struct UnivariateDensity {
  std::function<double(double)> log_pdf;
  std::function<double(Rng&)> sample;
  double support_lo = -std::numeric_limits<double>::infinity();
  double support_hi = std::numeric_limits<double>::infinity();
};

UnivariateDensity uniform_density(double lo, double hi);
UnivariateDensity normal_density(double mean, double sd);
UnivariateDensity laplace_density(double scale);

/// Base density whose soft-thresholding at mu_tilde reproduces a point-mass
/// spike with probability 1 - w and the slab law otherwise:
/// (1 - w) interior(x) on |x| <= mu_tilde, w slab(sign(x)(|x| - mu_tilde)) outside.
class SpikeSlabBase {
 public:
  /// Throws ConfigError if either component does not integrate to one
  /// (interior over [-mu_tilde, mu_tilde], slab over the real line).
  SpikeSlabBase(double w, double mu_tilde, UnivariateDensity slab, UnivariateDensity interior);

  double log_density(double x) const;
  double sample(Rng& rng) const;
  double w() const { return w_; }
  double mu_tilde() const { return mu_tilde_; }

 private:
  double w_;
  double mu_tilde_;
  UnivariateDensity slab_;
  UnivariateDensity interior_;
};

double spike_slab_base_log_density(double x, double w, double mu_tilde,
                                   const UnivariateDensity& slab,
                                   const UnivariateDensity& interior);

}  // namespace l1ball
