#include "l1ball/priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be finite and > 0");
  }
}

void require_positive_vector(const Vector& v, const char* what) {
  if (v.size() < 1 || !v.allFinite() || (v.array() <= 0.0).any()) {
    throw ConfigError(std::string(what) + " must be non-empty, finite and strictly positive");
  }
}

void require_cardinality_index(int j, int p, const char* what) {
  if (p < 1 || j < 1 || j > p) {
    throw DomainError(std::string(what) + ": need 1 <= j <= p, got j=" + std::to_string(j) +
                      ", p=" + std::to_string(p));
  }
}

double laplace_draw(Rng& rng, double scale) {
  std::exponential_distribution<double> ex(1.0 / scale);
  std::bernoulli_distribution coin(0.5);
  const double a = ex(rng);
  return coin(rng) ? a : -a;
}

}  // namespace

// ---------------------------------------------------------------------------
// BaseDistribution

BaseDistribution BaseDistribution::double_exponential(Vector scales) {
  require_positive_vector(scales, "double exponential scales");
  BaseDistribution d;
  d.kind_ = Kind::double_exponential;
  d.scales_ = std::move(scales);
  return d;
}

BaseDistribution BaseDistribution::cauchy(Vector scales) {
  require_positive_vector(scales, "Cauchy scales");
  BaseDistribution d;
  d.kind_ = Kind::cauchy;
  d.scales_ = std::move(scales);
  return d;
}

BaseDistribution BaseDistribution::gaussian(Vector mean, Matrix cov) {
  const Index p = mean.size();
  if (p < 1 || cov.rows() != p || cov.cols() != p) {
    throw ConfigError("gaussian base: covariance must be p x p with p = mean length");
  }
  if (!mean.allFinite() || !cov.allFinite()) {
    throw ConfigError("gaussian base: non-finite mean or covariance");
  }
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + cov.cwiseAbs().maxCoeff())) {
    throw ConfigError("gaussian base: covariance is not symmetric");
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("gaussian base: covariance is not positive definite");
  }
  BaseDistribution d;
  d.kind_ = Kind::gaussian;
  d.mean_ = std::move(mean);
  d.chol_lower_ = llt.matrixL();
  d.log_det_ = 2.0 * d.chol_lower_.diagonal().array().log().sum();
  return d;
}

double BaseDistribution::log_density(const VectorRef& beta) const {
  if (beta.size() != dimension()) {
    throw InputError("log_prior_density: dimension mismatch");
  }
  switch (kind_) {
    case Kind::double_exponential:
      return -((2.0 * scales_.array()).log() + beta.array().abs() / scales_.array()).sum();
    case Kind::cauchy:
      return -(std::log(std::numbers::pi) + scales_.array().log() +
               (beta.array() / scales_.array()).square().log1p())
                  .sum();
    case Kind::gaussian: {
      const Vector white = chol_lower_.triangularView<Eigen::Lower>().solve(beta - mean_);
      return -0.5 * (static_cast<double>(beta.size()) * kLogTwoPi + log_det_ + white.squaredNorm());
    }
  }
  return kNegInf;
}

Vector BaseDistribution::grad_log_density(const VectorRef& beta) const {
  if (beta.size() != dimension()) {
    throw InputError("grad_log_density: dimension mismatch");
  }
  switch (kind_) {
    case Kind::double_exponential: {
      Vector g(beta.size());
      for (Index i = 0; i < beta.size(); ++i) {
        g[i] = beta[i] > 0.0 ? -1.0 / scales_[i] : (beta[i] < 0.0 ? 1.0 / scales_[i] : 0.0);
      }
      return g;
    }
    case Kind::cauchy: {
      const Eigen::ArrayXd z = beta.array() / scales_.array();
      return (-2.0 * z / (scales_.array() * (1.0 + z.square()))).matrix();
    }
    case Kind::gaussian: {
      const auto lower = chol_lower_.triangularView<Eigen::Lower>();
      const Vector white = lower.solve(beta - mean_);
      return -lower.transpose().solve(white);
    }
  }
  return Vector();
}

Vector BaseDistribution::sample(Rng& rng) const {
  const Index p = dimension();
  Vector out(p);
  switch (kind_) {
    case Kind::double_exponential:
      for (Index i = 0; i < p; ++i) out[i] = laplace_draw(rng, scales_[i]);
      break;
    case Kind::cauchy: {
      std::cauchy_distribution<double> c(0.0, 1.0);
      for (Index i = 0; i < p; ++i) out[i] = scales_[i] * c(rng);
      break;
    }
    case Kind::gaussian: {
      std::normal_distribution<double> n(0.0, 1.0);
      Vector z(p);
      for (Index i = 0; i < p; ++i) z[i] = n(rng);
      out = mean_ + chol_lower_ * z;
      break;
    }
  }
  return out;
}

double log_prior_density(const VectorRef& beta, const BaseDistribution& base) {
  return base.log_density(beta);
}

// ---------------------------------------------------------------------------
// RadiusPrior

RadiusPrior::RadiusPrior(Kind kind, double a, double b) : kind_(kind), a_(a), b_(b) {}

RadiusPrior RadiusPrior::exponential(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("exponential radius prior: alpha must be > 0");
  return RadiusPrior(Kind::exponential, alpha, 0.0);
}

RadiusPrior RadiusPrior::half_cauchy(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("half-Cauchy radius prior: scale must be > 0");
  return RadiusPrior(Kind::half_cauchy, scale, 0.0);
}

RadiusPrior RadiusPrior::quantile_dependent(double a_w, double b_w) {
  if (!(a_w > 0.0) || !(b_w > 0.0) || !std::isfinite(a_w) || !std::isfinite(b_w)) {
    throw ConfigError("quantile-dependent radius prior: a_w and b_w must be > 0");
  }
  return RadiusPrior(Kind::quantile_dependent, a_w, b_w);
}

double RadiusPrior::log_density(double value) const {
  switch (kind_) {
    case Kind::exponential:
      if (value < 0.0) return kNegInf;
      return -std::log(a_) - value / a_;
    case Kind::half_cauchy:
      if (value < 0.0) return kNegInf;
      return std::log(2.0 / (std::numbers::pi * a_)) - std::log1p((value / a_) * (value / a_));
    case Kind::quantile_dependent:
      if (value <= 0.0 || value >= 1.0) return kNegInf;
      return (a_ - 1.0) * std::log(value) + (b_ - 1.0) * std::log1p(-value) -
             (std::lgamma(a_) + std::lgamma(b_) - std::lgamma(a_ + b_));
  }
  return kNegInf;
}

double RadiusPrior::grad_log_density(double value) const {
  switch (kind_) {
    case Kind::exponential:
      return -1.0 / a_;
    case Kind::half_cauchy:
      return -2.0 * value / (a_ * a_ + value * value);
    case Kind::quantile_dependent:
      return (a_ - 1.0) / value - (b_ - 1.0) / (1.0 - value);
  }
  return 0.0;
}

double RadiusPrior::sample(Rng& rng) const {
  switch (kind_) {
    case Kind::exponential:
      return std::exponential_distribution<double>(1.0 / a_)(rng);
    case Kind::half_cauchy:
      return std::abs(std::cauchy_distribution<double>(0.0, a_)(rng));
    case Kind::quantile_dependent: {
      const double x = std::gamma_distribution<double>(a_, 1.0)(rng);
      const double y = std::gamma_distribution<double>(b_, 1.0)(rng);
      return x / (x + y);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Cardinality laws and kernels

double log_binomial(int n, int k) {
  if (k < 0 || k > n) throw DomainError("log_binomial: need 0 <= k <= n");
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double cardinality_pmf(int j, int p, double r, double lambda) {
  require_cardinality_index(j, p, "cardinality_pmf");
  require_positive(r, "cardinality_pmf: r");
  require_positive(lambda, "cardinality_pmf: lambda");
  const double rate = r / lambda;
  if (j < p) {
    return std::exp((j - 1) * std::log(rate) - std::lgamma(static_cast<double>(j)) - rate);
  }
  if (p == 1) return 1.0;
  // Complement mass: pr(Poisson(rate) >= p - 1) is the regularized lower gamma P(p - 1, rate).
  return boost::math::gamma_p(static_cast<double>(p - 1), rate);
}

double marginal_cardinality_pmf(int j, int p, double lambda, double alpha) {
  require_cardinality_index(j, p, "marginal_cardinality_pmf");
  require_positive(lambda, "marginal_cardinality_pmf: lambda");
  require_positive(alpha, "marginal_cardinality_pmf: alpha");
  const double ratio = lambda / alpha;
  const double log_base = std::log1p(ratio);
  if (j < p) return std::exp(std::log(ratio) - j * log_base);
  return std::exp(-(p - 1) * log_base);
}

double de_boundary_log_kernel(const VectorRef& theta, double r, double lambda) {
  require_positive(r, "de_boundary_log_kernel: r");
  require_positive(lambda, "de_boundary_log_kernel: lambda");
  if (theta.size() < 1 || !theta.allFinite()) {
    throw InputError("de_boundary_log_kernel: theta must be finite and non-empty");
  }
  const int p = static_cast<int>(theta.size());
  const double norm = theta.lpNorm<1>();
  const double tol = 1e-9 * r;
  if (norm > r + tol) {
    throw DomainError("de_boundary_log_kernel: ||theta||_1 exceeds r");
  }
  if (norm < r - tol) {
    return -p * std::log(2.0 * lambda) - norm / lambda;
  }
  int c = 0;
  for (Index i = 0; i < theta.size(); ++i) c += theta[i] != 0.0 ? 1 : 0;
  return -c * std::log(2.0 * lambda) - log_binomial(p, c) + std::log(lambda) - r / lambda;
}

double zero_probability_adaptive(double mu_over_c, double lambda_i) {
  if (!(mu_over_c >= 0.0) || !std::isfinite(mu_over_c)) {
    throw DomainError("zero_probability_adaptive: mu / c must be finite and >= 0");
  }
  require_positive(lambda_i, "zero_probability_adaptive: lambda_i");
  return -std::expm1(-mu_over_c / lambda_i);
}

QuantileRadius radius_from_quantile(const VectorRef& beta, double w) {
  if (!(w > 0.0 && w < 1.0)) {
    throw DomainError("radius_from_quantile: w must lie in (0, 1)");
  }
  if (beta.size() < 1 || !beta.allFinite()) {
    throw InputError("radius_from_quantile: beta must be finite and non-empty");
  }
  const Index p = beta.size();
  std::vector<double> mags(beta.data(), beta.data() + p);
  for (double& m : mags) m = std::abs(m);
  std::sort(mags.begin(), mags.end());

  const double position = std::floor(static_cast<double>(p) * (1.0 - w) + 1e-9);
  const Index rank = std::clamp<Index>(static_cast<Index>(position), 1, p);
  QuantileRadius out;
  out.rank = rank;
  out.mu_tilde = mags[static_cast<std::size_t>(rank - 1)];
  for (double m : mags) out.radius += std::max(m - out.mu_tilde, 0.0);
  return out;
}

TheoryScales theory_lambda_alpha(int p, double x_col_norm, const TheoryHyperparams& hp) {
  if (p < 1) throw DomainError("theory_lambda_alpha: p must be >= 1");
  if (!(x_col_norm > 0.0) || !std::isfinite(x_col_norm)) {
    throw DomainError("theory_lambda_alpha: ||X||_{2,inf} must be > 0");
  }
  if (!(hp.b1 > 0.0)) throw DomainError("theory_lambda_alpha: need b1 > 0");
  if (!(hp.b2 > hp.b3)) throw DomainError("theory_lambda_alpha: need b2 > b3");
  if (!(hp.b3 <= 1.0)) throw DomainError("theory_lambda_alpha: need b3 <= 1");
  TheoryScales out;
  const double pd = static_cast<double>(p);
  out.lambda = hp.b1 * std::pow(pd, hp.b2) / x_col_norm;
  out.alpha = std::pow(pd, hp.b3) / x_col_norm;
  out.lambda_star = (out.lambda + out.alpha) / (out.lambda * out.alpha);
  return out;
}

double max_column_norm(const MatrixRef& x) {
  if (x.cols() < 1) throw InputError("max_column_norm: empty matrix");
  return x.colwise().norm().maxCoeff();
}

// ---------------------------------------------------------------------------
// Spike-and-slab base

UnivariateDensity uniform_density(double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("uniform_density: need hi > lo");
  const double log_height = -std::log(hi - lo);
  UnivariateDensity d;
  d.log_pdf = [=](double x) { return (x >= lo && x <= hi) ? log_height : kNegInf; };
  d.sample = [=](Rng& rng) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  d.support_lo = lo;
  d.support_hi = hi;
  return d;
}

UnivariateDensity normal_density(double mean, double sd) {
  if (!(sd > 0.0)) throw ConfigError("normal_density: sd must be > 0");
  UnivariateDensity d;
  d.log_pdf = [=](double x) {
    const double z = (x - mean) / sd;
    return -0.5 * (kLogTwoPi + z * z) - std::log(sd);
  };
  d.sample = [=](Rng& rng) { return std::normal_distribution<double>(mean, sd)(rng); };
  return d;
}

UnivariateDensity laplace_density(double scale) {
  if (!(scale > 0.0)) throw ConfigError("laplace_density: scale must be > 0");
  UnivariateDensity d;
  d.log_pdf = [=](double x) { return -std::log(2.0 * scale) - std::abs(x) / scale; };
  d.sample = [=](Rng& rng) { return laplace_draw(rng, scale); };
  return d;
}

namespace {

double integrate_density(const UnivariateDensity& d, double lo, double hi) {
  auto f = [&](double x) {
    const double v = d.log_pdf(x);
    return std::isfinite(v) ? std::exp(v) : 0.0;
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-10);
}

}  // namespace

SpikeSlabBase::SpikeSlabBase(double w, double mu_tilde, UnivariateDensity slab,
                             UnivariateDensity interior)
    : w_(w), mu_tilde_(mu_tilde), slab_(std::move(slab)), interior_(std::move(interior)) {
  if (!(w > 0.0 && w <= 1.0)) throw ConfigError("SpikeSlabBase: w must lie in (0, 1]");
  if (!(mu_tilde > 0.0) || !std::isfinite(mu_tilde)) {
    throw ConfigError("SpikeSlabBase: mu_tilde must be > 0");
  }
  if (!slab_.log_pdf || !slab_.sample || !interior_.log_pdf || !interior_.sample) {
    throw ConfigError("SpikeSlabBase: component densities need log_pdf and sample");
  }
  const double slab_mass = integrate_density(slab_, slab_.support_lo, slab_.support_hi);
  if (std::abs(slab_mass - 1.0) > 1e-4) {
    throw ConfigError("SpikeSlabBase: slab density integrates to " + std::to_string(slab_mass));
  }
  const double interior_mass = integrate_density(interior_, -mu_tilde_, mu_tilde_);
  if (std::abs(interior_mass - 1.0) > 1e-4) {
    throw ConfigError("SpikeSlabBase: interior density integrates to " +
                      std::to_string(interior_mass) + " on [-mu_tilde, mu_tilde]");
  }
}

double SpikeSlabBase::log_density(double x) const {
  if (std::abs(x) <= mu_tilde_) {
    if (w_ >= 1.0) return kNegInf;
    return std::log1p(-w_) + interior_.log_pdf(x);
  }
  const double shifted = x > 0.0 ? x - mu_tilde_ : x + mu_tilde_;
  return std::log(w_) + slab_.log_pdf(shifted);
}

double SpikeSlabBase::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= w_) {
    return interior_.sample(rng);
  }
  const double tau = slab_.sample(rng);
  // tau = 0 has probability zero under a continuous slab.
  return tau >= 0.0 ? tau + mu_tilde_ : tau - mu_tilde_;
}

double spike_slab_base_log_density(double x, double w, double mu_tilde,
                                   const UnivariateDensity& slab,
                                   const UnivariateDensity& interior) {
  return SpikeSlabBase(w, mu_tilde, slab, interior).log_density(x);
}

}  // namespace l1ball
