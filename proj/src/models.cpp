#include "l1ball/models.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <numbers>
#include <optional>

#include "l1ball/errors.hpp"
#include "l1ball/projection_gradient.hpp"

namespace l1ball {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

Evaluation rejected(Index dim) {
  Evaluation e;
  e.log_density = -kInf;
  e.gradient = Vector::Zero(dim);
  e.kink = true;
  return e;
}

// exp() of a log-scale coordinate over- or underflows past this bound, so such
// points are rejected rather than projected onto a zero or infinite radius.
constexpr double kMaxAbsCoordinate = 700.0;

bool usable(const Vector& q) { return q.allFinite() && q.cwiseAbs().maxCoeff() < kMaxAbsCoordinate; }

void require_finite(const MatrixRef& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

void require_ig(double shape, double rate, const char* what) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw ConfigError(std::string(what) + ": inverse-gamma shape and rate must be > 0");
  }
}

double sigmoid(double u) { return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

double log_normal_prior(double x, double sd) { return -0.5 * x * x / (sd * sd); }

double sample_variance(const VectorRef& y) {
  if (y.size() < 2) return 1.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

/// log r prior plus the Jacobian of r = exp(u), for the independent radius kinds.
double log_radius_on_log_scale(const RadiusPrior& prior, double u) {
  return prior.log_density(std::exp(u)) + u;
}

double grad_log_radius_on_log_scale(const RadiusPrior& prior, double u) {
  const double r = std::exp(u);
  return r * prior.grad_log_density(r) + 1.0;
}

void require_independent_radius(const RadiusPrior& prior, const char* what) {
  if (prior.kind() == RadiusPrior::Kind::quantile_dependent) {
    throw ConfigError(std::string(what) + ": the quantile-dependent radius prior is only supported on vector balls");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

double log_inverse_gamma_on_log_scale(double v, double shape, double rate) {
  return -shape * v - rate * std::exp(-v);
}

double grad_log_inverse_gamma_on_log_scale(double v, double shape, double rate) {
  return -shape + rate * std::exp(-v);
}

VectorBallBlock::VectorBallBlock(BallPrior prior) : prior_(std::move(prior)) {
  if (p() < 1) throw ConfigError("VectorBallBlock: base distribution has no coordinates");
}

VectorBallBlock::State VectorBallBlock::forward(const VectorRef& q) const {
  const Index n = p();
  const auto beta = q.head(n);
  const double u = q[n];
  State st;
  st.log_prior = prior_.base.log_density(beta);
  if (prior_.radius.kind() == RadiusPrior::Kind::quantile_dependent) {
    st.w = sigmoid(u);
    st.quantile = radius_from_quantile(beta, st.w);
    st.r = st.quantile.radius;
    st.theta = soft_threshold(beta, st.quantile.mu_tilde);
    st.log_prior += prior_.radius.log_density(st.w) + std::log(st.w) + std::log1p(-st.w);
  } else {
    st.r = std::exp(u);
    st.projection = project_l1_ball(beta, st.r);
    st.theta = st.projection.theta;
    st.log_prior += log_radius_on_log_scale(prior_.radius, u);
  }
  return st;
}

void VectorBallBlock::backward(const VectorRef& q, const State& st, const VectorRef& g_theta,
                               Eigen::Ref<Vector> grad) const {
  const Index n = p();
  const auto beta = q.head(n);
  grad.head(n) += prior_.base.grad_log_density(beta);
  if (prior_.radius.kind() == RadiusPrior::Kind::quantile_dependent) {
    grad.head(n) += quantile_threshold_vjp(beta, st.quantile.rank, st.quantile.mu_tilde, g_theta);
    const double w = st.w;
    grad[n] += prior_.radius.grad_log_density(w) * w * (1.0 - w) + 1.0 - 2.0 * w;
  } else {
    const ProjectionVjp vjp = l1_ball_vjp(st.projection, g_theta);
    grad.head(n) += vjp.beta;
    grad[n] += st.r * vjp.radius + grad_log_radius_on_log_scale(prior_.radius, q[n]);
  }
}

Vector VectorBallBlock::initial(Rng& rng) const {
  Vector q(size());
  Vector beta = prior_.base.sample(rng);
  while (beta.cwiseAbs().sum() == 0.0) beta = prior_.base.sample(rng);
  q.head(p()) = beta;
  q[p()] = prior_.radius.kind() == RadiusPrior::Kind::quantile_dependent ? 0.0
                                                                         : std::log(0.5 * beta.cwiseAbs().sum());
  return q;
}

// ---------------------------------------------------------------------------
// Regression

void RegressionData::validate() const {
  if (x.rows() < 1 || x.cols() < 1) throw InputError("RegressionData: X is empty");
  if (x.rows() != y.size()) throw InputError("RegressionData: X has " + std::to_string(x.rows()) +
                                             " rows but y has " + std::to_string(y.size()) + " entries");
  require_finite(x, "RegressionData: X");
  require_finite(y, "RegressionData: y");
  require_ig(sigma2_shape, sigma2_rate, "RegressionData");
}

LogLikGrad regression_log_lik_grad(const VectorRef& theta, double sigma2, const RegressionData& data) {
  if (theta.size() != data.x.cols()) throw InputError("regression_log_lik_grad: theta length does not match X");
  if (data.y.size() != data.x.rows()) throw InputError("regression_log_lik_grad: y length does not match X");
  if (!(sigma2 > 0.0)) throw DomainError("regression_log_lik_grad: sigma2 must be > 0");
  const double n = static_cast<double>(data.y.size());
  const Vector resid = data.y - data.x * theta;
  const double rss = resid.squaredNorm();
  LogLikGrad out;
  out.value = -0.5 * n * (kLogTwoPi + std::log(sigma2)) - 0.5 * rss / sigma2;
  out.grad_theta = data.x.transpose() * resid / sigma2;
  out.grad_log_sigma2 = -0.5 * n + 0.5 * rss / sigma2;
  return out;
}

RegressionModel::RegressionModel(RegressionData data, BallPrior prior)
    : data_(std::move(data)), block_(std::move(prior)) {
  data_.validate();
  if (block_.p() != data_.x.cols()) throw ConfigError("RegressionModel: prior dimension does not match X");
}

Evaluation RegressionModel::evaluate(const Vector& q, TargetWorkspace*) const {
  if (!usable(q)) return rejected(q.size());
  const Index k = block_.size();
  const double v = q[k];
  const auto st = block_.forward(q.head(k));
  const LogLikGrad ll = regression_log_lik_grad(st.theta, std::exp(v), data_);
  Evaluation e;
  e.log_density = ll.value + st.log_prior + log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  e.gradient = Vector::Zero(q.size());
  block_.backward(q.head(k), st, ll.grad_theta, e.gradient.head(k));
  e.gradient[k] = ll.grad_log_sigma2 + grad_log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  return e;
}

namespace {

// Least-squares residual of y on the columns in support, with the thin Q factor.
struct SubsetFit {
  Matrix q;
  Vector resid;
  double rss = 0.0;
};

SubsetFit subset_fit(const Matrix& x, const Vector& y, const std::vector<Index>& support) {
  SubsetFit f;
  const Index n = x.rows();
  const auto k = static_cast<Index>(support.size());
  f.q = Matrix::Zero(n, k);
  if (k > 0) {
    Matrix xs(n, k);
    for (Index j = 0; j < k; ++j) xs.col(j) = x.col(support[static_cast<std::size_t>(j)]);
    Eigen::HouseholderQR<Matrix> qr(xs);
    f.q = qr.householderQ() * Matrix::Identity(n, k);
  }
  f.resid = y - f.q * (f.q.transpose() * y);
  f.rss = f.resid.squaredNorm();
  return f;
}

// Swap local search for a fixed-size subset: repeatedly drops one member and
// adds the column with the largest exact reduction in residual sum of squares,
// while the swap strictly improves the fit.
double swap_search(const Matrix& x, const Vector& y, std::vector<Index>& support) {
  const Index p = x.cols();
  double rss = subset_fit(x, y, support).rss;
  for (int sweep = 0; sweep < 50; ++sweep) {
    bool improved = false;
    for (std::size_t pos = 0; pos < support.size(); ++pos) {
      std::vector<Index> rest = support;
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(pos));
      const SubsetFit f = subset_fit(x, y, rest);
      const Matrix xp = x - f.q * (f.q.transpose() * x);
      const Vector num = (x.transpose() * f.resid).array().square();
      const Vector den = xp.colwise().squaredNorm().transpose();
      Index pick = -1;
      double gain = 0.0;
      for (Index j = 0; j < p; ++j) {
        if (!(den[j] > 1e-12) || std::find(support.begin(), support.end(), j) != support.end()) continue;
        if (num[j] / den[j] > gain) {
          gain = num[j] / den[j];
          pick = j;
        }
      }
      if (pick >= 0 && f.rss - gain < rss * (1.0 - 1e-10)) {
        support[pos] = pick;
        rss = f.rss - gain;
        improved = true;
      }
    }
    if (!improved) break;
  }
  return rss;
}

// Chain placement only. For each subset size, runs swap search from a few
// random subsets and keeps the least-squares refit with the smallest extended
// BIC n log(RSS/n) + |S| (log n + 2 log p), over sizes up to n / 2. Returns
// zeros when the empty model wins.
Vector subset_start(const Matrix& x, const Vector& y, Rng& rng) {
  constexpr int kRestarts = 40;
  const Index n = x.rows();
  const Index p = x.cols();
  const double log_n = std::log(static_cast<double>(n));
  const double log_p = std::log(static_cast<double>(p));
  auto ebic = [&](double rss, Index k) {
    return static_cast<double>(n) * std::log(std::max(rss / static_cast<double>(n), 1e-300)) +
           static_cast<double>(k) * (log_n + 2.0 * log_p);
  };

  double best_score = ebic(y.squaredNorm(), 0);
  std::vector<Index> best;
  std::vector<Index> all(static_cast<std::size_t>(p));
  std::iota(all.begin(), all.end(), Index{0});
  for (Index k = 1; k <= std::min<Index>(p, n / 2); ++k) {
    for (int rep = 0; rep < kRestarts; ++rep) {
      std::vector<Index> support;
      std::sample(all.begin(), all.end(), std::back_inserter(support), k, rng);
      const double score = ebic(swap_search(x, y, support), k);
      if (score < best_score) {
        best_score = score;
        best = support;
      }
    }
  }

  Vector fit = Vector::Zero(p);
  if (best.empty()) return fit;
  const auto k = static_cast<Index>(best.size());
  Matrix xs(n, k);
  for (Index j = 0; j < k; ++j) xs.col(j) = x.col(best[static_cast<std::size_t>(j)]);
  const Vector coef = xs.colPivHouseholderQr().solve(y);
  for (Index j = 0; j < k; ++j) fit[best[static_cast<std::size_t>(j)]] = coef[j];
  return fit;
}

}  // namespace

Vector RegressionModel::initial_position(Rng& rng) const {
  Vector q(dimension());
  const Index p = block_.p();
  // Start from a searched least-squares refit: beta is the fit pushed out by tau on its support
  // and small noise elsewhere, with r (or w) chosen so that the projection
  // returns the fit. Falls back to a prior draw when the fit is empty.
  const Vector fit = subset_start(data_.x, data_.y, rng);
  const Index active = (fit.array() != 0.0).count();
  if (active == 0) {
    q.head(block_.size()) = block_.initial(rng);
    q[block_.size()] = std::log(std::max(sample_variance(data_.y), 1e-6));
    return q;
  }
  const Vector& scales = block_.prior().base.scales();
  const double tau = 0.5 * (scales.size() > 0 ? scales.mean() : 1.0);
  std::uniform_real_distribution<double> inside(-0.5 * tau, 0.5 * tau);
  for (Index i = 0; i < p; ++i) q[i] = fit[i] != 0.0 ? fit[i] + std::copysign(tau, fit[i]) : inside(rng);
  if (block_.prior().radius.kind() == RadiusPrior::Kind::quantile_dependent) {
    const double w = (static_cast<double>(active) + 0.5) / static_cast<double>(p);
    q[p] = std::log(w) - std::log1p(-w);
  } else {
    q[p] = std::log(fit.cwiseAbs().sum());
  }
  const double resid = (data_.y - data_.x * fit).squaredNorm() / static_cast<double>(data_.y.size());
  q[block_.size()] = std::log(std::max(resid, 1e-2 * sample_variance(data_.y)));
  return q;
}

SampleRecord RegressionModel::make_record(const Vector& q, TargetWorkspace*) const {
  const auto st = block_.forward(q.head(block_.size()));
  SampleRecord rec;
  rec.theta = st.theta;
  rec.r = st.r;
  rec.extras.emplace_back("sigma2", std::exp(q[block_.size()]));
  if (block_.prior().radius.kind() == RadiusPrior::Kind::quantile_dependent) rec.extras.emplace_back("w", st.w);
  return rec;
}

// ---------------------------------------------------------------------------
// Fused grid

void GridData::validate() const {
  if (pixels.rows() < 1 || pixels.cols() < 1) throw InputError("GridData: empty image");
  if (pixels.rows() * pixels.cols() < 2) throw InputError("GridData: image needs at least two pixels");
  require_finite(pixels, "GridData: pixels");
  if (!(mu_prior_sd > 0.0)) throw ConfigError("GridData: mu_prior_sd must be > 0");
  require_ig(sigma2_shape, sigma2_rate, "GridData");
}

Matrix grid_contrast_matrix(Index p1, Index p2) {
  if (p1 < 1 || p2 < 1) throw InputError("grid_contrast_matrix: grid dimensions must be positive");
  const Index n = p1 * p2;
  const Index rows = (p1 - 1) * p2 + p1 * (p2 - 1) + n;
  Matrix d = Matrix::Zero(rows, n);
  Index row = 0;
  for (Index i = 0; i < p1; ++i) {
    for (Index j = 0; j + 1 < p2; ++j, ++row) {
      d(row, i * p2 + j) = 1.0;
      d(row, i * p2 + j + 1) = -1.0;
    }
  }
  for (Index i = 0; i + 1 < p1; ++i) {
    for (Index j = 0; j < p2; ++j, ++row) {
      d(row, i * p2 + j) = 1.0;
      d(row, (i + 1) * p2 + j) = -1.0;
    }
  }
  for (Index k = 0; k < n; ++k, ++row) d(row, k) = 1.0;
  return d;
}

namespace {

struct FusedWorkspace : TargetWorkspace {
  std::optional<AdmmResult> last;
};

}  // namespace

struct FusedModel::Projected {
  AdmmResult admm;
  LinearMapActiveSet face;
};

FusedModel::FusedModel(GridData data, BaseDistribution base, RadiusPrior radius, AdmmOptions admm)
    : data_((data.validate(), std::move(data))),
      base_(std::move(base)),
      radius_(std::move(radius)),
      n_pixels_(data_.pixels.size()),
      projector_(grid_contrast_matrix(data_.pixels.rows(), data_.pixels.cols()), admm) {
  const RowMatrix rows = data_.pixels;
  y_ = Eigen::Map<const Vector>(rows.data(), n_pixels_);
  if (base_.dimension() != n_pixels_) throw ConfigError("FusedModel: base dimension does not match the pixel count");
  require_independent_radius(radius_, "FusedModel");
}

std::unique_ptr<TargetWorkspace> FusedModel::make_workspace() const { return std::make_unique<FusedWorkspace>(); }

FusedModel::Projected FusedModel::project(const Vector& q, TargetWorkspace* workspace) const {
  auto* ws = dynamic_cast<FusedWorkspace*>(workspace);
  const auto beta = q.head(n_pixels_);
  const double r = std::exp(q[n_pixels_]);
  const AdmmResult* warm = (ws && ws->last) ? &*ws->last : nullptr;
  AdmmResult admm = projector_.project(beta, r, warm);
  if (ws && admm.iterations > 0) ws->last = admm;
  LinearMapActiveSet face(admm, projector_.contrast(), beta, r);
  return {std::move(admm), std::move(face)};
}

Evaluation FusedModel::evaluate(const Vector& q, TargetWorkspace* workspace) const {
  const Index n = n_pixels_;
  if (!usable(q)) return rejected(q.size());
  std::optional<Projected> pr;
  try {
    pr.emplace(project(q, workspace));
  } catch (const ConvergenceError&) {
    return rejected(q.size());
  }
  const Vector& theta = pr->face.theta();
  const double u = q[n];
  const double mu = q[n + 1];
  const double v = q[n + 2];
  const double sigma2 = std::exp(v);
  const Vector resid = y_.array() - mu - theta.array();
  const double rss = resid.squaredNorm();
  const double nn = static_cast<double>(n);

  Evaluation e;
  e.log_density = -0.5 * nn * (kLogTwoPi + v) - 0.5 * rss / sigma2 + base_.log_density(q.head(n)) +
                  log_radius_on_log_scale(radius_, u) + log_normal_prior(mu, data_.mu_prior_sd) +
                  log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  e.gradient = Vector::Zero(q.size());
  const Vector g_theta = resid / sigma2;
  const ProjectionVjp vjp = pr->face.vjp(g_theta);
  e.gradient.head(n) = vjp.beta + base_.grad_log_density(q.head(n));
  e.gradient[n] = std::exp(u) * vjp.radius + grad_log_radius_on_log_scale(radius_, u);
  e.gradient[n + 1] = g_theta.sum() - mu / (data_.mu_prior_sd * data_.mu_prior_sd);
  e.gradient[n + 2] = -0.5 * nn + 0.5 * rss / sigma2 +
                      grad_log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  return e;
}

Vector FusedModel::initial_position(Rng& rng) const {
  Vector q(dimension());
  const Vector& y = y_;
  const double mean = y.mean();
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (Index k = 0; k < n_pixels_; ++k) q[k] = y[k] - mean + jitter(rng);
  const double tv = (projector_.contrast() * q.head(n_pixels_)).cwiseAbs().sum();
  q[n_pixels_] = std::log(std::max(0.5 * tv, 1e-3));
  q[n_pixels_ + 1] = mean;
  q[n_pixels_ + 2] = std::log(std::max(sample_variance(y) * 0.5, 1e-4));
  return q;
}

SampleRecord FusedModel::make_record(const Vector& q, TargetWorkspace* workspace) const {
  const Projected pr = project(q, workspace);
  SampleRecord rec;
  rec.theta = pr.face.theta();
  rec.r = std::exp(q[n_pixels_]);
  if (pr.face.interior()) {
    rec.contrast = projector_.contrast() * rec.theta;
  } else {
    rec.contrast = pr.admm.contrast;
  }
  // Neighbour pairs that differ; the identity rows of D are excluded.
  const Index differences = rec.contrast.size() - n_pixels_;
  rec.extras.emplace_back("changes", static_cast<double>((rec.contrast.head(differences).array() != 0.0).count()));
  rec.extras.emplace_back("mu", q[n_pixels_ + 1]);
  rec.extras.emplace_back("sigma2", std::exp(q[n_pixels_ + 2]));
  return rec;
}

// ---------------------------------------------------------------------------
// Mixture

void MixtureData::validate() const {
  if (y.size() < 1) throw InputError("MixtureData: no observations");
  require_finite(y, "MixtureData: y");
  if (k1 < 2) throw ConfigError("MixtureData: K1 must be >= 2");
  if (!(mu_prior_sd > 0.0)) throw ConfigError("MixtureData: mu_prior_sd must be > 0");
  require_ig(sigma2_shape, sigma2_rate, "MixtureData");
}

Vector mixture_weights_from_ball(const VectorRef& beta, double r) {
  if (beta.size() < 2) throw InputError("mixture_weights_from_ball: need at least two components");
  const Vector w = project_l1_ball(beta, r).theta;
  const double total = w.cwiseAbs().sum();
  if (total == 0.0) throw DegenerateInputError("mixture_weights_from_ball: every projected weight is zero");
  return w.cwiseAbs() / total;
}

namespace {

struct MixtureTerms {
  double value = 0.0;
  Vector grad_theta;
  Vector grad_mu;
  Vector grad_log_sigma2;
};

MixtureTerms mixture_terms(const VectorRef& y, const VectorRef& theta, const VectorRef& mus,
                           const VectorRef& sigma2s, bool with_grad) {
  const Index k = theta.size();
  if (mus.size() != k || sigma2s.size() != k) throw InputError("mixture_log_lik: parameter lengths differ");
  std::vector<Index> active;
  for (Index i = 0; i < k; ++i) {
    if (theta[i] < 0.0) throw DomainError("mixture_log_lik: negative weight");
    if (theta[i] > 0.0) {
      if (!(sigma2s[i] > 0.0)) throw DomainError("mixture_log_lik: sigma2 must be > 0");
      active.push_back(i);
    }
  }
  if (active.empty()) throw DegenerateInputError("mixture_log_lik: no component has positive weight");
  const Index a = static_cast<Index>(active.size());
  Vector offset(a), precision(a), mean(a);
  for (Index c = 0; c < a; ++c) {
    const Index i = active[c];
    offset[c] = std::log(theta[i]) - 0.5 * (kLogTwoPi + std::log(sigma2s[i]));
    precision[c] = 1.0 / sigma2s[i];
    mean[c] = mus[i];
  }
  MixtureTerms out;
  if (with_grad) {
    out.grad_theta = Vector::Zero(k);
    out.grad_mu = Vector::Zero(k);
    out.grad_log_sigma2 = Vector::Zero(k);
  }
  Vector resp(a), diff(a);
  Vector sum_resp = Vector::Zero(a), sum_resp_diff = Vector::Zero(a), sum_resp_sq = Vector::Zero(a);
  for (Index j = 0; j < y.size(); ++j) {
    diff = y[j] - mean.array();
    resp = offset.array() - 0.5 * diff.array().square() * precision.array();
    const double top = resp.maxCoeff();
    resp = (resp.array() - top).exp();
    const double total = resp.sum();
    out.value += top + std::log(total);
    if (with_grad) {
      resp /= total;
      sum_resp += resp;
      sum_resp_diff.array() += resp.array() * diff.array();
      sum_resp_sq.array() += resp.array() * diff.array().square();
    }
  }
  if (with_grad) {
    for (Index c = 0; c < a; ++c) {
      const Index i = active[c];
      out.grad_theta[i] = sum_resp[c] / theta[i];
      out.grad_mu[i] = sum_resp_diff[c] * precision[c];
      out.grad_log_sigma2[i] = -0.5 * sum_resp[c] + 0.5 * sum_resp_sq[c] * precision[c];
    }
  }
  return out;
}

}  // namespace

double mixture_log_lik(const VectorRef& y, const VectorRef& theta, const VectorRef& mus, const VectorRef& sigma2s) {
  return mixture_terms(y, theta, mus, sigma2s, false).value;
}

MixtureModel::MixtureModel(MixtureData data, BallPrior prior)
    : data_((data.validate(), std::move(data))), block_(std::move(prior)), k1_(data_.k1) {
  if (block_.p() != k1_) throw ConfigError("MixtureModel: prior dimension does not match K1");
  require_independent_radius(block_.prior().radius, "MixtureModel");
}

Evaluation MixtureModel::evaluate(const Vector& q, TargetWorkspace*) const {
  const Index k = k1_;
  if (!usable(q)) return rejected(q.size());
  // Non-centred coordinates: beta = r * b, so that
  // theta = |P_{B_r}(beta)| / sum = |P_{B_1}(b)| / sum depends on b alone.
  const auto b = q.head(k);
  const double u = q[k];
  const double r = std::exp(u);
  const Vector beta = r * b;
  const ProjectionResult unit = project_l1_ball(b, 1.0);
  const Vector& w = unit.theta;
  const double total = w.cwiseAbs().sum();
  if (total == 0.0) return rejected(q.size());
  const Vector theta = w.cwiseAbs() / total;
  const auto mus = q.segment(k + 1, k);
  const auto logs2 = q.segment(2 * k + 1, k);
  const Vector sigma2s = logs2.array().exp();
  const MixtureTerms ll = mixture_terms(data_.y, theta, mus, sigma2s, true);
  const BallPrior& prior = block_.prior();

  Evaluation e;
  e.log_density = ll.value + prior.base.log_density(beta) + static_cast<double>(k) * u +
                  log_radius_on_log_scale(prior.radius, u);
  e.gradient = Vector::Zero(q.size());
  const double sd2 = data_.mu_prior_sd * data_.mu_prior_sd;
  for (Index i = 0; i < k; ++i) {
    e.log_density += log_normal_prior(mus[i], data_.mu_prior_sd) +
                     log_inverse_gamma_on_log_scale(logs2[i], data_.sigma2_shape, data_.sigma2_rate);
    e.gradient[k + 1 + i] = ll.grad_mu[i] - mus[i] / sd2;
    e.gradient[2 * k + 1 + i] =
        ll.grad_log_sigma2[i] + grad_log_inverse_gamma_on_log_scale(logs2[i], data_.sigma2_shape, data_.sigma2_rate);
  }
  // theta_i = |w_i| / S: d theta_i / d w_j = sign(w_j) (delta_ij / S - |w_i| / S^2).
  const double weighted = ll.grad_theta.dot(theta) / total;
  Vector g_w = Vector::Zero(k);
  for (Index j = 0; j < k; ++j) {
    if (w[j] == 0.0) continue;
    g_w[j] = (w[j] < 0.0 ? -1.0 : 1.0) * (ll.grad_theta[j] / total - weighted);
  }
  const Vector g_prior = prior.base.grad_log_density(beta);
  e.gradient.head(k) = l1_ball_vjp(unit, g_w).beta + r * g_prior;
  e.gradient[k] = beta.dot(g_prior) + static_cast<double>(k) + grad_log_radius_on_log_scale(prior.radius, u);
  return e;
}

Vector MixtureModel::initial_position(Rng& rng) const {
  Vector q(dimension());
  const Index k = k1_;
  // Component means start at evenly spaced sample quantiles so that every
  // active component sees data; r starts below ||beta||_1, away from w = 0.
  q.head(k + 1) = block_.initial(rng);
  q.head(k) /= std::exp(q[k]);
  Vector sorted = data_.y;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  const Index n = sorted.size();
  const double spread = sample_variance(data_.y);
  std::normal_distribution<double> jitter(0.0, 0.05 * std::sqrt(spread));
  for (Index i = 0; i < k; ++i) {
    const Index at = std::min<Index>(n - 1, static_cast<Index>((static_cast<double>(i) + 0.5) / k * n));
    q[k + 1 + i] = sorted[at] + jitter(rng);
    q[2 * k + 1 + i] = std::log(std::max(spread / k, 1e-3));
  }
  return q;
}

SampleRecord MixtureModel::make_record(const Vector& q, TargetWorkspace*) const {
  const Index k = k1_;
  const Vector w = project_l1_ball(q.head(k), 1.0).theta;
  SampleRecord rec;
  rec.theta = w.cwiseAbs() / w.cwiseAbs().sum();
  rec.r = std::exp(q[k]);
  Index active = 0;
  for (Index i = 0; i < k; ++i) active += rec.theta[i] > 0.0 ? 1 : 0;
  rec.extras.emplace_back("K", static_cast<double>(active));
  for (Index i = 0; i < k; ++i) rec.extras.emplace_back("mu" + std::to_string(i + 1), q[k + 1 + i]);
  for (Index i = 0; i < k; ++i) rec.extras.emplace_back("sigma2_" + std::to_string(i + 1), std::exp(q[2 * k + 1 + i]));
  return rec;
}

// ---------------------------------------------------------------------------
// Low rank plus sparse

void LowRankSparseData::validate() const {
  if (frames.rows() < 1) throw InputError("LowRankSparseData: need at least one frame");
  if (height < 1 || width < 1 || height * width != frames.cols()) {
    throw InputError("LowRankSparseData: frame shape does not match the pixel count");
  }
  require_finite(frames, "LowRankSparseData: frames");
  require_ig(sigma2_shape, sigma2_rate, "LowRankSparseData");
}

LowRankSparseModel::LowRankSparseModel(LowRankSparseData data, double lambda_low_rank, RadiusPrior radius_low_rank,
                                       double lambda_sparse, RadiusPrior radius_sparse)
    : data_((data.validate(), std::move(data))),
      lambda_low_rank_(lambda_low_rank),
      radius_low_rank_(std::move(radius_low_rank)),
      lambda_sparse_(lambda_sparse),
      radius_sparse_(std::move(radius_sparse)) {
  if (!(lambda_low_rank_ > 0.0) || !(lambda_sparse_ > 0.0)) {
    throw ConfigError("LowRankSparseModel: base scales must be > 0");
  }
  require_independent_radius(radius_low_rank_, "LowRankSparseModel");
  require_independent_radius(radius_sparse_, "LowRankSparseModel");
}

Index LowRankSparseModel::dimension() const {
  const Index t = frames();
  const Index mn = pixels();
  return 2 * t * mn + 1 + t + 1;
}

namespace {

double laplace_log_density(const VectorRef& x, double scale) {
  return -x.cwiseAbs().sum() / scale - static_cast<double>(x.size()) * std::log(2.0 * scale);
}

Vector laplace_grad(const VectorRef& x, double scale) {
  return x.unaryExpr([scale](double v) { return v > 0.0 ? -1.0 / scale : (v < 0.0 ? 1.0 / scale : 0.0); });
}

}  // namespace

Evaluation LowRankSparseModel::evaluate(const Vector& q, TargetWorkspace*) const {
  const Index t = frames();
  const Index mn = pixels();
  const Index block = t * mn;
  if (!usable(q)) return rejected(q.size());
  const Eigen::Map<const RowMatrix> beta_l(q.data(), t, mn);
  const double u_l = q[block];
  const double r_l = std::exp(u_l);
  const Index s_off = block + 1;
  const Index us_off = s_off + block;
  const double v = q[us_off + t];
  const double sigma2 = std::exp(v);

  NuclearProjection lp;
  try {
    lp = nuclear_project(beta_l, r_l);
  } catch (const NumericalError&) {
    return rejected(q.size());
  }
  RowMatrix resid = data_.frames - lp.projected;
  std::vector<ProjectionResult> sparse(static_cast<std::size_t>(t));
  for (Index f = 0; f < t; ++f) {
    sparse[f] = project_l1_ball(q.segment(s_off + f * mn, mn), std::exp(q[us_off + f]));
    resid.row(f) -= sparse[f].theta.transpose();
  }
  const double rss = resid.squaredNorm();
  const double n = static_cast<double>(block);

  Evaluation e;
  e.gradient = Vector::Zero(q.size());
  e.log_density = -0.5 * n * (kLogTwoPi + v) - 0.5 * rss / sigma2 +
                  log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  e.gradient[us_off + t] = -0.5 * n + 0.5 * rss / sigma2 +
                           grad_log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);

  const RowMatrix g = resid / sigma2;
  const MatrixVjp lv = nuclear_vjp(beta_l, r_l, g);
  const auto beta_l_flat = q.head(block);
  e.log_density += laplace_log_density(beta_l_flat, lambda_low_rank_) + log_radius_on_log_scale(radius_low_rank_, u_l);
  Eigen::Map<RowMatrix>(e.gradient.data(), t, mn) = lv.b;
  e.gradient.head(block) += laplace_grad(beta_l_flat, lambda_low_rank_);
  e.gradient[block] = r_l * lv.radius + grad_log_radius_on_log_scale(radius_low_rank_, u_l);

  for (Index f = 0; f < t; ++f) {
    const auto beta_s = q.segment(s_off + f * mn, mn);
    const double u_s = q[us_off + f];
    const ProjectionVjp sv = l1_ball_vjp(sparse[f], g.row(f).transpose());
    e.log_density += laplace_log_density(beta_s, lambda_sparse_) + log_radius_on_log_scale(radius_sparse_, u_s);
    e.gradient.segment(s_off + f * mn, mn) = sv.beta + laplace_grad(beta_s, lambda_sparse_);
    e.gradient[us_off + f] = std::exp(u_s) * sv.radius + grad_log_radius_on_log_scale(radius_sparse_, u_s);
  }
  return e;
}

Vector LowRankSparseModel::initial_position(Rng& rng) const {
  const Index t = frames();
  const Index mn = pixels();
  const Index block = t * mn;
  Vector q(dimension());
  std::normal_distribution<double> jitter(0.0, 0.01);
  const RowMatrix m = data_.frames;
  const Eigen::Map<const Vector> flat(m.data(), block);
  for (Index i = 0; i < block; ++i) q[i] = flat[i] + jitter(rng);
  Eigen::JacobiSVD<Matrix> svd(data_.frames);
  q[block] = std::log(std::max(0.5 * svd.singularValues().sum(), 1e-3));
  std::normal_distribution<double> small(0.0, 0.1 * lambda_sparse_);
  for (Index i = 0; i < block; ++i) q[block + 1 + i] = small(rng);
  for (Index f = 0; f < t; ++f) {
    const double norm = q.segment(block + 1 + f * mn, mn).cwiseAbs().sum();
    q[2 * block + 1 + f] = std::log(std::max(0.5 * norm, 1e-3));
  }
  q[2 * block + 1 + t] = std::log(std::max(sample_variance(flat) * 0.1, 1e-4));
  return q;
}

SampleRecord LowRankSparseModel::make_record(const Vector& q, TargetWorkspace*) const {
  const Index t = frames();
  const Index mn = pixels();
  const Index block = t * mn;
  const Eigen::Map<const RowMatrix> beta_l(q.data(), t, mn);
  const NuclearProjection lp = nuclear_project(beta_l, std::exp(q[block]));
  SampleRecord rec;
  rec.theta.resize(2 * block);
  Eigen::Map<RowMatrix>(rec.theta.data(), t, mn) = lp.projected;
  for (Index f = 0; f < t; ++f) {
    rec.theta.segment(block + f * mn, mn) =
        project_l1_ball(q.segment(block + 1 + f * mn, mn), std::exp(q[2 * block + 1 + f])).theta;
  }
  rec.r = std::exp(q[block]);
  Index rank = 0;
  for (Index i = 0; i < lp.singular_values.size(); ++i) rank += lp.singular_values[i] > 0.0 ? 1 : 0;
  rec.extras.emplace_back("rank", static_cast<double>(rank));
  rec.extras.emplace_back("nuclear_norm", lp.singular_values.sum());
  rec.extras.emplace_back("sigma2", std::exp(q[2 * block + 1 + t]));
  return rec;
}

// ---------------------------------------------------------------------------
// Structured sparsity

void StructuredData::validate() const {
  const Index p = affinity.rows();
  if (p < 2 || affinity.cols() != p) throw InputError("StructuredData: affinity must be square with p >= 2");
  if (structural.rows() != p || structural.cols() != p) {
    throw InputError("StructuredData: structural matrix shape does not match the affinity");
  }
  require_finite(affinity, "StructuredData: affinity");
  require_finite(structural, "StructuredData: structural");
  if ((affinity - affinity.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InputError("StructuredData: affinity is not symmetric");
  }
  if ((structural - structural.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InputError("StructuredData: structural matrix is not symmetric");
  }
  if (structural.minCoeff() < 0.0 || structural.maxCoeff() > 1.0) {
    throw InputError("StructuredData: structural entries must lie in [0, 1]");
  }
  if (factors < 1) throw ConfigError("StructuredData: need at least one factor");
  require_ig(sigma2_shape, sigma2_rate, "StructuredData");
}

Matrix structured_base_covariance(const MatrixRef& structural, double kappa) {
  if (structural.rows() != structural.cols()) throw InputError("structured_base_covariance: S must be square");
  if (kappa < 0.0) throw ConfigError("structured_base_covariance: kappa must be >= 0");
  const Index p = structural.rows();
  return Matrix::Ones(p, p) - structural + kappa * Matrix::Identity(p, p);
}

namespace {

double resolve_kappa(const StructuredData& data) {
  if (data.kappa >= 0.0) return data.kappa;
  const Matrix cov = structured_base_covariance(data.structural, 0.0);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-8) return 0.0;
  return 1e-3;
}

}  // namespace

StructuredSparsityModel::StructuredSparsityModel(StructuredData data, RadiusPrior radius, RadiusPrior factor_radius)
    : data_((data.validate(), std::move(data))),
      radius_(std::move(radius)),
      factor_radius_(std::move(factor_radius)),
      kappa_(resolve_kappa(data_)),
      base_(BaseDistribution::gaussian(Vector::Zero(data_.affinity.rows()),
                                       structured_base_covariance(data_.structural, kappa_))),
      p_(data_.affinity.rows()),
      d_(data_.factors) {
  require_independent_radius(radius_, "StructuredSparsityModel");
  require_independent_radius(factor_radius_, "StructuredSparsityModel");
}

Index StructuredSparsityModel::dimension() const { return d_ * p_ + 2 * d_ + 2; }

Evaluation StructuredSparsityModel::evaluate(const Vector& q, TargetWorkspace*) const {
  const Index p = p_;
  const Index d = d_;
  if (!usable(q)) return rejected(q.size());
  const Index ur_off = d * p;
  const Index lg_off = ur_off + d;
  const Index ut = lg_off + d;
  const Index vi = ut + 1;
  const double v = q[vi];
  const double sigma2 = std::exp(v);

  std::vector<ProjectionResult> factors(static_cast<std::size_t>(d));
  Matrix theta(p, d);
  for (Index k = 0; k < d; ++k) {
    factors[k] = project_l1_ball(q.segment(k * p, p), std::exp(q[ur_off + k]));
    theta.col(k) = factors[k].theta;
  }
  const Vector gamma = q.segment(lg_off, d).array().exp();
  const double r_tilde = std::exp(q[ut]);
  const ProjectionResult lambda = project_l1_ball(gamma, r_tilde);

  Matrix resid = data_.affinity - theta * lambda.theta.asDiagonal() * theta.transpose();
  resid.diagonal().setZero();
  const double rss = 0.5 * resid.squaredNorm();
  const double pairs = 0.5 * static_cast<double>(p * (p - 1));

  Evaluation e;
  e.gradient = Vector::Zero(q.size());
  e.log_density = -0.5 * pairs * (kLogTwoPi + v) - 0.5 * rss / sigma2 +
                  log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);
  e.gradient[vi] = -0.5 * pairs + 0.5 * rss / sigma2 +
                   grad_log_inverse_gamma_on_log_scale(v, data_.sigma2_shape, data_.sigma2_rate);

  const Matrix w = resid / sigma2;
  const Matrix wt = w * theta;
  Vector g_lambda(d);
  for (Index k = 0; k < d; ++k) {
    const auto beta = q.segment(k * p, p);
    const double u = q[ur_off + k];
    g_lambda[k] = 0.5 * theta.col(k).dot(wt.col(k));
    const Vector g_theta = lambda.theta[k] * wt.col(k);
    const ProjectionVjp vjp = l1_ball_vjp(factors[k], g_theta);
    e.log_density += base_.log_density(beta) + log_radius_on_log_scale(radius_, u);
    e.gradient.segment(k * p, p) = vjp.beta + base_.grad_log_density(beta);
    e.gradient[ur_off + k] = std::exp(u) * vjp.radius + grad_log_radius_on_log_scale(radius_, u);
  }
  // gamma_k ~ Exp(1) sampled on the log scale.
  const ProjectionVjp lv = l1_ball_vjp(lambda, g_lambda);
  for (Index k = 0; k < d; ++k) {
    e.log_density += -gamma[k] + q[lg_off + k];
    e.gradient[lg_off + k] = gamma[k] * lv.beta[k] - gamma[k] + 1.0;
  }
  e.log_density += log_radius_on_log_scale(factor_radius_, q[ut]);
  e.gradient[ut] = r_tilde * lv.radius + grad_log_radius_on_log_scale(factor_radius_, q[ut]);
  return e;
}

Vector StructuredSparsityModel::initial_position(Rng& rng) const {
  const Index p = p_;
  const Index d = d_;
  Vector q(dimension());
  for (Index k = 0; k < d; ++k) {
    const Vector beta = base_.sample(rng);
    q.segment(k * p, p) = beta;
    q[d * p + k] = std::log(std::max(0.5 * beta.cwiseAbs().sum(), 1e-3));
  }
  std::exponential_distribution<double> exp1(1.0);
  double total = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double g = std::max(exp1(rng), 1e-3);
    total += g;
    q[d * p + d + k] = std::log(g);
  }
  q[d * p + 2 * d] = std::log(0.5 * total);
  Matrix a = data_.affinity;
  a.diagonal().setZero();
  const double var = a.squaredNorm() / std::max<double>(1.0, static_cast<double>(p * (p - 1)));
  q[d * p + 2 * d + 1] = std::log(std::max(var, 1e-4));
  return q;
}

SampleRecord StructuredSparsityModel::make_record(const Vector& q, TargetWorkspace*) const {
  const Index p = p_;
  const Index d = d_;
  SampleRecord rec;
  rec.theta.resize(d + d * p);
  const Vector gamma = q.segment(d * p + d, d).array().exp();
  rec.r = std::exp(q[d * p + 2 * d]);
  rec.theta.head(d) = project_l1_ball(gamma, rec.r).theta;
  for (Index k = 0; k < d; ++k) {
    rec.theta.segment(d + k * p, p) = project_l1_ball(q.segment(k * p, p), std::exp(q[d * p + k])).theta;
  }
  rec.extras.emplace_back("factors", static_cast<double>((rec.theta.head(d).array() != 0.0).count()));
  rec.extras.emplace_back("sigma2", std::exp(q[d * p + 2 * d + 1]));
  return rec;
}

// ---------------------------------------------------------------------------

const std::vector<ModelInfo>& registered_models() {
  static const std::vector<ModelInfo> models = {
      {"regression", "CSV with header: y, x1, ..., xp (one row per observation)"},
      {"fused", "CSV with header: p1 rows of p2 pixel values"},
      {"mixture", "CSV with header: y (one observation per row)"},
      {"lowrank_sparse", "L1BF frame stack: T frames of m x n pixels"},
      {"structured", "two CSV files with header: p x p affinity A and p x p structural S"},
  };
  return models;
}

const ModelInfo& find_model(const std::string& name) {
  for (const auto& m : registered_models()) {
    if (m.name == name) return m;
  }
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace l1ball
