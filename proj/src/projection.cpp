#include "l1ball/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/SVD>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

void require_finite(const VectorRef& x, const char* what) {
  if (!x.allFinite()) {
    throw InputError(std::string(what) + ": input contains non-finite values");
  }
}

void require_radius(double radius, const char* what) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw DomainError(std::string(what) + ": radius must be finite and > 0, got " +
                      std::to_string(radius));
  }
}

int sign_of(double x) { return x < 0.0 ? -1 : 1; }

// Indices ordered by |beta| descending, ties by ascending index.
std::vector<Index> magnitude_order(const VectorRef& beta) {
  std::vector<Index> order(static_cast<std::size_t>(beta.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(beta[a]) > std::abs(beta[b]);
  });
  return order;
}

}  // namespace

Vector soft_threshold(const VectorRef& x, double level) {
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double shrunk = std::abs(x[i]) - level;
    out[i] = shrunk > 0.0 ? (x[i] < 0.0 ? -shrunk : shrunk) : 0.0;
  }
  return out;
}

ProjectionResult project_l1_ball(const VectorRef& beta, double radius) {
  require_radius(radius, "project_l1_ball");
  require_finite(beta, "project_l1_ball");
  if (beta.size() < 1) throw InputError("project_l1_ball: empty vector");

  const Index p = beta.size();
  ProjectionResult out;
  out.signs.resize(p);
  for (Index i = 0; i < p; ++i) out.signs[i] = sign_of(beta[i]);

  if (beta.lpNorm<1>() <= radius * (1.0 + kBoundaryRelTol)) {
    out.theta = beta;
    for (Index i = 0; i < p; ++i) {
      if (beta[i] != 0.0) out.active_set.push_back(i);
    }
    return out;
  }

  const std::vector<Index> order = magnitude_order(beta);
  // c = max{j : |beta_(j)| > (S_j - r)_+ / j}; j = 1 always qualifies.
  double cumulative = 0.0;
  double best_total = 0.0;
  Index c = 0;
  for (Index j = 0; j < p; ++j) {
    const double a = std::abs(beta[order[j]]);
    cumulative += a;
    const double level = std::max(cumulative - radius, 0.0) / static_cast<double>(j + 1);
    if (a > level) {
      c = j + 1;
      best_total = cumulative;
    }
  }

  out.boundary = true;
  out.mu = best_total - radius;
  const double level = out.mu / static_cast<double>(c);
  out.theta = Vector::Zero(p);
  out.active_set.assign(order.begin(), order.begin() + c);
  for (Index i : out.active_set) {
    out.theta[i] = out.signs[i] * (std::abs(beta[i]) - level);
  }
  std::sort(out.active_set.begin(), out.active_set.end());
  return out;
}

AugmentedState forward_transform(const VectorRef& beta, double radius) {
  const ProjectionResult proj = project_l1_ball(beta, radius);
  AugmentedState state;
  state.s = proj.signs;
  state.mu = proj.mu;
  state.t = beta.cwiseAbs().array() - proj.threshold();
  return state;
}

Vector inverse_transform(const AugmentedState& state, double radius) {
  require_radius(radius, "inverse_transform");
  const Index p = state.t.size();
  if (p < 1 || state.s.size() != p) {
    throw InputError("inverse_transform: t and s must have the same positive length");
  }
  require_finite(state.t, "inverse_transform");
  if (!(state.mu >= 0.0) || !std::isfinite(state.mu)) {
    throw DomainError("inverse_transform: mu must be finite and >= 0");
  }
  for (Index i = 0; i < p; ++i) {
    if (state.s[i] != 1 && state.s[i] != -1) {
      throw DomainError("inverse_transform: signs must be +1 or -1");
    }
  }

  Index c = 0;
  double active_sum = 0.0;
  for (Index i = 0; i < p; ++i) {
    if (state.t[i] > 0.0) {
      ++c;
      active_sum += state.t[i];
    }
  }
  if (c == 0) {
    if (state.mu > 0.0) throw DomainError("inverse_transform: empty active set with mu > 0");
    return Vector::Zero(p);
  }

  const double sum_tol = 1e-9 * std::max(1.0, radius);
  if (state.mu > 0.0) {
    if (std::abs(active_sum - radius) > sum_tol) {
      throw DomainError("inverse_transform: boundary state needs sum of positive t equal to r");
    }
    const double floor = -state.mu / static_cast<double>(c);
    for (Index i = 0; i < p; ++i) {
      if (state.t[i] <= 0.0 && state.t[i] < floor - sum_tol) {
        throw DomainError("inverse_transform: t_i below -mu/|C| for an inactive coordinate");
      }
    }
  } else {
    if (state.t.minCoeff() < 0.0) {
      throw DomainError("inverse_transform: negative t requires mu > 0");
    }
    if (active_sum > radius + sum_tol) {
      throw DomainError("inverse_transform: interior state must satisfy sum t <= r");
    }
  }

  const double level = state.mu / static_cast<double>(c);
  Vector beta(p);
  for (Index i = 0; i < p; ++i) beta[i] = state.s[i] * (state.t[i] + level);
  return beta;
}

double jacobian_abs_det(const VectorRef& beta, double radius, double fd_step) {
  require_radius(radius, "jacobian_abs_det");
  require_finite(beta, "jacobian_abs_det");
  if (!(fd_step > 0.0)) throw DomainError("jacobian_abs_det: fd_step must be > 0");

  const Index p = beta.size();
  Vector steps(p);
  for (Index i = 0; i < p; ++i) steps[i] = fd_step * (1.0 + std::abs(beta[i]));
  const double margin = 10.0 * steps.maxCoeff() * static_cast<double>(p);

  const double norm = beta.lpNorm<1>();
  if (std::abs(norm - radius) <= margin) {
    throw DegenerateInputError("jacobian_abs_det: beta is within the step of the ball surface");
  }
  if (norm <= radius) return 1.0;

  const ProjectionResult center = project_l1_ball(beta, radius);
  const double level = center.threshold();
  const std::vector<Index> order = magnitude_order(beta);
  for (Index j = 0; j < p; ++j) {
    const double a = std::abs(beta[order[j]]);
    if (a <= margin) {
      throw DegenerateInputError("jacobian_abs_det: coordinate within the step of zero");
    }
    if (std::abs(a - level) <= margin) {
      throw DegenerateInputError("jacobian_abs_det: coordinate within the step of the threshold");
    }
    if (j + 1 < p && a - std::abs(beta[order[j + 1]]) <= margin) {
      throw DegenerateInputError("jacobian_abs_det: tied magnitudes within the step");
    }
  }

  // Drop the smallest active coordinate; it is fixed by sum_{i in C} t_i = r.
  const Index dropped = order[center.cardinality() - 1];
  auto free_coordinates = [&](const Vector& x) {
    const AugmentedState st = forward_transform(x, radius);
    Vector out(p);
    Index k = 0;
    for (Index i = 0; i < p; ++i) {
      if (i != dropped) out[k++] = st.t[i];
    }
    out[k] = st.mu;
    return out;
  };

  Matrix jac(p, p);
  for (Index j = 0; j < p; ++j) {
    Vector plus = beta;
    Vector minus = beta;
    plus[j] += steps[j];
    minus[j] -= steps[j];
    jac.col(j) = (free_coordinates(plus) - free_coordinates(minus)) / (2.0 * steps[j]);
  }
  return std::abs(jac.partialPivLu().determinant());
}

// ---------------------------------------------------------------------------

GeneralizedBall GeneralizedBall::vector_ball(double radius) {
  GeneralizedBall ball;
  ball.kind = Kind::vector;
  ball.radius = radius;
  return ball;
}

GeneralizedBall GeneralizedBall::linear_map_ball(Matrix contrast, double radius) {
  GeneralizedBall ball;
  ball.kind = Kind::linear_map;
  ball.radius = radius;
  ball.contrast = std::move(contrast);
  return ball;
}

GeneralizedBall GeneralizedBall::nuclear_ball(Index rows, Index cols, double radius) {
  GeneralizedBall ball;
  ball.kind = Kind::nuclear;
  ball.radius = radius;
  ball.rows = rows;
  ball.cols = cols;
  return ball;
}

void GeneralizedBall::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw ConfigError("GeneralizedBall: radius must be finite and > 0");
  }
  switch (kind) {
    case Kind::vector:
      break;
    case Kind::linear_map:
      if (contrast.rows() < 1 || contrast.cols() < 1 || !contrast.allFinite()) {
        throw ConfigError("GeneralizedBall: linear map needs a finite D with d >= 1 rows");
      }
      break;
    case Kind::nuclear:
      if (rows < 1 || cols < 1) {
        throw ConfigError("GeneralizedBall: nuclear ball needs positive matrix dimensions");
      }
      break;
  }
}

LinearMapProjector::LinearMapProjector(Matrix contrast, AdmmOptions options)
    : contrast_(std::move(contrast)), options_(options) {
  if (contrast_.rows() < 1 || contrast_.cols() < 1 || !contrast_.allFinite()) {
    throw ConfigError("LinearMapProjector: D must be finite with positive dimensions");
  }
  if (!(options_.rho > 0.0) || !(options_.tol > 0.0) || options_.max_iter < 1) {
    throw ConfigError("LinearMapProjector: rho, tol and max_iter must be positive");
  }
  Matrix system = (contrast_.transpose() * contrast_) / options_.rho;
  system.diagonal().array() += 2.0;
  factor_.compute(system);
  if (factor_.info() != Eigen::Success) {
    throw NumericalError("LinearMapProjector: factorization of 2I + D^T D / rho failed");
  }
}

AdmmResult LinearMapProjector::project(const VectorRef& beta, double radius,
                                       const AdmmResult* warm_start) const {
  require_radius(radius, "admm_project");
  require_finite(beta, "admm_project");
  const Index p = contrast_.cols();
  const Index d = contrast_.rows();
  if (beta.size() != p) {
    throw InputError("admm_project: beta length " + std::to_string(beta.size()) +
                     " does not match D with " + std::to_string(p) + " columns");
  }

  AdmmResult out;
  const Vector d_beta = contrast_ * beta;
  if (d_beta.lpNorm<1>() <= radius * (1.0 + kBoundaryRelTol)) {
    out.projection = project_l1_ball(d_beta, radius);
    out.projection.theta = beta;
    out.contrast = d_beta;
    out.scaled_dual = Vector::Zero(d);
    out.constraint_norm = d_beta.lpNorm<1>();
    return out;
  }

  const double inv_rho = 1.0 / options_.rho;
  Vector split = d_beta;
  Vector dual = Vector::Zero(d);
  if (warm_start != nullptr && warm_start->contrast.size() == d &&
      warm_start->scaled_dual.size() == d) {
    split = warm_start->contrast;
    dual = warm_start->scaled_dual;
  }

  const double primal_tol = options_.tol * std::sqrt(static_cast<double>(d));
  const double dual_tol = options_.tol * std::sqrt(static_cast<double>(p));
  Vector z(p);
  ProjectionResult split_proj;
  double primal = 0.0;
  double dual_res = 0.0;
  for (int iter = 1; iter <= options_.max_iter; ++iter) {
    z = factor_.solve(2.0 * beta + inv_rho * contrast_.transpose() * (split - dual));
    const Vector dz = contrast_ * z;
    split_proj = project_l1_ball(dz + dual, radius);
    const Vector previous = split;
    split = split_proj.theta;
    const Vector gap = dz - split;
    dual += gap;
    primal = gap.norm();
    dual_res = inv_rho * (contrast_.transpose() * (split - previous)).norm();
    if (primal < primal_tol && dual_res < dual_tol) {
      out.projection = std::move(split_proj);
      out.projection.theta = z;
      out.contrast = split;
      out.scaled_dual = dual;
      out.constraint_norm = dz.lpNorm<1>();
      out.iterations = iter;
      out.primal_residual = primal;
      out.dual_residual = dual_res;
      return out;
    }
  }
  throw ConvergenceError("admm_project: no convergence after " +
                             std::to_string(options_.max_iter) + " iterations (primal " +
                             std::to_string(primal) + ", dual " + std::to_string(dual_res) + ")",
                         primal, dual_res);
}

AdmmResult admm_project(const VectorRef& beta, const GeneralizedBall& ball,
                        const AdmmOptions& options) {
  if (ball.kind != GeneralizedBall::Kind::linear_map) {
    throw ConfigError("admm_project: ball must be a linear_map ball");
  }
  ball.validate();
  return LinearMapProjector(ball.contrast, options).project(beta, ball.radius);
}

NuclearProjection nuclear_project(const MatrixRef& b, double radius) {
  require_radius(radius, "nuclear_project");
  if (b.rows() < 1 || b.cols() < 1) throw InputError("nuclear_project: empty matrix");
  if (!b.allFinite()) throw InputError("nuclear_project: input contains non-finite values");

  Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericalError("nuclear_project: SVD failed");
  }

  NuclearProjection out;
  out.u = svd.matrixU();
  out.v = svd.matrixV();
  out.input_singular_values = svd.singularValues();
  out.spectrum = project_l1_ball(out.input_singular_values, radius);
  if (!out.spectrum.boundary) {
    out.projected = b;
    out.singular_values = out.input_singular_values;
    return out;
  }
  out.singular_values = out.spectrum.theta;
  out.projected = out.u * out.singular_values.asDiagonal() * out.v.transpose();
  return out;
}

}  // namespace l1ball
