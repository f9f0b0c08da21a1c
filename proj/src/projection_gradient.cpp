#include "l1ball/projection_gradient.hpp"

#include <algorithm>
#include <cmath>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

void require_same_size(Index a, Index b, const char* what) {
  if (a != b) throw InputError(std::string(what) + ": downstream gradient has the wrong length");
}

// Central-difference VJP of a vector-valued map, with one-sided agreement check.
template <typename Map>
ProjectionVjp finite_difference_vjp(const VectorRef& beta, double radius, const VectorRef& g, double fd_step,
                                    double kink_tol, Map&& project) {
  const Vector base = project(beta, radius);
  ProjectionVjp out;
  out.beta.resize(beta.size());
  auto column = [&](const Vector& plus, const Vector& minus, double h) {
    const Vector fwd = (plus - base) / h;
    const Vector bwd = (base - minus) / h;
    const Vector central = (plus - minus) / (2.0 * h);
    const double scale = 1.0 + central.cwiseAbs().maxCoeff();
    if ((fwd - bwd).cwiseAbs().maxCoeff() > kink_tol * scale) out.kink = true;
    return g.dot(central);
  };
  Vector shifted = beta;
  for (Index j = 0; j < beta.size(); ++j) {
    const double h = fd_step * (1.0 + std::abs(beta[j]));
    shifted[j] = beta[j] + h;
    const Vector plus = project(shifted, radius);
    shifted[j] = beta[j] - h;
    const Vector minus = project(shifted, radius);
    shifted[j] = beta[j];
    out.beta[j] = column(plus, minus, h);
  }
  const double hr = fd_step * (1.0 + radius);
  if (radius - hr > 0.0) {
    out.radius = column(project(beta, radius + hr), project(beta, radius - hr), hr);
  } else {
    out.radius = g.dot((project(beta, radius + hr) - base) / hr);
  }
  return out;
}

}  // namespace

ProjectionVjp l1_ball_vjp(const ProjectionResult& projection, const VectorRef& downstream) {
  require_same_size(downstream.size(), projection.theta.size(), "l1_ball_vjp");
  ProjectionVjp out;
  if (!projection.boundary) {
    out.beta = downstream;
    return out;
  }
  out.beta = Vector::Zero(downstream.size());
  double coupled = 0.0;
  for (Index i : projection.active_set) coupled += projection.signs[i] * downstream[i];
  const double c = static_cast<double>(projection.active_set.size());
  coupled /= c;
  for (Index i : projection.active_set) out.beta[i] = downstream[i] - projection.signs[i] * coupled;
  out.radius = coupled;
  return out;
}

Vector quantile_threshold_vjp(const VectorRef& beta, Index rank, double mu_tilde, const VectorRef& downstream) {
  require_same_size(downstream.size(), beta.size(), "quantile_threshold_vjp");
  if (rank < 1 || rank > beta.size()) throw DomainError("quantile_threshold_vjp: rank out of range");
  Vector out = Vector::Zero(beta.size());
  Index pivot = -1;
  double coupled = 0.0;
  for (Index i = 0; i < beta.size(); ++i) {
    const double a = std::abs(beta[i]);
    if (a > mu_tilde) {
      out[i] = downstream[i];
      coupled += (beta[i] < 0.0 ? -1.0 : 1.0) * downstream[i];
    } else if (a == mu_tilde && pivot < 0) {
      pivot = i;
    }
  }
  if (pivot < 0) throw DomainError("quantile_threshold_vjp: mu_tilde is not a magnitude of beta");
  out[pivot] -= (beta[pivot] < 0.0 ? -1.0 : 1.0) * coupled;
  return out;
}

LinearMapActiveSet::LinearMapActiveSet(const AdmmResult& result, const MatrixRef& contrast, const VectorRef& beta,
                                       double radius) {
  const Index p = contrast.cols();
  if (beta.size() != p) throw InputError("LinearMapActiveSet: beta length does not match D");
  if (result.contrast.size() != contrast.rows()) {
    throw InputError("LinearMapActiveSet: ADMM result does not match the contrast matrix");
  }
  if (result.iterations == 0) {
    theta_ = beta;
    return;
  }
  interior_ = false;
  const ProjectionResult& split = result.projection;
  std::vector<Index> zero_rows;
  for (Index i = 0; i < contrast.rows(); ++i) {
    if (result.contrast[i] == 0.0) zero_rows.push_back(i);
  }
  const Index m = static_cast<Index>(zero_rows.size()) + 1;
  normals_.resize(m, p);
  for (std::size_t k = 0; k < zero_rows.size(); ++k) normals_.row(static_cast<Index>(k)) = contrast.row(zero_rows[k]);
  normals_.row(m - 1).setZero();
  for (Index i : split.active_set) normals_.row(m - 1) += split.signs[i] * contrast.row(i);

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(normals_);
  pseudo_inverse_ = cod.pseudoInverse();
  Vector rhs = Vector::Zero(m);
  rhs[m - 1] = radius;
  theta_ = beta - pseudo_inverse_ * (normals_ * beta - rhs);
}

ProjectionVjp LinearMapActiveSet::vjp(const VectorRef& downstream) const {
  require_same_size(downstream.size(), theta_.size(), "LinearMapActiveSet::vjp");
  ProjectionVjp out;
  if (interior_) {
    out.beta = downstream;
    return out;
  }
  // y = (M')^+ g: M' y is the row-space component of g and y_last is the
  // sensitivity to the right-hand side r.
  const Vector y = pseudo_inverse_.transpose() * downstream;
  out.beta = downstream - normals_.transpose() * y;
  out.radius = y[y.size() - 1];
  return out;
}

ProjectionVjp linear_map_vjp(const AdmmResult& result, const MatrixRef& contrast, const VectorRef& downstream) {
  require_same_size(downstream.size(), contrast.cols(), "linear_map_vjp");
  // The VJP depends only on the face, so the ADMM iterate stands in for beta.
  const double radius = result.projection.theta.cwiseAbs().sum();
  return LinearMapActiveSet(result, contrast, result.projection.theta, radius).vjp(downstream);
}

MatrixVjp nuclear_vjp(const MatrixRef& b, double radius, const MatrixRef& downstream) {
  if (downstream.rows() != b.rows() || downstream.cols() != b.cols()) {
    throw InputError("nuclear_vjp: downstream gradient shape does not match the input");
  }
  const Index k = std::min(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("nuclear_vjp: SVD failed");
  const Vector sigma = svd.singularValues();
  const ProjectionResult spectrum = project_l1_ball(sigma, radius);
  MatrixVjp out;
  if (!spectrum.boundary) {
    out.b = downstream;
    return out;
  }
  const Vector& shrunk = spectrum.theta;
  const Matrix& u = svd.matrixU();
  const Matrix& v = svd.matrixV();
  const Matrix gv = downstream * v;
  const Matrix gbar = u.transpose() * gv;
  const double c = static_cast<double>(spectrum.active_set.size());
  const double tiny = 1e-14 * std::max(1.0, sigma[0]);

  Vector ratio(k);
  for (Index i = 0; i < k; ++i) ratio[i] = sigma[i] > tiny ? shrunk[i] / sigma[i] : 0.0;

  Matrix h = Matrix::Zero(k, k);
  double diag_mean = 0.0;
  for (Index i : spectrum.active_set) diag_mean += gbar(i, i);
  diag_mean /= c;
  for (Index i = 0; i < k; ++i) {
    if (shrunk[i] > 0.0) h(i, i) = gbar(i, i) - diag_mean;
    for (Index j = i + 1; j < k; ++j) {
      const double diff = sigma[i] - sigma[j];
      double c_sym;
      if (std::abs(diff) > tiny) {
        c_sym = (shrunk[i] - shrunk[j]) / diff;
      } else {
        c_sym = (shrunk[i] > 0.0 && shrunk[j] > 0.0) ? 1.0 : 0.0;
      }
      const double sum = sigma[i] + sigma[j];
      const double c_anti = sum > tiny ? (shrunk[i] + shrunk[j]) / sum : 0.0;
      const double sym = 0.5 * (gbar(i, j) + gbar(j, i));
      const double anti = 0.5 * (gbar(i, j) - gbar(j, i));
      h(i, j) = c_sym * sym + c_anti * anti;
      h(j, i) = c_sym * sym - c_anti * anti;
    }
  }
  out.b = u * h * v.transpose();
  // Directions outside the thin singular subspaces scale by sigma~ / sigma.
  const Matrix ug = u.transpose() * downstream;  // k x n
  out.b += (gv - u * gbar) * ratio.asDiagonal() * v.transpose();
  out.b += u * ratio.asDiagonal() * (ug - gbar * v.transpose());
  out.radius = diag_mean;
  return out;
}

ProjectionVjp gradient_through_projection(const VectorRef& beta, const GeneralizedBall& ball,
                                          const VectorRef& downstream, double fd_step, double kink_tol) {
  ball.validate();
  if (!(fd_step > 0.0)) throw DomainError("gradient_through_projection: fd_step must be > 0");
  switch (ball.kind) {
    case GeneralizedBall::Kind::vector:
      return l1_ball_vjp(project_l1_ball(beta, ball.radius), downstream);
    case GeneralizedBall::Kind::linear_map: {
      require_same_size(beta.size(), ball.contrast.cols(), "gradient_through_projection");
      require_same_size(downstream.size(), beta.size(), "gradient_through_projection");
      AdmmOptions tight;
      tight.tol = 1e-13;
      tight.max_iter = 200000;
      const LinearMapProjector projector(ball.contrast, tight);
      const AdmmResult anchor = projector.project(beta, ball.radius);
      return finite_difference_vjp(beta, ball.radius, downstream, fd_step, kink_tol,
                                   [&](const Vector& x, double r) {
                                     return Vector(projector.project(x, r, &anchor).projection.theta);
                                   });
    }
    case GeneralizedBall::Kind::nuclear: {
      require_same_size(beta.size(), ball.rows * ball.cols, "gradient_through_projection");
      require_same_size(downstream.size(), beta.size(), "gradient_through_projection");
      return finite_difference_vjp(beta, ball.radius, downstream, fd_step, kink_tol,
                                   [&](const Vector& x, double r) {
                                     const Eigen::Map<const Matrix> mat(x.data(), ball.rows, ball.cols);
                                     const Matrix l = nuclear_project(mat, r).projected;
                                     return Vector(Eigen::Map<const Vector>(l.data(), l.size()));
                                   });
    }
  }
  throw ConfigError("gradient_through_projection: unknown ball kind");
}

}  // namespace l1ball
