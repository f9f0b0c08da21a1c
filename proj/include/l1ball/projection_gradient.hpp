#pragma once

#include "l1ball/projection.hpp"

namespace l1ball {

/// Vector-Jacobian product of a projection theta = P(beta, r): given the
/// downstream gradient g = dL/dtheta, `beta` holds dL/dbeta and `radius`
/// holds dL/dr.
struct ProjectionVjp {
  Vector beta;
  double radius = 0.0;
  bool kink = false;  // one-sided derivatives disagree; caller treats as divergence
};

/// Exact VJP of the vector l1-ball projection. On the boundary
/// dL/dbeta_j = s_j (s_j g_j - mean_{i in C} s_i g_i) for j in C, zero
/// elsewhere, and dL/dr = mean_{i in C} s_i g_i.
ProjectionVjp l1_ball_vjp(const ProjectionResult& projection, const VectorRef& downstream);

/// VJP of soft thresholding at the data-dependent level |beta_(k)| used by the
/// quantile radius: the rank-k coordinate moves the threshold.
Vector quantile_threshold_vjp(const VectorRef& beta, Index rank, double mu_tilde,
                              const VectorRef& downstream);

/// Local affine description of a linear-map ball projection taken from the
/// zero pattern of the ADMM split variable. theta() re-solves the projection
/// exactly on that face, so rows of D in the zero set give D theta = 0 up to
/// rounding rather than up to the ADMM tolerance.
class LinearMapActiveSet {
 public:
  LinearMapActiveSet(const AdmmResult& result, const MatrixRef& contrast, const VectorRef& beta,
                     double radius);

  const Vector& theta() const { return theta_; }
  bool interior() const { return interior_; }
  ProjectionVjp vjp(const VectorRef& downstream) const;

 private:
  bool interior_ = true;
  Vector theta_;
  Matrix normals_;         // M: zero rows of D, then the signed boundary row
  Matrix pseudo_inverse_;  // M^+
};

/// VJP of the linear-map ball projection from its ADMM solution. Near the
/// solution z is the Euclidean projection of beta onto the affine set
/// {D_Z z = 0, s_A' D_A z = r}, with Z the zero rows of the split variable,
/// so the Jacobian is the orthogonal projector onto that set's null space.
ProjectionVjp linear_map_vjp(const AdmmResult& result, const MatrixRef& contrast,
                             const VectorRef& downstream);

struct MatrixVjp {
  Matrix b;
  double radius = 0.0;
};

/// Analytic VJP of the nuclear-ball projection (singular-value thresholding)
/// at a matrix with distinct, non-zero singular values.
MatrixVjp nuclear_vjp(const MatrixRef& b, double radius, const MatrixRef& downstream);

/// VJP through P_{B_{h,r}}. The vector ball uses the analytic form; linear-map
/// and nuclear balls use central differences with per-coordinate step
/// fd_step (1 + |beta_i|) around tightly converged projections. Nuclear-ball
/// inputs are column-major vectorizations of rows x cols matrices.
ProjectionVjp gradient_through_projection(const VectorRef& beta, const GeneralizedBall& ball,
                                          const VectorRef& downstream, double fd_step = 1e-5,
                                          double kink_tol = 1e-3);

}  // namespace l1ball
