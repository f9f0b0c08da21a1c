#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace l1ball {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

/// Relative slack under which a point with ||beta||_1 slightly above r is
/// still treated as interior.
inline constexpr double kBoundaryRelTol = 1e-12;

/// Output of a Euclidean projection onto an l1-ball.
///
/// `theta` holds literal zeros outside `active_set`. On the boundary `mu` is
/// the total slack sum_{i in C} |beta_i| - r, so every active coordinate is
/// shrunk by `mu / |C|`. In the interior `theta == beta` and `mu == 0`.
struct ProjectionResult {
  Vector theta;
  std::vector<Index> active_set;  // ascending indices
  double mu = 0.0;
  Eigen::VectorXi signs;  // +1 / -1; zero inputs get +1
  bool boundary = false;

  Index cardinality() const { return static_cast<Index>(active_set.size()); }
  /// Per-coordinate soft threshold mu / |C| (zero in the interior).
  double threshold() const {
    return (boundary && !active_set.empty()) ? mu / static_cast<double>(active_set.size()) : 0.0;
  }
};

/// Latent coordinates (t, s, mu) of the one-to-one augmented transform.
struct AugmentedState {
  Vector t;
  Eigen::VectorXi s;
  double mu = 0.0;
};

/// Exact projection of `beta` onto {x : ||x||_1 <= radius}.
///
/// Uses the sorted cumulative-sum threshold scan. Magnitude ties are broken by
/// ascending index; the projected point does not depend on the tie-break.
/// Throws InputError on non-finite input and DomainError for radius <= 0.
ProjectionResult project_l1_ball(const VectorRef& beta, double radius);

/// beta -> (t, s, mu) with t_i = |beta_i| - mu/|C| and s_i = sign(beta_i).
AugmentedState forward_transform(const VectorRef& beta, double radius);

/// Inverse of forward_transform: beta_i = s_i (t_i + mu/|C|), C = {i : t_i > 0}.
///
/// Validates the domain of the inverse map and throws DomainError when the
/// state cannot have come from forward_transform at this radius.
Vector inverse_transform(const AugmentedState& state, double radius);

/// Central-difference estimate of |det| of the Jacobian of the augmented
/// transform, taken in the free coordinates (t without one active entry, mu).
///
/// The per-coordinate step is `fd_step * (1 + |beta_i|)`. Interior points
/// return exactly 1. Throws DegenerateInputError when beta sits within the
/// step of a magnitude tie or of the threshold.
double jacobian_abs_det(const VectorRef& beta, double radius, double fd_step = 1e-6);

/// Soft thresholding sign(x)(|x| - level)_+ applied coordinate-wise.
Vector soft_threshold(const VectorRef& x, double level);

// ---------------------------------------------------------------------------
// Generalized balls

/// Which l1-type ball a projection targets.
struct GeneralizedBall {
  enum class Kind { vector, linear_map, nuclear };

  Kind kind = Kind::vector;
  double radius = 1.0;
  Matrix contrast;  // D, only for linear_map
  Index rows = 0;   // matrix shape, only for nuclear
  Index cols = 0;

  static GeneralizedBall vector_ball(double radius);
  static GeneralizedBall linear_map_ball(Matrix contrast, double radius);
  static GeneralizedBall nuclear_ball(Index rows, Index cols, double radius);

  /// Throws ConfigError if the invariants of the chosen kind do not hold.
  void validate() const;
};

struct AdmmOptions {
  double rho = 1.0;
  double tol = 1e-8;
  int max_iter = 20000;
};

/// Solution of min ||z - beta||^2 s.t. ||D z||_1 <= r.
///
/// `projection.theta` is z. The sparsity bookkeeping (active set, signs, mu,
/// boundary) describes the split variable s, the l1-ball projection of
/// D z + kappa, which carries literal zeros; `contrast` stores s itself.
struct AdmmResult {
  ProjectionResult projection;
  Vector contrast;
  Vector scaled_dual;
  double constraint_norm = 0.0;  // ||D z||_1
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

/// Projector onto {z : ||D z||_1 <= r} with a cached factorization of
/// (2 I + rho^{-1} D^T D). Immutable after construction.
class LinearMapProjector {
 public:
  LinearMapProjector(Matrix contrast, AdmmOptions options = {});

  const Matrix& contrast() const { return contrast_; }
  const AdmmOptions& options() const { return options_; }

  /// Runs ADMM, optionally warm-started from a previous split/dual pair.
  /// Throws ConvergenceError (with residuals) after options.max_iter sweeps.
  AdmmResult project(const VectorRef& beta, double radius,
                     const AdmmResult* warm_start = nullptr) const;

 private:
  Matrix contrast_;
  AdmmOptions options_;
  Eigen::LLT<Matrix> factor_;
};

/// One-shot ADMM projection; builds the factorization for this call only.
AdmmResult admm_project(const VectorRef& beta, const GeneralizedBall& ball,
                        const AdmmOptions& options = {});

/// Projection of a matrix onto the nuclear-norm ball of the given radius.
struct NuclearProjection {
  Matrix projected;             // L
  Vector singular_values;       // of L, descending
  Vector input_singular_values; // of B, descending
  Matrix u;                     // thin left singular vectors of B
  Matrix v;                     // thin right singular vectors of B
  ProjectionResult spectrum;    // l1-ball projection of the singular values
};

/// L = U diag[(rho_k - mu)_+] V^T with sum_k (rho_k - mu)_+ = r, or L = B when
/// the nuclear norm of B is already below r.
NuclearProjection nuclear_project(const MatrixRef& b, double radius);

}  // namespace l1ball
