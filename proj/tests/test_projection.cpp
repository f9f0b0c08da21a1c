#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "l1ball/errors.hpp"
#include "l1ball/projection.hpp"
#include "oracles.hpp"

using namespace l1ball;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Vector random_vector(std::mt19937_64& rng, Index p, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(p);
  for (Index i = 0; i < p; ++i) v[i] = n(rng);
  return v;
}

// Chain first differences, (p-1) x p.
Matrix chain_difference(Index p) {
  Matrix d = Matrix::Zero(p - 1, p);
  for (Index i = 0; i + 1 < p; ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -1.0;
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// project_l1_ball

TEST(ProjectL1Ball, InteriorIsIdentity) {
  const Vector beta = vec({3.0, -1.0, 0.5});
  const auto res = project_l1_ball(beta, 10.0);
  EXPECT_FALSE(res.boundary);
  EXPECT_EQ(res.mu, 0.0);
  EXPECT_TRUE(res.theta == beta);
  EXPECT_EQ(res.cardinality(), 3);
}

TEST(ProjectL1Ball, SymmetricSplit) {
  const auto res = project_l1_ball(vec({1.0, 1.0}), 1.0);
  EXPECT_TRUE(res.boundary);
  EXPECT_DOUBLE_EQ(res.theta[0], 0.5);
  EXPECT_DOUBLE_EQ(res.theta[1], 0.5);
  EXPECT_DOUBLE_EQ(res.mu, 1.0);
  EXPECT_EQ(res.cardinality(), 2);
}

TEST(ProjectL1Ball, DominantCoordinate) {
  // Frozen from oracle::kkt_bisection_projection: (1, 0).
  const Vector beta = vec({2.0, 1.0});
  const Vector expected = oracle::kkt_bisection_projection(beta, 1.0);
  ASSERT_NEAR(expected[0], 1.0, 1e-12);
  ASSERT_NEAR(expected[1], 0.0, 1e-12);
  const auto res = project_l1_ball(beta, 1.0);
  EXPECT_DOUBLE_EQ(res.theta[0], 1.0);
  EXPECT_EQ(res.theta[1], 0.0);
  EXPECT_EQ(res.cardinality(), 1);
  EXPECT_DOUBLE_EQ(res.mu, 1.0);
}

TEST(ProjectL1Ball, MixedSignsExample) {
  const Vector beta = vec({0.85, -0.45, 0.05});
  const Vector expected = oracle::kkt_bisection_projection(beta, 1.0);
  const auto res = project_l1_ball(beta, 1.0);
  EXPECT_NEAR(res.theta[0], 0.7, 1e-12);
  EXPECT_NEAR(res.theta[1], -0.3, 1e-12);
  EXPECT_EQ(res.theta[2], 0.0);
  EXPECT_EQ(res.cardinality(), 2);
  EXPECT_NEAR(res.mu, 0.3, 1e-12);
  EXPECT_LT((res.theta - expected).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_EQ(res.active_set, (std::vector<Index>{0, 1}));
  EXPECT_EQ(res.signs[1], -1);
}

TEST(ProjectL1Ball, Errors) {
  EXPECT_THROW(project_l1_ball(vec({1.0, 2.0}), 0.0), DomainError);
  EXPECT_THROW(project_l1_ball(vec({1.0, 2.0}), -1.0), DomainError);
  EXPECT_THROW(project_l1_ball(vec({1.0, NAN}), 1.0), InputError);
  EXPECT_THROW(project_l1_ball(vec({INFINITY, 0.0}), 1.0), InputError);
}

TEST(ProjectL1Ball, NearBoundaryIsInterior) {
  Vector beta = vec({0.5, 0.5});
  beta[0] += 1e-14;  // ||beta||_1 = 1 + 1e-14 <= 1 + 1e-12
  const auto res = project_l1_ball(beta, 1.0);
  EXPECT_FALSE(res.boundary);
  EXPECT_TRUE(res.theta == beta);
}

TEST(ProjectL1Ball, TiesDoNotChangeTheProjection) {
  const Vector beta = vec({1.0, -1.0, 1.0, 0.2});
  const Vector expected = oracle::kkt_bisection_projection(beta, 1.5);
  const auto res = project_l1_ball(beta, 1.5);
  EXPECT_LT((res.theta - expected).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_EQ(res.active_set, (std::vector<Index>{0, 1, 2}));
}

TEST(ProjectL1BallProperty, MatchesKktOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(2, 6);
  std::uniform_real_distribution<double> rad(0.05, 6.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const Vector beta = random_vector(rng, dim(rng));
    const double r = rad(rng);
    const Vector expected = oracle::kkt_bisection_projection(beta, r);
    const auto res = project_l1_ball(beta, r);
    ASSERT_LT((res.theta - expected).lpNorm<Eigen::Infinity>(), 1e-10) << "rep " << rep;
  }
}

TEST(ProjectL1BallProperty, IdempotentAndNonExpansive) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> rad(0.1, 5.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const Index p = 2 + rep % 9;
    const double r = rad(rng);
    const Vector a = random_vector(rng, p);
    const Vector b = random_vector(rng, p);
    const Vector pa = project_l1_ball(a, r).theta;
    const Vector pb = project_l1_ball(b, r).theta;
    EXPECT_TRUE(project_l1_ball(pa, r).theta == pa);
    EXPECT_LE((pa - pb).norm(), (a - b).norm() + 1e-12);
  }
}

TEST(ProjectL1BallProperty, CardinalityAndSlackWitness) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 1000; ++rep) {
    const Index p = 2 + rep % 12;
    const Vector beta = random_vector(rng, p);
    const double r = 0.5 + 0.1 * (rep % 20);
    const auto res = project_l1_ball(beta, r);
    Index nonzeros = 0;
    double active_abs = 0.0;
    for (Index i = 0; i < p; ++i) {
      if (res.theta[i] != 0.0) ++nonzeros;
    }
    for (Index i : res.active_set) {
      active_abs += std::abs(beta[i]);
      EXPECT_EQ(res.signs[i] * res.theta[i] > 0.0, true);
    }
    EXPECT_EQ(nonzeros, res.cardinality());
    if (res.boundary) {
      EXPECT_NEAR(res.mu, active_abs - r, 1e-12 * (1.0 + active_abs));
      EXPECT_NEAR(res.theta.lpNorm<1>(), r, 1e-12 * (1.0 + r));
    }
  }
}

// ---------------------------------------------------------------------------
// forward / inverse transform

TEST(AugmentedTransform, ForwardExample) {
  const auto st = forward_transform(vec({0.85, -0.45, 0.05}), 1.0);
  EXPECT_NEAR(st.t[0], 0.7, 1e-12);
  EXPECT_NEAR(st.t[1], 0.3, 1e-12);
  EXPECT_NEAR(st.t[2], -0.1, 1e-12);
  EXPECT_NEAR(st.mu, 0.3, 1e-12);
  EXPECT_EQ(st.s, (Eigen::VectorXi(3) << 1, -1, 1).finished());
}

TEST(AugmentedTransform, ForwardInterior) {
  const Vector beta = vec({0.2, -0.3, 0.1});
  const auto st = forward_transform(beta, 1.0);
  EXPECT_TRUE(st.t == beta.cwiseAbs());
  EXPECT_EQ(st.mu, 0.0);
}

TEST(AugmentedTransform, InverseExample) {
  AugmentedState st{vec({0.7, 0.3, -0.1}), (Eigen::VectorXi(3) << 1, -1, 1).finished(), 0.3};
  const Vector beta = inverse_transform(st, 1.0);
  EXPECT_NEAR(beta[0], 0.85, 1e-12);
  EXPECT_NEAR(beta[1], -0.45, 1e-12);
  EXPECT_NEAR(beta[2], 0.05, 1e-12);
  const auto res = project_l1_ball(beta, 1.0);
  EXPECT_NEAR(res.theta[0], 0.7, 1e-12);
  EXPECT_EQ(res.theta[2], 0.0);
}

TEST(AugmentedTransform, InverseInterior) {
  AugmentedState st{vec({0.2, 0.0, 0.3}), (Eigen::VectorXi(3) << -1, 1, 1).finished(), 0.0};
  const Vector beta = inverse_transform(st, 1.0);
  EXPECT_TRUE(beta == vec({-0.2, 0.0, 0.3}));
}

TEST(AugmentedTransform, InverseEmptyActiveSetIsZero) {
  AugmentedState st{vec({0.0, -0.0, 0.0}), Eigen::VectorXi::Ones(3), 0.0};
  EXPECT_TRUE(inverse_transform(st, 1.0).isZero());
}

TEST(AugmentedTransform, InverseRejectsInvalidDomain) {
  const Eigen::VectorXi s = Eigen::VectorXi::Ones(3);
  // active t sum to 0.9 != r with mu > 0
  EXPECT_THROW(inverse_transform({vec({0.6, 0.3, -0.1}), s, 0.3}, 1.0), DomainError);
  // inactive t below -mu/|C|
  EXPECT_THROW(inverse_transform({vec({0.7, 0.3, -0.5}), s, 0.3}, 1.0), DomainError);
  // negative t in the interior regime
  EXPECT_THROW(inverse_transform({vec({0.2, 0.3, -0.1}), s, 0.0}, 1.0), DomainError);
  // bad sign
  EXPECT_THROW(inverse_transform({vec({0.7, 0.3, -0.1}), Eigen::VectorXi::Zero(3), 0.3}, 1.0),
               DomainError);
}

TEST(AugmentedTransformProperty, RoundTripFromBeta) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 1000; ++rep) {
    const Index p = 1 + rep % 10;
    const Vector beta = random_vector(rng, p);
    const double r = 0.2 + 0.05 * (rep % 40);
    const auto st = forward_transform(beta, r);
    const Vector back = inverse_transform(st, r);
    ASSERT_LT((back - beta).lpNorm<Eigen::Infinity>(), 1e-12) << "rep " << rep;
    // theta_i = s_i (t_i)_+
    const Vector theta = project_l1_ball(beta, r).theta;
    for (Index i = 0; i < p; ++i) {
      EXPECT_NEAR(theta[i], st.s[i] * std::max(st.t[i], 0.0), 1e-12);
    }
  }
}

TEST(AugmentedTransformProperty, RoundTripFromState) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const Index p = 2 + rep % 8;
    const Index c = 1 + static_cast<Index>(u(rng) * (p - 1));
    const double r = 0.5 + 3.0 * u(rng);
    const double mu = 0.01 + 2.0 * u(rng);
    AugmentedState st;
    st.t.resize(p);
    st.s.resize(p);
    Vector weights(c);
    for (Index i = 0; i < c; ++i) weights[i] = 0.05 + u(rng);
    weights *= r / weights.sum();
    for (Index i = 0; i < p; ++i) {
      st.s[i] = u(rng) < 0.5 ? -1 : 1;
      st.t[i] = i < c ? weights[i] : -u(rng) * mu / static_cast<double>(c);
    }
    st.mu = mu;
    const Vector beta = inverse_transform(st, r);
    const auto again = forward_transform(beta, r);
    ASSERT_LT((again.t - st.t).lpNorm<Eigen::Infinity>(), 1e-10) << "rep " << rep;
    EXPECT_NEAR(again.mu, st.mu, 1e-10);
    for (Index i = 0; i < c; ++i) EXPECT_EQ(again.s[i], st.s[i]);
  }
}

// ---------------------------------------------------------------------------
// jacobian_abs_det

TEST(JacobianAbsDet, ExampleIsOne) {
  EXPECT_NEAR(jacobian_abs_det(vec({0.85, -0.45, 0.05}), 1.0, 1e-6), 1.0, 1e-4);
}

TEST(JacobianAbsDet, InteriorIsExactlyOne) {
  EXPECT_EQ(jacobian_abs_det(vec({0.1, -0.2, 0.3}), 1.0), 1.0);
}

TEST(JacobianAbsDet, DegenerateTie) {
  EXPECT_THROW(jacobian_abs_det(vec({1.0, -1.0, 0.3}), 1.0), DegenerateInputError);
  EXPECT_THROW(jacobian_abs_det(vec({1.0, 0.5}), 0.0), DomainError);
  EXPECT_THROW(jacobian_abs_det(vec({1.0, 0.5}), 1.0, 0.0), DomainError);
}

TEST(JacobianAbsDetProperty, GenericPointsBothRegimes) {
  std::mt19937_64 rng(31);
  int boundary = 0;
  int interior = 0;
  int checked = 0;
  while (checked < 100) {
    const Index p = 2 + checked % 6;
    const Vector beta = random_vector(rng, p, 1.0);
    const double r = (checked % 2 == 0) ? 0.5 * beta.lpNorm<1>() : 1.5 * beta.lpNorm<1>();
    try {
      const double det = jacobian_abs_det(beta, r);
      EXPECT_NEAR(det, 1.0, 1e-4);
      (r < beta.lpNorm<1>() ? boundary : interior)++;
      ++checked;
    } catch (const DegenerateInputError&) {
      // measure-zero neighbourhood; draw again
    }
  }
  EXPECT_GE(boundary, 40);
  EXPECT_GE(interior, 40);
}

// ---------------------------------------------------------------------------
// ADMM generalized projection

TEST(AdmmProject, IdentityMatchesVectorProjection) {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    const Index p = 2 + rep % 5;
    const Vector beta = random_vector(rng, p);
    const double r = 0.3 + 0.1 * (rep % 20);
    const auto res = admm_project(beta, GeneralizedBall::linear_map_ball(Matrix::Identity(p, p), r));
    const auto exact = project_l1_ball(beta, r);
    ASSERT_LT((res.projection.theta - exact.theta).lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_EQ(res.projection.active_set, exact.active_set);
  }
}

TEST(AdmmProject, ZeroIsFixedPoint) {
  const Matrix d = chain_difference(5);
  const auto res = admm_project(Vector::Zero(5), GeneralizedBall::linear_map_ball(d, 0.7));
  EXPECT_TRUE(res.projection.theta.isZero());
  EXPECT_FALSE(res.projection.boundary);
}

TEST(AdmmProject, ChainDifferenceMatchesPolytopeOracle) {
  std::mt19937_64 rng(42);
  const Index p = 4;
  const Matrix d = chain_difference(p);
  // ||D z||_1 <= r  <=>  sigma^T D z <= r for all sign vectors sigma.
  Matrix g(8, p);
  for (int mask = 0; mask < 8; ++mask) {
    Vector sigma(3);
    for (int k = 0; k < 3; ++k) sigma[k] = (mask & (1 << k)) ? -1.0 : 1.0;
    g.row(mask) = sigma.transpose() * d;
  }
  for (int rep = 0; rep < 50; ++rep) {
    const Vector beta = random_vector(rng, p);
    const double r = 0.2 + 0.05 * (rep % 10);
    const Vector expected = oracle::polytope_projection(beta, g, Vector::Constant(8, r));
    ASSERT_EQ(expected.size(), p);
    const auto res = admm_project(beta, GeneralizedBall::linear_map_ball(d, r), {1.0, 1e-10, 50000});
    EXPECT_LT((res.projection.theta - expected).lpNorm<Eigen::Infinity>(), 1e-6) << "rep " << rep;
    EXPECT_LE(res.constraint_norm, r + 1e-6);
    // The split variable is exactly sparse with at least one zero contrast for small r.
    EXPECT_NEAR((d * res.projection.theta - res.contrast).norm(), 0.0, 1e-6);
  }
}

TEST(AdmmProject, WarmStartConvergesFaster) {
  std::mt19937_64 rng(43);
  const Matrix d = chain_difference(8);
  const LinearMapProjector projector(d);
  const Vector beta = random_vector(rng, 8);
  const auto cold = projector.project(beta, 0.5);
  Vector nudged = beta;
  nudged[3] += 1e-4;
  const auto warm = projector.project(nudged, 0.5, &cold);
  const auto cold2 = projector.project(nudged, 0.5);
  EXPECT_LT(warm.iterations, cold2.iterations);
  EXPECT_LT((warm.projection.theta - cold2.projection.theta).norm(), 1e-6);
}

TEST(AdmmProject, Errors) {
  const Matrix d = chain_difference(4);
  EXPECT_THROW(admm_project(Vector::Ones(3), GeneralizedBall::linear_map_ball(d, 1.0)), InputError);
  EXPECT_THROW(admm_project(Vector::Ones(4), GeneralizedBall::vector_ball(1.0)), ConfigError);
  EXPECT_THROW(admm_project(Vector::Ones(4), GeneralizedBall::linear_map_ball(Matrix(0, 4), 1.0)),
               ConfigError);
  Vector beta(4);
  beta << 5.0, -3.0, 4.0, -6.0;
  try {
    admm_project(beta, GeneralizedBall::linear_map_ball(d, 0.1), {1.0, 1e-14, 3});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.primal_residual() + e.dual_residual(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// nuclear_project

TEST(NuclearProject, DiagonalMatchesVectorProjection) {
  Matrix b = Matrix::Zero(3, 3);
  b.diagonal() << 3.0, -1.0, 0.5;
  const auto res = nuclear_project(b, 2.0);
  const auto vecproj = project_l1_ball(b.diagonal(), 2.0);
  Matrix expected = Matrix::Zero(3, 3);
  expected.diagonal() = vecproj.theta;
  EXPECT_LT((res.projected - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NuclearProject, InteriorReturnsInput) {
  Matrix b(2, 3);
  b << 0.1, 0.2, -0.1, 0.0, 0.1, 0.05;
  const auto res = nuclear_project(b, 5.0);
  EXPECT_TRUE(res.projected == b);
}

TEST(NuclearProject, RankOneScalesToRadius) {
  Vector u = vec({1.0, 2.0, 2.0}) / 3.0;
  Vector v = vec({0.6, 0.8});
  const Matrix b = 5.0 * u * v.transpose();
  const auto res = nuclear_project(b, 2.0);
  EXPECT_LT((res.projected - 0.4 * b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NuclearProjectProperty, SpectrumIsVectorProjection) {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const Index m = 2 + rep % 5;
    const Index k = 2 + (rep / 5) % 4;
    Matrix b(m, k);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < k; ++j) b(i, j) = n(rng);
    const double r = 0.5 + 0.05 * rep;
    const auto res = nuclear_project(b, r);
    Eigen::JacobiSVD<Matrix> svd_in(b);
    Eigen::JacobiSVD<Matrix> svd_out(res.projected);
    const Vector expected = project_l1_ball(svd_in.singularValues(), r).theta;
    EXPECT_LT((svd_out.singularValues() - expected).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_LE(svd_out.singularValues().sum(), r * (1.0 + 1e-10) + 1e-12);
  }
}

TEST(NuclearProject, Errors) {
  EXPECT_THROW(nuclear_project(Matrix::Ones(2, 2), 0.0), DomainError);
  Matrix b = Matrix::Ones(2, 2);
  b(0, 0) = NAN;
  EXPECT_THROW(nuclear_project(b, 1.0), InputError);
}
