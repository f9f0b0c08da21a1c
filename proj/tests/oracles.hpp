#pragma once

// Reference solvers used only by the tests. They share no code with the
// library implementations they check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// l1-ball projection from the KKT conditions: find tau >= 0 with
/// sum_i (|b_i| - tau)_+ = r by bisection, then soft-threshold.
inline Vec kkt_bisection_projection(const Vec& beta, double r) {
  if (beta.cwiseAbs().sum() <= r) return beta;
  double lo = 0.0;
  double hi = beta.cwiseAbs().maxCoeff();
  auto mass = [&](double tau) { return (beta.cwiseAbs().array() - tau).max(0.0).sum(); };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) > r) lo = mid; else hi = mid;
  }
  const double tau = 0.5 * (lo + hi);
  Vec out(beta.size());
  for (Eigen::Index i = 0; i < beta.size(); ++i) {
    const double a = std::abs(beta[i]) - tau;
    out[i] = a > 0 ? std::copysign(a, beta[i]) : 0.0;
  }
  return out;
}

/// Projection onto the polytope {z : G z <= h} by exhaustive active-set
/// enumeration. Exponential in rows(G); only for tiny problems.
inline Vec polytope_projection(const Vec& beta, const Mat& g, const Vec& h) {
  const int m = static_cast<int>(g.rows());
  const Eigen::Index p = beta.size();
  if (((g * beta - h).array() <= 1e-14).all()) return beta;
  Vec best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i) if (mask & (1u << i)) rows.push_back(i);
    if (static_cast<Eigen::Index>(rows.size()) > p) continue;
    Mat a(rows.size(), p);
    Vec b(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      a.row(k) = g.row(rows[k]);
      b[k] = h[rows[k]];
    }
    // z = beta - A^T nu, A z = b  =>  (A A^T) nu = A beta - b
    Eigen::FullPivLU<Mat> lu(a * a.transpose());
    if (lu.rank() < static_cast<Eigen::Index>(rows.size())) continue;
    const Vec nu = lu.solve(a * beta - b);
    if ((nu.array() < -1e-12).any()) continue;
    const Vec z = beta - a.transpose() * nu;
    if (((g * z - h).array() > 1e-10).any()) continue;
    const double dist = (z - beta).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = z;
    }
  }
  return best;
}

/// Central-difference gradient of a scalar function.
inline Vec numeric_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                            double rel_step = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x[i]));
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval(double successes, double n, double z) {
  const double phat = successes / n;
  const double denom = 1.0 + z * z / n;
  const double center = (phat + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom;
  return {center - half, center + half};
}

}  // namespace oracle
