// Acceptance run. Prints one PASS/FAIL line per criterion with the measured
// figures and wall time, and exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "l1ball/errors.hpp"
#include "l1ball/experiment.hpp"
#include "l1ball/priors.hpp"
#include "l1ball/projection.hpp"
#include "l1ball/sampler.hpp"
#include "oracles.hpp"

using namespace l1ball;

namespace {

constexpr double kZ99 = 2.5758293035489004;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

double laplace(Rng& rng, double scale) {
  std::exponential_distribution<double> e(1.0);
  return scale * (e(rng) - e(rng));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_against_normal(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = normal_cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// Counts outside their 99% Wilson band, for an expected pmf over 1..p.
int cells_outside(const std::vector<long>& counts, const std::vector<double>& expected, long n) {
  int bad = 0;
  for (std::size_t j = 1; j < expected.size(); ++j) {
    const auto [lo, hi] = oracle::wilson_interval(static_cast<double>(counts[j]), static_cast<double>(n), kZ99);
    if (expected[j] < lo || expected[j] > hi) ++bad;
  }
  return bad;
}

ExperimentConfig bundled(const std::string& name) {
  return load_config(std::string(L1BALL_SOURCE_DIR) + "/configs/" + name);
}

// ---------------------------------------------------------------------------

Outcome projection_oracle() {
  Rng rng(1001);
  std::uniform_int_distribution<int> dim(2, 6);
  std::normal_distribution<double> z(0.0, 2.0);
  std::uniform_real_distribution<double> frac(0.05, 1.5);
  double worst_exact = 0.0;
  double worst_admm = 0.0;
  AdmmOptions opts;
  opts.tol = 1e-12;
  for (int k = 0; k < 1000; ++k) {
    const int p = dim(rng);
    Vector beta(p);
    for (int i = 0; i < p; ++i) beta[i] = z(rng);
    const double r = frac(rng) * beta.cwiseAbs().sum();
    const Vector want = oracle::kkt_bisection_projection(beta, r);
    worst_exact = std::max(worst_exact, (project_l1_ball(beta, r).theta - want).cwiseAbs().maxCoeff());
    const auto admm = admm_project(beta, GeneralizedBall::linear_map_ball(Matrix::Identity(p, p), r), opts);
    worst_admm = std::max(worst_admm, (admm.projection.theta - want).cwiseAbs().maxCoeff());
  }
  return {worst_exact <= 1e-10 && worst_admm <= 1e-6,
          "max |exact - oracle| " + fmt("%.2e", worst_exact) + ", max |admm - oracle| " + fmt("%.2e", worst_admm)};
}

Outcome jacobian_unit() {
  Rng rng(1002);
  std::uniform_int_distribution<int> dim(2, 6);
  std::normal_distribution<double> z(0.0, 1.5);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  double worst = 0.0;
  int interior = 0;
  int boundary = 0;
  while (interior + boundary < 100) {
    const int p = dim(rng);
    Vector beta(p);
    for (int i = 0; i < p; ++i) beta[i] = z(rng);
    const bool inside = (interior + boundary) % 2 == 0;
    const double norm1 = beta.cwiseAbs().sum();
    const double r = inside ? norm1 * (1.0 + frac(rng)) : norm1 * frac(rng);
    try {
      worst = std::max(worst, std::abs(jacobian_abs_det(beta, r) - 1.0));
    } catch (const DegenerateInputError&) {
      continue;  // within a step of a tie; draw another point
    }
    (inside ? interior : boundary)++;
  }
  return {worst <= 1e-3, "max ||det J| - 1| " + fmt("%.2e", worst) + " over " + std::to_string(interior) +
                             " interior and " + std::to_string(boundary) + " boundary points"};
}

Outcome conditional_cardinality() {
  const int p = 8;
  const double lambda = 1.0;
  const double r = 2.0;
  const long n = 200000;
  // Truncated Poisson in j - 1 with mean r / lambda; the last cell takes the tail.
  std::vector<double> expected(p + 1, 0.0);
  double head = 0.0;
  for (int j = 1; j < p; ++j) {
    expected[j] = std::exp((j - 1) * std::log(r / lambda) - r / lambda - std::lgamma(static_cast<double>(j)));
    head += expected[j];
  }
  expected[p] = 1.0 - head;
  double formula_gap = 0.0;
  for (int j = 1; j <= p; ++j) formula_gap = std::max(formula_gap, std::abs(cardinality_pmf(j, p, r, lambda) - expected[j]));

  Rng rng(1003);
  std::vector<long> counts(p + 1, 0);
  Vector beta(p);
  for (long k = 0; k < n; ++k) {
    for (int i = 0; i < p; ++i) beta[i] = laplace(rng, lambda);
    counts[static_cast<std::size_t>(project_l1_ball(beta, r).cardinality())]++;
  }
  const int bad = cells_outside(counts, expected, n);
  return {bad == 0 && counts[0] == 0 && formula_gap < 1e-12,
          std::to_string(bad) + " of " + std::to_string(p) + " cells outside 99% bands, library vs formula " +
              fmt("%.1e", formula_gap)};
}

Outcome marginal_cardinality() {
  const int p = 8;
  const long n = 200000;
  const double alpha = 1.0;
  int bad = 0;
  double formula_gap = 0.0;
  Rng rng(1004);
  std::exponential_distribution<double> radius(1.0 / alpha);
  for (double ratio : {0.5, 1.0, 3.0}) {
    const double lambda = ratio * alpha;
    // Geometric with success lambda / (lambda + alpha), truncated at p.
    const double q = alpha / (lambda + alpha);
    std::vector<double> expected(p + 1, 0.0);
    for (int j = 1; j < p; ++j) expected[j] = (1.0 - q) * std::pow(q, j - 1);
    expected[p] = std::pow(q, p - 1);
    for (int j = 1; j <= p; ++j) {
      formula_gap = std::max(formula_gap, std::abs(marginal_cardinality_pmf(j, p, lambda, alpha) - expected[j]));
    }
    std::vector<long> counts(p + 1, 0);
    Vector beta(p);
    for (long k = 0; k < n; ++k) {
      for (int i = 0; i < p; ++i) beta[i] = laplace(rng, lambda);
      counts[static_cast<std::size_t>(project_l1_ball(beta, radius(rng)).cardinality())]++;
    }
    bad += cells_outside(counts, expected, n);
  }
  return {bad == 0 && formula_gap < 1e-12, std::to_string(bad) + " of 24 cells outside 99% bands, library vs formula " +
                                               fmt("%.1e", formula_gap)};
}

Outcome regression_selection() {
  bool pass = true;
  std::string detail;
  for (double signal : {5.0, 10.0}) {
    double fpr = 0.0;
    double fnr = 0.0;
    double seconds = 0.0;
    for (int seed = 1; seed <= 5; ++seed) {
      ExperimentConfig c = bundled("regression_n50_p300.json");
      c.data["generator"]["signal"] = signal;
      c.data["generator"]["seed"] = seed;
      c.sampler.seed = static_cast<std::uint64_t>(seed);
      const ExperimentResult res = run_experiment(c, 1, false);
      fpr += res.metrics.fpr / 5.0;
      fnr += res.metrics.fnr / 5.0;
      seconds += res.seconds;
    }
    pass = pass && fpr <= 0.02 && fnr <= 0.10 && seconds < 600.0;
    detail += (detail.empty() ? "" : "; ") + fmt("signal %.0f:", signal) + fmt(" FPR %.4f", fpr) +
              fmt(" FNR %.3f", fnr) + fmt(" in %.0f s", seconds);
  }
  return {pass, detail};
}

Outcome mixture_component_count() {
  int hits = 0;
  double slowest = 0.0;
  std::string modes;
  for (int seed = 1; seed <= 5; ++seed) {
    ExperimentConfig c = bundled("mixture_k3.json");
    c.data["generator"]["seed"] = seed;
    c.sampler.seed = static_cast<std::uint64_t>(seed);
    const ExperimentResult res = run_experiment(c, 1, false);
    Index mode = 0;
    res.summary.cardinality_pmf.maxCoeff(&mode);
    hits += mode == 3 ? 1 : 0;
    slowest = std::max(slowest, res.seconds);
    modes += (modes.empty() ? "" : ",") + std::to_string(mode);
  }
  return {hits >= 4 && slowest < 600.0, "modal K per seed " + modes + " (" + std::to_string(hits) +
                                            "/5 equal 3), slowest run " + fmt("%.0f s", slowest)};
}

Outcome nuclear_spectrum() {
  Rng rng(1007);
  std::uniform_int_distribution<int> dim(2, 6);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> frac(0.05, 1.3);
  double worst = 0.0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const int m = dim(rng);
    const int n = dim(rng);
    Matrix b(m, n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) b(i, j) = z(rng);
    }
    const Vector sigma_in = Eigen::JacobiSVD<Matrix>(b).singularValues();
    const double r = frac(rng) * sigma_in.sum();
    const Matrix l = nuclear_project(b, r).projected;
    const Vector sigma_out = Eigen::JacobiSVD<Matrix>(l).singularValues();
    Vector want = project_l1_ball(sigma_in, r).theta;
    std::sort(want.begin(), want.end(), std::greater<>());
    worst = std::max(worst, (sigma_out - want).cwiseAbs().maxCoeff());
    worst_excess = std::max(worst_excess, sigma_out.sum() - r);
  }
  return {worst <= 1e-8 && worst_excess <= 1e-12,
          "max spectrum gap " + fmt("%.2e", worst) + ", max (sum sigma - r) " + fmt("%.2e", worst_excess)};
}

// Worst |analytic - central difference| / max(1, |central difference|).
double gradient_error(const TargetPosterior& model, const Vector& q, bool& kink) {
  auto ws = model.make_workspace();
  const Evaluation e = model.evaluate(q, ws.get());
  kink = e.kink || !std::isfinite(e.log_density);
  if (kink) return 0.0;
  double worst = 0.0;
  Vector x = q;
  for (Index i = 0; i < q.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(q[i]));
    x[i] = q[i] + h;
    const double up = model.evaluate(x, nullptr).log_density;
    x[i] = q[i] - h;
    const double down = model.evaluate(x, nullptr).log_density;
    x[i] = q[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(e.gradient[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

Outcome sampler_and_gradients() {
  const FunctionTarget gaussian(
      5, [](const Vector& q) { return -0.5 * q.squaredNorm(); }, [](const Vector& q) { return Vector(-q); });
  const ChainResult chain = nuts_sample(gaussian, 1000, 50000, 1008);
  double worst_ks = 0.0;
  for (Index d = 0; d < 5; ++d) {
    std::vector<double> xs;
    xs.reserve(chain.records.size());
    for (const auto& rec : chain.records) xs.push_back(rec.theta[d]);
    worst_ks = std::max(worst_ks, ks_against_normal(xs));
  }

  const std::vector<std::string> configs = {
      R"({"name":"g","model":"regression","data":{"generator":{"n":20,"p":8,"c0":2,"seed":3}},
          "prior":{"scale":1.0,"radius_scale":2.0}})",
      R"({"name":"g","model":"regression","data":{"generator":{"n":20,"p":8,"c0":2,"seed":3}},
          "prior":{"base":"cauchy","scale":1.0,"radius":"half_cauchy","radius_scale":1.0}})",
      R"({"name":"g","model":"regression","data":{"generator":{"n":20,"p":8,"c0":2,"seed":3}},
          "prior":{"base":"gaussian","radius":"quantile","w_shape":[2.0,3.0]}})",
      R"({"name":"g","model":"mixture","data":{"generator":{"n":60,"seed":4}},"prior":{"k1":5,"radius_scale":2.0}})",
      R"({"name":"g","model":"fused","data":{"generator":{"height":3,"width":4,"noise_sd":0.3,"seed":5}},
          "prior":{"radius_scale":3.0}})",
      R"({"name":"g","model":"lowrank_sparse","data":{"generator":{"frames":4,"height":2,"width":3,"rank":1,
          "spikes_per_frame":1,"seed":6}},"prior":{"radius_scale":5.0,"lambda_sparse":0.5,"sparse_radius_scale":1.0}})",
      R"({"name":"g","model":"structured","data":{"generator":{"p":6,"factors":1,"block_size":3,"seed":7}},
          "prior":{"factors":2,"kappa":4.0,"radius_scale":1.0,"factor_radius_scale":1.0}})"};
  Rng rng(1009);
  std::normal_distribution<double> jitter(0.0, 0.1);
  double worst_grad = 0.0;
  int checked = 0;
  int skipped = 0;
  for (const auto& text : configs) {
    const ExperimentConfig c = parse_config(text);
    const Dataset data = load_dataset(c);
    const auto target = build_target(c, data);
    for (int rep = 0; rep < 20; ++rep) {
      Vector q = target->initial_position(rng);
      for (Index i = 0; i < q.size(); ++i) q[i] += jitter(rng);
      bool kink = false;
      const double err = gradient_error(*target, q, kink);
      if (kink) {
        ++skipped;
        continue;
      }
      worst_grad = std::max(worst_grad, err);
      ++checked;
    }
  }
  return {worst_ks < 0.02 && worst_grad <= 1e-5 && checked >= 100,
          "max marginal KS " + fmt("%.4f", worst_ks) + "; max relative gradient error " + fmt("%.2e", worst_grad) +
              " at " + std::to_string(checked) + " points (" + std::to_string(skipped) + " kinks skipped)"};
}

Outcome spike_slab_zero_frequency() {
  const double mu = 0.8;
  const long n = 200000;
  bool pass = true;
  std::string detail;
  for (double w : {0.1, 0.5, 0.9}) {
    const SpikeSlabBase base(w, mu, laplace_density(1.5), uniform_density(-mu, mu));
    Rng rng(1010);
    long zeros = 0;
    Vector x(1);
    for (long k = 0; k < n; ++k) {
      x[0] = base.sample(rng);
      zeros += soft_threshold(x, mu)[0] == 0.0 ? 1 : 0;
    }
    const auto [lo, hi] = oracle::wilson_interval(static_cast<double>(zeros), static_cast<double>(n), kZ99);
    pass = pass && (1.0 - w) >= lo && (1.0 - w) <= hi;
    detail += (detail.empty() ? "" : ", ") + fmt("w=%.1f:", w) + fmt(" %.4f", static_cast<double>(zeros) / n);
  }
  return {pass, "zero frequency " + detail};
}

// One-sample energy statistic of whitened draws against N(0, I), with the
// reference expectation taken over a fixed reference sample.
double energy_statistic(const std::vector<Vector>& xs, const std::vector<Vector>& ref) {
  const double n = static_cast<double>(xs.size());
  double cross = 0.0;
  for (const auto& x : xs) {
    for (const auto& y : ref) cross += (x - y).norm();
  }
  cross /= n * static_cast<double>(ref.size());
  double within = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) within += 2.0 * (xs[i] - xs[j]).norm();
  }
  within /= n * n;
  double ref_within = 0.0;
  const std::size_t m = std::min<std::size_t>(ref.size(), 1000);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) ref_within += 2.0 * (ref[i] - ref[j]).norm();
  }
  ref_within /= static_cast<double>(m) * static_cast<double>(m - 1);
  return n * (2.0 * cross - within - ref_within);
}

Outcome posterior_normality() {
  ExperimentConfig c = bundled("regression_n50_p300.json");
  c.data["generator"] = {{"n", 200}, {"p", 50}, {"c0", 5}, {"signal", 5.0}, {"seed", 11}};
  c.sampler.chains = 2;
  c.sampler.warmup = 1000;
  c.sampler.samples = 2000;
  c.sampler.seed = 11;
  const Dataset data = load_dataset(c);
  const ExperimentResult res = run_experiment(c, 1, false);

  std::vector<Index> support;
  for (Index i = 0; i < data.truth.size(); ++i) {
    if (data.truth[i] != 0.0) support.push_back(i);
  }
  const auto k = static_cast<Index>(support.size());
  Matrix xs(data.regression.x.rows(), k);
  for (Index j = 0; j < k; ++j) xs.col(j) = data.regression.x.col(support[static_cast<std::size_t>(j)]);
  const Matrix gram = xs.transpose() * xs;
  const Vector center = gram.ldlt().solve(xs.transpose() * data.regression.y);
  // Whitening by the reference covariance gram^{-1}: z = U (theta - center) with U^T U = gram.
  const Matrix u = gram.llt().matrixU();

  std::vector<Vector> draws;
  for (const auto& chain : res.chains) {
    for (std::size_t t = 0; t < chain.records.size(); t += 20) {
      Vector theta_c(k);
      for (Index j = 0; j < k; ++j) theta_c[j] = chain.records[t].theta[support[static_cast<std::size_t>(j)]];
      draws.push_back(u * (theta_c - center));
    }
  }
  Rng rng(1011);
  std::normal_distribution<double> z(0.0, 1.0);
  auto normal_sample = [&](std::size_t count) {
    std::vector<Vector> out(count, Vector(k));
    for (auto& v : out) {
      for (Index j = 0; j < k; ++j) v[j] = z(rng);
    }
    return out;
  };
  const std::vector<Vector> ref = normal_sample(4000);
  const double observed = energy_statistic(draws, ref);
  constexpr int kReplicates = 199;
  int exceed = 0;
  for (int b = 0; b < kReplicates; ++b) exceed += energy_statistic(normal_sample(draws.size()), ref) >= observed ? 1 : 0;
  const double p_value = (1.0 + exceed) / (kReplicates + 1.0);
  return {p_value >= 0.01, std::to_string(draws.size()) + " thinned draws, energy statistic " + fmt("%.3f", observed) +
                               ", Monte Carlo p-value " + fmt("%.3f", p_value)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 projection matches KKT oracle; ADMM with D=I within 1e-6; < 10 s", projection_oracle},
      {"2 |det J| within 1e-3 of one at 100 points", jacobian_unit},
      {"3 conditional |C| pmf (p=8, lambda=1, r=2) within 99% bands; < 30 s", conditional_cardinality},
      {"4 marginal |C| pmf, lambda/alpha in {0.5, 1, 3}, within 99% bands", marginal_cardinality},
      {"5 regression (50,300,10,5) and (50,300,10,10): mean FPR <= 0.02, FNR <= 0.10; < 10 min each",
       regression_selection},
      {"6 mixture component count mode is 3 in >= 4 of 5 seeds; < 10 min per run", mixture_component_count},
      {"7 nuclear projection spectrum equals l1 projection of the spectrum; sum sigma <= r", nuclear_spectrum},
      {"8 NUTS 5-D Gaussian marginal KS < 0.02 at 50k draws; model gradients within 1e-5", sampler_and_gradients},
      {"9 spike-and-slab zero frequency equals 1 - w within 99% bands", spike_slab_zero_frequency},
      {"10 (200,50,5) posterior of theta_C0 passes an energy normality test at 1%", posterior_normality},
  };
  const std::vector<double> limits = {10.0, 0.0, 30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limits[i] > 0.0 && seconds >= limits[i]) {
      out.pass = false;
      out.detail += fmt("; over the %.0f s limit", limits[i]);
    }
    failures += out.pass ? 0 : 1;
    std::printf("[%s] %s | %s | %.1f s\n", out.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), out.detail.c_str(),
                seconds);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
