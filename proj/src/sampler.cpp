#include "l1ball/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Phase point of the Hamiltonian system.
struct Point {
  Vector q;
  Vector p;
  double log_density = -kInf;
  Vector grad;
  bool bad = false;
};

class Hamiltonian {
 public:
  Hamiltonian(const TargetPosterior& target, TargetWorkspace* ws, Vector inv_metric)
      : target_(target), ws_(ws), inv_metric_(std::move(inv_metric)) {}

  void set_inv_metric(Vector m) {
    inv_metric_ = std::move(m);
    dense_ = Matrix();
  }
  // Dense inverse metric Sigma; momenta are drawn as p = L^{-T} z with Sigma = L L'.
  void set_inv_metric(const Matrix& sigma) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("nuts_sample: dense metric is not positive definite");
    dense_ = sigma;
    chol_ = llt.matrixL();
    inv_metric_ = sigma.diagonal();
  }
  const Vector& inv_metric() const { return inv_metric_; }
  const Matrix& dense_inv_metric() const { return dense_; }

  void update(Point& z) const {
    Evaluation e = target_.evaluate(z.q, ws_);
    z.log_density = e.log_density;
    z.grad = std::move(e.gradient);
    z.bad = e.kink || !std::isfinite(z.log_density) || !z.grad.allFinite();
  }

  double kinetic(const Point& z) const {
    if (dense_.size() > 0) return 0.5 * z.p.dot(dense_ * z.p);
    return 0.5 * (z.p.array().square() * inv_metric_.array()).sum();
  }

  double energy(const Point& z) const {
    if (z.bad) return kInf;
    const double h = -z.log_density + kinetic(z);
    return std::isnan(h) ? kInf : h;
  }

  Vector p_sharp(const Point& z) const {
    if (dense_.size() > 0) return dense_ * z.p;
    return inv_metric_.cwiseProduct(z.p);
  }

  void sample_momentum(Point& z, Rng& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    z.p.resize(inv_metric_.size());
    if (dense_.size() > 0) {
      for (Index i = 0; i < z.p.size(); ++i) z.p[i] = n(rng);
      chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(z.p);
      return;
    }
    for (Index i = 0; i < z.p.size(); ++i) z.p[i] = n(rng) / std::sqrt(inv_metric_[i]);
  }

  void evolve(Point& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * p_sharp(z);
    update(z);
    if (z.bad) return;
    z.p += 0.5 * eps * z.grad;
  }

 private:
  const TargetPosterior& target_;
  TargetWorkspace* ws_;
  Vector inv_metric_;
  Matrix dense_;
  Matrix chol_;
};

// Step-size dual averaging with the usual constants (gamma 0.05, t0 10, kappa 0.75).
class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double eps) {
    mu_ = std::log(10.0 * eps);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  int counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

struct Transition {
  Point z;
  double accept_stat = 0.0;
  int depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
};

class Nuts {
 public:
  Nuts(const Hamiltonian& h, Rng& rng, const NutsOptions& opt) : h_(h), rng_(rng), opt_(opt) {}

  Transition transition(const Point& start, double eps) {
    eps_ = eps;
    divergent_ = false;
    Point z = start;
    h_.sample_momentum(z, rng_);

    Point z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    Vector p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    Vector ps_fwd_fwd = h_.p_sharp(z), ps_fwd_bck = ps_fwd_fwd, ps_bck_fwd = ps_fwd_fwd,
           ps_bck_bck = ps_fwd_fwd;
    Vector rho = z.p;
    double log_sum_weight = 0.0;
    const double h0 = h_.energy(z);
    int n_leapfrog = 0;
    double sum_metro = 0.0;
    int depth = 0;
    const Index dim = z.q.size();

    while (depth < opt_.max_depth) {
      Vector rho_fwd = Vector::Zero(dim), rho_bck = Vector::Zero(dim);
      bool valid;
      double lsw_subtree = -kInf;
      if (uniform_(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        Point& cur = z_fwd;
        valid = build_tree(depth, cur, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                           h0, 1.0, n_leapfrog, lsw_subtree, sum_metro);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        Point& cur = z_bck;
        valid = build_tree(depth, cur, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                           h0, -1.0, n_leapfrog, lsw_subtree, sum_metro);
      }
      if (!valid) break;
      ++depth;

      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(ps_bck_bck, ps_fwd_fwd, rho);
      persist = persist && criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    Transition t;
    t.z = std::move(z_sample);
    t.depth = depth;
    t.n_leapfrog = n_leapfrog;
    t.divergent = divergent_;
    t.accept_stat = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    t.energy = h_.energy(t.z);
    return t;
  }

 private:
  static bool criterion(const Vector& ps_minus, const Vector& ps_plus, const Vector& rho) {
    return ps_plus.dot(rho) > 0.0 && ps_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, Point& z, Point& z_propose, Vector& ps_beg, Vector& ps_end, Vector& rho,
                  Vector& p_beg, Vector& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro) {
    if (depth == 0) {
      h_.evolve(z, sign * eps_);
      ++n_leapfrog;
      const double h = h_.energy(z);
      if (!(h - h0 <= opt_.max_delta_h)) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro += (h0 - h > 0.0) ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      ps_beg = h_.p_sharp(z);
      ps_end = ps_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }
    const Index dim = z.q.size();

    double lsw_init = -kInf;
    Vector p_init_end(dim), ps_init_end(dim);
    Vector rho_init = Vector::Zero(dim);
    if (!build_tree(depth - 1, z, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    n_leapfrog, lsw_init, sum_metro)) {
      return false;
    }

    Point z_propose_final = z;
    double lsw_final = -kInf;
    Vector p_final_beg(dim), ps_final_beg(dim);
    Vector rho_final = Vector::Zero(dim);
    if (!build_tree(depth - 1, z, z_propose_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, h0,
                    sign, n_leapfrog, lsw_final, sum_metro)) {
      return false;
    }

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (uniform_(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    const Vector rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(ps_beg, ps_end, rho_subtree);
    persist = persist && criterion(ps_beg, ps_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(ps_init_end, ps_end, rho_final + p_init_end);
    return persist;
  }

  const Hamiltonian& h_;
  Rng& rng_;
  const NutsOptions& opt_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double eps_ = 0.1;
  bool divergent_ = false;
};

// Doubles or halves eps until a single leapfrog step crosses acceptance 0.8.
double find_initial_step(const Hamiltonian& h, const Point& start, Rng& rng, double eps) {
  auto log_accept = [&](double step) {
    Point z = start;
    h.sample_momentum(z, rng);
    const double h0 = h.energy(z);
    h.evolve(z, step);
    const double d = h0 - h.energy(z);
    return std::isfinite(d) ? d : -kInf;
  };
  const double threshold = std::log(0.8);
  const int direction = log_accept(eps) > threshold ? 1 : -1;
  for (int k = 0; k < 60; ++k) {
    const double next = direction == 1 ? 2.0 * eps : 0.5 * eps;
    const bool above = log_accept(next) > threshold;
    if (direction == 1 && !above) return eps;
    eps = next;
    if (direction == -1 && above) return eps;
  }
  return eps;
}

// Windowed Welford accumulator for the metric.
class VarianceEstimator {
 public:
  explicit VarianceEstimator(bool dense) : dense_(dense) {}

  void add(const Vector& q) {
    if (n_ == 0) {
      mean_ = Vector::Zero(q.size());
      m2_ = dense_ ? Matrix::Zero(q.size(), q.size()) : Matrix::Zero(q.size(), 1);
    }
    ++n_;
    const Vector delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    if (dense_) {
      m2_.noalias() += delta * (q - mean_).transpose();
    } else {
      m2_.col(0) += delta.cwiseProduct(q - mean_);
    }
  }
  int count() const { return n_; }
  // Shrunk towards 1e-3 as in common practice for short windows.
  Vector variance() const {
    const double n = static_cast<double>(n_);
    Vector var = m2_.col(0) / std::max(n - 1.0, 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }
  Matrix covariance() const {
    const double n = static_cast<double>(n_);
    Matrix cov = m2_ / std::max(n - 1.0, 1.0);
    cov = 0.5 * (cov + cov.transpose());
    cov *= n / (n + 5.0);
    cov.diagonal().array() += 1e-3 * (5.0 / (n + 5.0));
    return cov;
  }

 private:
  bool dense_;
  int n_ = 0;
  Vector mean_;
  Matrix m2_;
};

}  // namespace

double SampleRecord::extra(const std::string& name) const {
  for (const auto& [key, value] : extras) {
    if (key == name) return value;
  }
  throw InputError("SampleRecord: no extra named '" + name + "'");
}

Vector TargetPosterior::initial_position(Rng& rng) const {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Vector q(dimension());
  for (Index i = 0; i < q.size(); ++i) q[i] = u(rng);
  return q;
}

SampleRecord TargetPosterior::make_record(const Vector& q, TargetWorkspace*) const {
  SampleRecord rec;
  rec.theta = q;
  return rec;
}

FunctionTarget::FunctionTarget(Index dimension, LogDensity log_density, Gradient gradient)
    : dimension_(dimension), log_density_(std::move(log_density)), gradient_(std::move(gradient)) {
  if (dimension_ < 1) throw InputError("FunctionTarget: dimension must be >= 1");
}

Evaluation FunctionTarget::evaluate(const Vector& q, TargetWorkspace*) const {
  Evaluation e;
  e.log_density = log_density_(q);
  e.gradient = gradient_(q);
  return e;
}

ChainState leapfrog(const ChainState& state, const TargetPosterior& target, double eps, int steps,
                    const Vector& inv_metric) {
  if (!(eps > 0.0)) throw DomainError("leapfrog: step size must be > 0");
  if (steps < 0) throw DomainError("leapfrog: number of steps must be >= 0");
  const Index dim = target.dimension();
  if (state.position.size() != dim || state.momentum.size() != dim) {
    throw InputError("leapfrog: state dimension does not match target");
  }
  auto ws = target.make_workspace();
  Hamiltonian h(target, ws.get(), inv_metric.size() == 0 ? Vector::Ones(dim) : inv_metric);
  Point z;
  z.q = state.position;
  z.p = state.momentum;
  h.update(z);

  ChainState out = state;
  out.step_size = eps;
  out.divergent = z.bad;
  for (int s = 0; s < steps && !out.divergent; ++s) {
    h.evolve(z, eps);
    ++out.n_leapfrog;
    if (z.bad) out.divergent = true;
  }
  out.position = z.q;
  out.momentum = z.p;
  return out;
}

ChainResult nuts_sample(const TargetPosterior& target, int n_warmup, int n_samples, std::uint64_t seed,
                        const NutsOptions& options) {
  if (n_warmup < 0 || n_samples < 1) throw InputError("nuts_sample: need n_warmup >= 0 and n_samples >= 1");
  if (!(options.target_accept > 0.0 && options.target_accept < 1.0)) {
    throw ConfigError("nuts_sample: target_accept must lie in (0, 1)");
  }
  if (options.max_depth < 1) throw ConfigError("nuts_sample: max_depth must be >= 1");

  const auto started = std::chrono::steady_clock::now();
  const Index dim = target.dimension();
  Rng rng(seed);
  auto ws = target.make_workspace();
  Hamiltonian h(target, ws.get(), Vector::Ones(dim));

  // Find a finite starting point.
  Point z;
  for (int attempt = 0;; ++attempt) {
    z.q = target.initial_position(rng);
    h.update(z);
    if (!z.bad) break;
    if (attempt >= 100) throw NumericalError("nuts_sample: no finite initial point after 100 attempts");
  }

  double eps = options.initial_step_size > 0.0 ? options.initial_step_size : find_initial_step(h, z, rng, 1.0);
  DualAveraging adapt(options.target_accept);
  adapt.restart(eps);

  Nuts nuts(h, rng, options);
  ChainResult result;
  ChainDiagnostics& diag = result.diagnostics;
  diag.tree_depth_histogram.assign(static_cast<std::size_t>(options.max_depth) + 1, 0);

  const int metric_start = n_warmup / 2;
  const int metric_end = static_cast<int>(0.85 * n_warmup);
  const bool dense = options.metric == NutsOptions::Metric::dense;
  VarianceEstimator var(dense);

  for (int it = 0; it < n_warmup; ++it) {
    Transition t = nuts.transition(z, eps);
    z = std::move(t.z);
    if (t.divergent) ++diag.warmup_divergences;
    eps = adapt.learn(t.accept_stat);
    if (options.adapt_metric && it >= metric_start && it < metric_end) var.add(z.q);
    if (options.adapt_metric && it + 1 == metric_end && var.count() >= 10) {
      if (dense) {
        h.set_inv_metric(var.covariance());
      } else {
        h.set_inv_metric(var.variance());
      }
      eps = find_initial_step(h, z, rng, eps);
      adapt.restart(eps);
    }
  }
  if (n_warmup > 0) {
    const double rate = static_cast<double>(diag.warmup_divergences) / n_warmup;
    if (rate > options.max_warmup_divergence_rate) {
      std::ostringstream msg;
      msg << "nuts_sample: " << diag.warmup_divergences << " of " << n_warmup
          << " warmup trajectories diverged (rate " << rate << ")";
      throw DiagnosticsError(msg.str(), rate);
    }
    eps = adapt.final_step();
  }

  diag.step_size = eps;
  diag.inv_metric = h.inv_metric();
  diag.dense_inv_metric = h.dense_inv_metric();
  result.records.reserve(static_cast<std::size_t>(n_samples));
  std::vector<double> energies;
  energies.reserve(static_cast<std::size_t>(n_samples));
  double accept_sum = 0.0;
  double depth_sum = 0.0;
  for (int it = 0; it < n_samples; ++it) {
    Transition t = nuts.transition(z, eps);
    z = std::move(t.z);
    SampleRecord rec = target.make_record(z.q, ws.get());
    rec.position = z.q;
    rec.log_posterior = z.log_density;
    rec.accept_stat = t.accept_stat;
    rec.tree_depth = t.depth;
    rec.n_leapfrog = t.n_leapfrog;
    rec.divergent = t.divergent;
    rec.energy = t.energy;
    rec.step_size = eps;
    result.records.push_back(std::move(rec));

    energies.push_back(t.energy);
    accept_sum += t.accept_stat;
    depth_sum += t.depth;
    if (t.divergent) ++diag.divergences;
    if (t.depth >= options.max_depth) ++diag.max_tree_depth_hits;
    diag.tree_depth_histogram[static_cast<std::size_t>(std::min(t.depth, options.max_depth))]++;
  }
  diag.mean_accept_stat = accept_sum / n_samples;
  diag.mean_tree_depth = depth_sum / n_samples;
  diag.ebfmi = ebfmi(energies);
  diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<ChainResult> run_chains(const TargetPosterior& target, int n_chains, int n_warmup, int n_samples,
                                    std::uint64_t seed, const NutsOptions& options, int threads) {
  if (n_chains < 1) throw ConfigError("run_chains: need at least one chain");
  std::vector<ChainResult> results(static_cast<std::size_t>(n_chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < n_chains; c = next++) {
      try {
        results[static_cast<std::size_t>(c)] =
            nuts_sample(target, n_warmup, n_samples, seed + static_cast<std::uint64_t>(c), options);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(threads, 1, n_chains);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

double ebfmi(const std::vector<double>& energies) {
  if (energies.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double e : energies) mean += e;
  mean /= static_cast<double>(energies.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    den += (energies[i] - mean) * (energies[i] - mean);
    if (i > 0) num += (energies[i] - energies[i - 1]) * (energies[i] - energies[i - 1]);
  }
  return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) throw InputError("split_rhat: chains need at least 4 draws");
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    double mu = 0.0;
    for (double x : h) mu += x;
    mu /= n;
    double v = 0.0;
    for (double x : h) v += (x - mu) * (x - mu);
    means.push_back(mu);
    vars.push_back(v / (n - 1.0));
  }
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m;
  if (w <= 0.0) return b > 0.0 ? kInf : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) throw InputError("effective_sample_size: too few draws");
  const std::size_t n = chains.front().size();
  const double m = static_cast<double>(chains.size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    if (c.size() != n) throw InputError("effective_sample_size: chains differ in length");
    double mu = 0.0;
    for (double x : c) mu += x;
    mu /= static_cast<double>(n);
    double v = 0.0;
    for (double x : c) v += (x - mu) * (x - mu);
    means.push_back(mu);
    vars.push_back(v / static_cast<double>(n));
  }
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m;
  if (w <= 0.0) return m * static_cast<double>(n);

  auto autocorr = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t + lag < n; ++t) s += (chains[c][t] - means[c]) * (chains[c][t + lag] - means[c]);
      acc += s / static_cast<double>(n);
    }
    return acc / m / w;
  };
  // Geyer's initial positive sequence over paired lags.
  double tau = -1.0;
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    const double pair = autocorr(lag) + autocorr(lag + 1);
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(m * static_cast<double>(n) + 10.0));
  return m * static_cast<double>(n) / tau;
}

}  // namespace l1ball
