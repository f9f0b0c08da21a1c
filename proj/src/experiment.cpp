#include "l1ball/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <thread>

#include "l1ball/data_io.hpp"
#include "l1ball/errors.hpp"
#include "l1ball/synthetic.hpp"

namespace l1ball {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// JSON access with config errors that name the offending key.

void check_keys(const Json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(section + ": unknown key '" + item.key() + "'");
  }
}

double number(const Json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(std::string("'") + key + "' must be finite");
  return x;
}

std::int64_t integer(const Json& obj, const char* key, std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t seed_of(const Json& obj, const char* key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(std::string("'") + key + "' must be a non-negative 64-bit integer");
  }
  return v.get<std::uint64_t>();
}

bool boolean(const Json& obj, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError(std::string("'") + key + "' must be true or false");
  return obj.at(key).get<bool>();
}

std::string text(const Json& obj, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

Vector vector_of(const Json& obj, const char* key) {
  if (!obj.contains(key)) return Vector();
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(std::string("'") + key + "' must be an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(std::string("'") + key + "' must be an array of numbers");
    out[static_cast<Index>(i)] = v[i].get<double>();
  }
  return out;
}

Index positive_index(const Json& obj, const char* key, Index fallback) {
  const auto v = integer(obj, key, fallback);
  if (v < 1) throw ConfigError(std::string("'") + key + "' must be >= 1");
  return static_cast<Index>(v);
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
  if (content.empty() || content.back() != '\n') out << '\n';
}

// ---------------------------------------------------------------------------
// Priors

RadiusPrior radius_from(const Json& prior, const char* kind_key, const char* scale_key) {
  const std::string kind = text(prior, kind_key, "exponential");
  if (kind == "exponential") {
    const double a = number(prior, scale_key, 1.0);
    if (!(a > 0.0)) throw ConfigError(std::string("'") + scale_key + "' must be > 0");
    return RadiusPrior::exponential(a);
  }
  if (kind == "half_cauchy") {
    const double s = number(prior, scale_key, 1.0);
    if (!(s > 0.0)) throw ConfigError(std::string("'") + scale_key + "' must be > 0");
    return RadiusPrior::half_cauchy(s);
  }
  if (kind == "quantile") {
    const Vector ab = prior.contains("w_shape") ? vector_of(prior, "w_shape") : Vector::Ones(2);
    if (ab.size() != 2 || !(ab.array() > 0.0).all()) throw ConfigError("'w_shape' must be two positive numbers");
    return RadiusPrior::quantile_dependent(ab[0], ab[1]);
  }
  throw ConfigError(std::string("'") + kind_key + "' must be exponential, half_cauchy or quantile");
}

BaseDistribution base_from(const Json& prior, Index dim, double scale) {
  const std::string kind = text(prior, "base", "double_exponential");
  if (!(scale > 0.0)) throw ConfigError("'scale' must be > 0");
  if (kind == "double_exponential") return BaseDistribution::double_exponential(Vector::Constant(dim, scale));
  if (kind == "gaussian") return BaseDistribution::gaussian(Vector::Zero(dim), scale * scale * Matrix::Identity(dim, dim));
  if (kind == "cauchy") return BaseDistribution::cauchy(Vector::Constant(dim, scale));
  throw ConfigError("'base' must be double_exponential, gaussian or cauchy");
}

void apply_noise_prior(const Json& prior, double& shape, double& rate) {
  shape = number(prior, "sigma2_shape", shape);
  rate = number(prior, "sigma2_rate", rate);
}

// ---------------------------------------------------------------------------
// Samples CSV

const std::vector<std::string> kRecordColumns = {"log_posterior", "accept_stat", "divergent", "tree_depth",
                                                 "n_leapfrog", "energy", "step_size", "r"};

void write_samples(const fs::path& path, const std::vector<SampleRecord>& records) {
  std::vector<std::string> header = kRecordColumns;
  const SampleRecord& first = records.front();
  for (const auto& e : first.extras) header.push_back(e.first);
  for (Index i = 0; i < first.theta.size(); ++i) header.push_back("theta_" + std::to_string(i + 1));
  Matrix values(static_cast<Index>(records.size()), static_cast<Index>(header.size()));
  for (std::size_t j = 0; j < records.size(); ++j) {
    const auto& r = records[j];
    const auto row = static_cast<Index>(j);
    Index c = 0;
    for (double v : {r.log_posterior, r.accept_stat, r.divergent ? 1.0 : 0.0, static_cast<double>(r.tree_depth),
                     static_cast<double>(r.n_leapfrog), r.energy, r.step_size, r.r}) {
      values(row, c++) = v;
    }
    for (const auto& e : r.extras) values(row, c++) = e.second;
    values.row(row).tail(r.theta.size()) = r.theta.transpose();
  }
  write_csv(path.string(), header, values);
}

std::vector<SampleRecord> read_samples(const fs::path& path) {
  const CsvTable t = read_csv(path.string());
  std::map<std::string, Index> col;
  for (std::size_t j = 0; j < t.header.size(); ++j) col[t.header[j]] = static_cast<Index>(j);
  for (const auto& name : kRecordColumns) {
    if (!col.count(name)) throw InputError(path.string() + ": missing column " + name);
  }
  std::vector<Index> theta_cols;
  std::vector<std::pair<std::string, Index>> extra_cols;
  for (std::size_t j = kRecordColumns.size(); j < t.header.size(); ++j) {
    if (t.header[j].rfind("theta_", 0) == 0) {
      theta_cols.push_back(static_cast<Index>(j));
    } else {
      extra_cols.emplace_back(t.header[j], static_cast<Index>(j));
    }
  }
  std::vector<SampleRecord> out(static_cast<std::size_t>(t.values.rows()));
  for (Index i = 0; i < t.values.rows(); ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    r.log_posterior = t.values(i, col["log_posterior"]);
    r.accept_stat = t.values(i, col["accept_stat"]);
    r.divergent = t.values(i, col["divergent"]) != 0.0;
    r.tree_depth = static_cast<int>(t.values(i, col["tree_depth"]));
    r.n_leapfrog = static_cast<int>(t.values(i, col["n_leapfrog"]));
    r.energy = t.values(i, col["energy"]);
    r.step_size = t.values(i, col["step_size"]);
    r.r = t.values(i, col["r"]);
    for (const auto& [name, c] : extra_cols) r.extras.emplace_back(name, t.values(i, c));
    r.theta.resize(static_cast<Index>(theta_cols.size()));
    for (std::size_t k = 0; k < theta_cols.size(); ++k) r.theta[static_cast<Index>(k)] = t.values(i, theta_cols[k]);
  }
  return out;
}

Json diagnostics_json(const std::vector<ChainResult>& chains, const PosteriorSummary& s, const ExperimentResult* res) {
  Json doc;
  Json list = Json::array();
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& d = chains[c].diagnostics;
    list.push_back({{"chain", c},
                    {"step_size", d.step_size},
                    {"warmup_divergences", d.warmup_divergences},
                    {"divergences", d.divergences},
                    {"mean_accept_stat", d.mean_accept_stat},
                    {"mean_tree_depth", d.mean_tree_depth},
                    {"max_tree_depth_hits", d.max_tree_depth_hits},
                    {"ebfmi", d.ebfmi},
                    {"seconds", d.seconds}});
  }
  doc["chains"] = list;
  doc["max_rhat"] = s.max_rhat;
  doc["min_ess"] = s.min_ess;
  if (res != nullptr) {
    doc["ok"] = res->diagnostics_ok;
    doc["message"] = res->diagnostics_message;
  }
  return doc;
}

Matrix symmetric_from_csv(const fs::path& path) {
  const Matrix m = read_csv(path.string()).values;
  if (m.rows() != m.cols()) throw InputError(path.string() + ": expected a square matrix");
  return m;
}

std::vector<std::string> numbered(const std::string& prefix, Index n) {
  std::vector<std::string> h;
  for (Index i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i + 1));
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig parse_config(const std::string& contents, const fs::path& base_dir) {
  Json doc;
  try {
    doc = Json::parse(contents);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(doc, "config", {"name", "model", "data", "prior", "sampler", "summary", "diagnostics", "output_dir"});
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.name = text(doc, "name", "experiment");
  if (!doc.contains("model")) throw ConfigError("config: 'model' is required");
  c.model = text(doc, "model", "");
  find_model(c.model);
  if (!doc.contains("data")) throw ConfigError("config: 'data' is required");
  c.data = doc.at("data");
  check_keys(c.data, "data", {"path", "affinity", "structural", "generator"});
  c.prior = doc.value("prior", Json::object());
  check_keys(c.prior, "prior",
             {"base", "scale", "radius", "radius_scale", "w_shape", "theory", "k1", "mu_prior_sd", "sigma2_shape",
              "sigma2_rate", "lambda_sparse", "sparse_radius", "sparse_radius_scale", "factor_radius",
              "factor_radius_scale", "factors", "kappa"});

  const Json sampler = doc.value("sampler", Json::object());
  check_keys(sampler, "sampler", {"chains", "warmup", "samples", "seed", "target_accept", "max_depth", "metric"});
  c.sampler.chains = static_cast<int>(positive_index(sampler, "chains", c.sampler.chains));
  c.sampler.warmup = static_cast<int>(integer(sampler, "warmup", c.sampler.warmup));
  c.sampler.samples = static_cast<int>(positive_index(sampler, "samples", c.sampler.samples));
  c.sampler.seed = seed_of(sampler, "seed", c.sampler.seed);
  c.sampler.target_accept = number(sampler, "target_accept", c.sampler.target_accept);
  c.sampler.max_depth = static_cast<int>(positive_index(sampler, "max_depth", c.sampler.max_depth));
  const std::string metric = text(sampler, "metric", "diagonal");
  if (metric != "diagonal" && metric != "dense") throw ConfigError("'metric' must be diagonal or dense");
  c.sampler.dense_metric = metric == "dense";
  if (c.sampler.warmup < 0) throw ConfigError("'warmup' must be >= 0");
  if (!(c.sampler.target_accept > 0.0 && c.sampler.target_accept < 1.0)) {
    throw ConfigError("'target_accept' must lie in (0, 1)");
  }

  const Json summary = doc.value("summary", Json::object());
  check_keys(summary, "summary", {"alpha"});
  c.alpha = number(summary, "alpha", c.alpha);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("'alpha' must lie in (0, 1)");

  const Json diag = doc.value("diagnostics", Json::object());
  check_keys(diag, "diagnostics", {"max_divergence_rate", "max_rhat", "min_ebfmi"});
  c.max_divergence_rate = number(diag, "max_divergence_rate", c.max_divergence_rate);
  c.max_rhat = number(diag, "max_rhat", c.max_rhat);
  c.min_ebfmi = number(diag, "min_ebfmi", c.min_ebfmi);

  if (c.prior.contains("theory")) {
    if (c.model != "regression") throw ConfigError("prior.theory applies to the regression model only");
    const Json& th = c.prior.at("theory");
    check_keys(th, "prior.theory", {"b1", "b2", "b3"});
    const double b1 = number(th, "b1", 1.0);
    const double b2 = number(th, "b2", 1.0);
    const double b3 = number(th, "b3", 0.0);
    if (!(b1 > 0.0)) throw ConfigError("prior.theory: constraint violated, need b1 > 0");
    if (!(b2 > b3)) throw ConfigError("prior.theory: constraint violated, need b2 > b3");
    if (!(b3 <= 1.0)) throw ConfigError("prior.theory: constraint violated, need b3 <= 1");
  }

  c.output_dir = base_dir / text(doc, "output_dir", "results/" + c.name);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Data

Dataset generate_dataset(const Json& spec) {
  if (!spec.is_object()) throw ConfigError("generator: expected an object");
  const std::string kind = text(spec, "kind", "");
  Dataset d;
  d.model = kind;
  if (kind == "regression") {
    check_keys(spec, "generator", {"kind", "n", "p", "c0", "signal", "noise_sd", "correlated", "rho", "seed"});
    RegressionSpec s;
    s.n = positive_index(spec, "n", s.n);
    s.p = positive_index(spec, "p", s.p);
    s.c0 = static_cast<Index>(integer(spec, "c0", s.c0));
    s.signal = number(spec, "signal", s.signal);
    s.noise_sd = number(spec, "noise_sd", s.noise_sd);
    s.correlated = boolean(spec, "correlated", s.correlated);
    s.rho = number(spec, "rho", s.rho);
    s.seed = seed_of(spec, "seed", s.seed);
    auto g = generate_regression(s);
    d.regression.x = std::move(g.x);
    d.regression.y = std::move(g.y);
    d.truth = std::move(g.theta);
  } else if (kind == "mixture") {
    check_keys(spec, "generator", {"kind", "n", "weights", "means", "variances", "seed"});
    MixtureSpec s;
    s.n = positive_index(spec, "n", s.n);
    s.weights = vector_of(spec, "weights");
    s.means = vector_of(spec, "means");
    s.variances = vector_of(spec, "variances");
    s.seed = seed_of(spec, "seed", s.seed);
    d.mixture.y = generate_mixture(s).y;
  } else if (kind == "fused") {
    check_keys(spec, "generator", {"kind", "height", "width", "low", "high", "noise_sd", "seed"});
    ImageSpec s;
    s.height = positive_index(spec, "height", s.height);
    s.width = positive_index(spec, "width", s.width);
    s.low = number(spec, "low", s.low);
    s.high = number(spec, "high", s.high);
    s.noise_sd = number(spec, "noise_sd", s.noise_sd);
    s.seed = seed_of(spec, "seed", s.seed);
    d.grid.pixels = generate_two_block_image(s).pixels;
  } else if (kind == "lowrank_sparse") {
    check_keys(spec, "generator",
               {"kind", "frames", "height", "width", "rank", "spikes_per_frame", "spike_size", "noise_sd", "seed"});
    LowRankSpec s;
    s.frames = positive_index(spec, "frames", s.frames);
    s.height = positive_index(spec, "height", s.height);
    s.width = positive_index(spec, "width", s.width);
    s.rank = static_cast<Index>(integer(spec, "rank", s.rank));
    s.spikes_per_frame = static_cast<Index>(integer(spec, "spikes_per_frame", s.spikes_per_frame));
    s.spike_size = number(spec, "spike_size", s.spike_size);
    s.noise_sd = number(spec, "noise_sd", s.noise_sd);
    s.seed = seed_of(spec, "seed", s.seed);
    auto g = generate_low_rank_sparse(s);
    d.low_rank.frames = std::move(g.frames);
    d.low_rank.height = s.height;
    d.low_rank.width = s.width;
    d.truth.resize(2 * g.low_rank.size());
    const Matrix lr = g.low_rank.transpose();  // column-major of the transpose is row-major
    const Matrix sp = g.sparse.transpose();
    d.truth << lr.reshaped(), sp.reshaped();
  } else if (kind == "structured") {
    check_keys(spec, "generator", {"kind", "p", "factors", "block_size", "loading", "noise_sd", "seed"});
    StructuredSpec s;
    s.p = positive_index(spec, "p", s.p);
    s.factors = positive_index(spec, "factors", s.factors);
    s.block_size = positive_index(spec, "block_size", s.block_size);
    s.loading = number(spec, "loading", s.loading);
    s.noise_sd = number(spec, "noise_sd", s.noise_sd);
    s.seed = seed_of(spec, "seed", s.seed);
    auto g = generate_structured(s);
    d.structured.affinity = std::move(g.affinity);
    d.structured.structural = std::move(g.structural);
    d.structured.factors = static_cast<int>(s.factors);
  } else {
    throw ConfigError("generator: 'kind' must name a registered model, got '" + kind + "'");
  }
  return d;
}

Json write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  Json block;
  if (d.model == "regression") {
    Matrix m(d.regression.x.rows(), d.regression.x.cols() + 1);
    m << d.regression.y, d.regression.x;
    std::vector<std::string> h{"y"};
    for (const auto& name : numbered("x", d.regression.x.cols())) h.push_back(name);
    write_csv((dir / "data.csv").string(), h, m);
    block["path"] = "data.csv";
  } else if (d.model == "mixture") {
    write_csv((dir / "data.csv").string(), {"y"}, d.mixture.y);
    block["path"] = "data.csv";
  } else if (d.model == "fused") {
    write_csv((dir / "pixels.csv").string(), numbered("c", d.grid.pixels.cols()), d.grid.pixels);
    block["path"] = "pixels.csv";
  } else if (d.model == "lowrank_sparse") {
    write_frame_stack((dir / "frames.l1bf").string(), {d.low_rank.frames, d.low_rank.height, d.low_rank.width});
    block["path"] = "frames.l1bf";
  } else if (d.model == "structured") {
    const Index p = d.structured.affinity.rows();
    write_csv((dir / "affinity.csv").string(), numbered("v", p), d.structured.affinity);
    write_csv((dir / "structural.csv").string(), numbered("v", p), d.structured.structural);
    block["affinity"] = "affinity.csv";
    block["structural"] = "structural.csv";
  } else {
    throw ConfigError("write_dataset: unknown model '" + d.model + "'");
  }
  if (d.truth.size() > 0) write_csv((dir / "truth.csv").string(), {"theta"}, d.truth);
  return block;
}

Dataset load_dataset(const ExperimentConfig& config) {
  if (config.data.contains("generator")) {
    Json spec = config.data.at("generator");
    if (!spec.contains("kind")) spec["kind"] = config.model;
    Dataset d = generate_dataset(spec);
    if (d.model != config.model) throw ConfigError("generator kind '" + d.model + "' does not match the model");
    return d;
  }
  Dataset d;
  d.model = config.model;
  auto resolve = [&](const char* key) {
    if (!config.data.contains(key)) throw ConfigError(std::string("data: '") + key + "' is required");
    return config.base_dir / text(config.data, key, "");
  };
  try {
    if (config.model == "structured") {
      d.structured.affinity = symmetric_from_csv(resolve("affinity"));
      d.structured.structural = symmetric_from_csv(resolve("structural"));
    } else if (config.model == "lowrank_sparse") {
      const FrameStack s = read_frame_stack(resolve("path").string());
      d.low_rank.frames = s.frames;
      d.low_rank.height = s.height;
      d.low_rank.width = s.width;
    } else {
      const CsvTable t = read_csv(resolve("path").string());
      if (config.model == "regression") {
        if (t.header.empty() || t.header.front() != "y" || t.values.cols() < 2) {
          throw InputError("regression data: first column must be 'y' followed by the predictors");
        }
        d.regression.y = t.values.col(0);
        d.regression.x = t.values.rightCols(t.values.cols() - 1);
      } else if (config.model == "mixture") {
        if (t.header.size() != 1 || t.header.front() != "y") throw InputError("mixture data: expected one column 'y'");
        d.mixture.y = t.values.col(0);
      } else {
        d.grid.pixels = t.values;
      }
    }
  } catch (const InputError& e) {
    throw ConfigError(std::string("data schema mismatch (") + find_model(config.model).data_schema + "): " + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Model assembly

std::unique_ptr<TargetPosterior> build_target(const ExperimentConfig& config, const Dataset& data) {
  const Json& prior = config.prior;
  const double scale = number(prior, "scale", 1.0);
  if (config.model == "regression") {
    RegressionData rd = data.regression;
    apply_noise_prior(prior, rd.sigma2_shape, rd.sigma2_rate);
    rd.validate();
    const Index p = rd.x.cols();
    if (prior.contains("theory")) {
      const Json& th = prior.at("theory");
      TheoryHyperparams hp{number(th, "b1", 1.0), number(th, "b2", 1.0), number(th, "b3", 0.0)};
      TheoryScales ts;
      try {
        ts = theory_lambda_alpha(static_cast<int>(p), max_column_norm(rd.x), hp);
      } catch (const DomainError& e) {
        throw ConfigError(std::string("prior.theory: constraint violated: ") + e.what());
      }
      BallPrior bp{base_from(prior, p, ts.lambda), RadiusPrior::exponential(ts.alpha)};
      return std::make_unique<RegressionModel>(std::move(rd), std::move(bp));
    }
    BallPrior bp{base_from(prior, p, scale), radius_from(prior, "radius", "radius_scale")};
    return std::make_unique<RegressionModel>(std::move(rd), std::move(bp));
  }
  if (config.model == "mixture") {
    MixtureData md = data.mixture;
    md.k1 = static_cast<int>(positive_index(prior, "k1", md.k1));
    md.mu_prior_sd = number(prior, "mu_prior_sd", md.mu_prior_sd);
    apply_noise_prior(prior, md.sigma2_shape, md.sigma2_rate);
    md.validate();
    BallPrior bp{base_from(prior, md.k1, scale), radius_from(prior, "radius", "radius_scale")};
    return std::make_unique<MixtureModel>(std::move(md), std::move(bp));
  }
  if (config.model == "fused") {
    GridData gd = data.grid;
    gd.mu_prior_sd = number(prior, "mu_prior_sd", gd.mu_prior_sd);
    apply_noise_prior(prior, gd.sigma2_shape, gd.sigma2_rate);
    gd.validate();
    const Index n = gd.pixels.size();
    return std::make_unique<FusedModel>(std::move(gd), base_from(prior, n, scale),
                                        radius_from(prior, "radius", "radius_scale"));
  }
  if (config.model == "lowrank_sparse") {
    LowRankSparseData ld = data.low_rank;
    apply_noise_prior(prior, ld.sigma2_shape, ld.sigma2_rate);
    ld.validate();
    const double lambda_sparse = number(prior, "lambda_sparse", scale);
    if (!(scale > 0.0) || !(lambda_sparse > 0.0)) throw ConfigError("'scale' and 'lambda_sparse' must be > 0");
    Json sparse_prior = prior;
    if (!prior.contains("sparse_radius")) sparse_prior["sparse_radius"] = text(prior, "radius", "exponential");
    if (!prior.contains("sparse_radius_scale")) sparse_prior["sparse_radius_scale"] = number(prior, "radius_scale", 1.0);
    return std::make_unique<LowRankSparseModel>(std::move(ld), scale, radius_from(prior, "radius", "radius_scale"),
                                                lambda_sparse,
                                                radius_from(sparse_prior, "sparse_radius", "sparse_radius_scale"));
  }
  if (config.model == "structured") {
    StructuredData sd = data.structured;
    sd.factors = static_cast<int>(positive_index(prior, "factors", sd.factors));
    sd.kappa = number(prior, "kappa", sd.kappa);
    apply_noise_prior(prior, sd.sigma2_shape, sd.sigma2_rate);
    sd.validate();
    return std::make_unique<StructuredSparsityModel>(std::move(sd), radius_from(prior, "radius", "radius_scale"),
                                                     radius_from(prior, "factor_radius", "factor_radius_scale"));
  }
  throw ConfigError("unknown model '" + config.model + "'");
}

CountFunctional model_count(const std::string& model) {
  auto from_extra = [](const char* name) {
    return [name](const SampleRecord& r) { return static_cast<Index>(std::llround(r.extra(name))); };
  };
  if (model == "regression") return nonzero_count;
  if (model == "mixture") return from_extra("K");
  if (model == "fused") return from_extra("changes");
  if (model == "lowrank_sparse") return from_extra("rank");
  if (model == "structured") return from_extra("factors");
  throw ConfigError("unknown model '" + model + "'");
}

Index model_count_max(const std::string& model, const Dataset& data) {
  if (model == "regression") return data.regression.x.cols();
  if (model == "mixture") return data.mixture.k1;
  if (model == "fused") {
    const Index p1 = data.grid.pixels.rows();
    const Index p2 = data.grid.pixels.cols();
    return (p1 - 1) * p2 + p1 * (p2 - 1);
  }
  if (model == "lowrank_sparse") return std::min(data.low_rank.frames.rows(), data.low_rank.frames.cols());
  if (model == "structured") return data.structured.factors;
  throw ConfigError("unknown model '" + model + "'");
}

SelectionMetrics compute_selection_metrics(const VectorRef& estimate, const VectorRef& truth) {
  if (truth.size() == 0) throw InputError("selection metrics: ground truth is missing");
  if (estimate.size() != truth.size()) throw InputError("selection metrics: estimate and truth lengths differ");
  Index zeros = 0, nonzeros = 0, false_pos = 0, false_neg = 0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0.0) {
      ++zeros;
      if (estimate[i] != 0.0) ++false_pos;
    } else {
      ++nonzeros;
      if (estimate[i] == 0.0) ++false_neg;
    }
  }
  SelectionMetrics m;
  m.fpr = zeros > 0 ? static_cast<double>(false_pos) / static_cast<double>(zeros) : 0.0;
  m.fnr = nonzeros > 0 ? static_cast<double>(false_neg) / static_cast<double>(nonzeros) : 0.0;
  return m;
}

int default_threads() {
  if (const char* env = std::getenv("L1BALL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
    throw ConfigError("L1BALL_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Runner

ExperimentResult run_experiment(const ExperimentConfig& config, int threads, bool write_bundle) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = load_dataset(config);
  const auto target = build_target(config, data);

  NutsOptions opts;
  opts.target_accept = config.sampler.target_accept;
  opts.max_depth = config.sampler.max_depth;
  opts.metric = config.sampler.dense_metric ? NutsOptions::Metric::dense : NutsOptions::Metric::diagonal;
  if (threads <= 0) threads = default_threads();

  ExperimentResult res;
  res.chains = run_chains(*target, config.sampler.chains, config.sampler.warmup, config.sampler.samples,
                          config.sampler.seed, opts, threads);
  const Index max_count = model_count_max(config.model, data);
  res.summary = summarize(res.chains, config.alpha, model_count(config.model), max_count);
  res.has_truth = data.truth.size() > 0;
  if (res.has_truth) res.metrics = compute_selection_metrics(res.summary.frechet_mean, data.truth);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  int divergences = 0;
  double min_ebfmi = std::numeric_limits<double>::infinity();
  for (const auto& c : res.chains) {
    divergences += c.diagnostics.divergences;
    min_ebfmi = std::min(min_ebfmi, c.diagnostics.ebfmi);
  }
  const double draws = static_cast<double>(config.sampler.chains) * config.sampler.samples;
  const double rate = divergences / draws;
  std::ostringstream msg;
  if (rate > config.max_divergence_rate) {
    msg << "divergence rate " << rate << " exceeds " << config.max_divergence_rate << "; ";
  }
  if (config.max_rhat > 0.0 && res.summary.max_rhat > config.max_rhat) {
    msg << "max R-hat " << res.summary.max_rhat << " exceeds " << config.max_rhat << "; ";
  }
  if (min_ebfmi < config.min_ebfmi) msg << "E-BFMI " << min_ebfmi << " below " << config.min_ebfmi << "; ";
  res.diagnostics_message = msg.str();
  res.diagnostics_ok = res.diagnostics_message.empty();

  if (write_bundle) {
    const fs::path& out = config.output_dir;
    fs::create_directories(out);
    Json cfg;
    cfg["name"] = config.name;
    cfg["model"] = config.model;
    cfg["data"] = config.data;
    cfg["prior"] = config.prior;
    cfg["sampler"] = {{"chains", config.sampler.chains},
                      {"warmup", config.sampler.warmup},
                      {"samples", config.sampler.samples},
                      {"seed", config.sampler.seed},
                      {"target_accept", config.sampler.target_accept},
                      {"max_depth", config.sampler.max_depth},
                      {"metric", config.sampler.dense_metric ? "dense" : "diagonal"}};
    cfg["summary"] = {{"alpha", config.alpha}};
    cfg["schema_version"] = 1;
    write_text(out / "config.json", cfg.dump(2));
    for (std::size_t c = 0; c < res.chains.size(); ++c) {
      write_samples(out / ("samples_chain" + std::to_string(c) + ".csv"), res.chains[c].records);
    }
    write_text(out / "summary.json", summary_to_json(res.summary));
    write_text(out / "diagnostics.json", diagnostics_json(res.chains, res.summary, &res).dump(2));
    if (data.truth.size() > 0) write_csv((out / "truth.csv").string(), {"theta"}, data.truth);
    std::ofstream metrics(out / "metrics.csv");
    metrics << "schema_version,fpr,fnr,region_count,max_rhat,min_ess,divergences,seconds\n";
    metrics << 1 << ',' << (res.has_truth ? format_number(res.metrics.fpr) : "") << ','
            << (res.has_truth ? format_number(res.metrics.fnr) : "") << ',' << res.summary.region_count << ','
            << format_number(res.summary.max_rhat) << ',' << format_number(res.summary.min_ess) << ',' << divergences
            << ',' << format_number(res.seconds) << '\n';
  }
  return res;
}

PosteriorSummary summarize_bundle(const fs::path& bundle) {
  const Json cfg = read_json_file(bundle / "config.json");
  const std::string model = cfg.value("model", "");
  find_model(model);
  std::vector<ChainResult> chains;
  for (int c = 0;; ++c) {
    const fs::path f = bundle / ("samples_chain" + std::to_string(c) + ".csv");
    if (!fs::exists(f)) break;
    ChainResult cr;
    cr.records = read_samples(f);
    chains.push_back(std::move(cr));
  }
  if (chains.empty()) throw InputError(bundle.string() + ": no samples_chain*.csv files");
  if (fs::exists(bundle / "diagnostics.json")) {
    const Json diag = read_json_file(bundle / "diagnostics.json");
    const auto& list = diag.at("chains");
    for (std::size_t c = 0; c < chains.size() && c < list.size(); ++c) {
      auto& d = chains[c].diagnostics;
      d.step_size = list[c].value("step_size", 0.0);
      d.divergences = list[c].value("divergences", 0);
      d.mean_accept_stat = list[c].value("mean_accept_stat", 0.0);
      d.ebfmi = list[c].value("ebfmi", 0.0);
      d.seconds = list[c].value("seconds", 0.0);
    }
  }
  const double alpha = cfg.contains("summary") ? cfg["summary"].value("alpha", 0.05) : 0.05;
  const CountFunctional count = model_count(model);
  Index max_count = 0;
  for (const auto& c : chains) {
    for (const auto& r : c.records) max_count = std::max(max_count, count(r));
  }
  if (model == "regression") max_count = chains.front().records.front().theta.size();
  if (model == "mixture") max_count = cfg["prior"].value("k1", 10);
  return summarize(chains, alpha, count, max_count);
}

SelectionMetrics bundle_metrics(const fs::path& bundle, const fs::path& truth_csv) {
  const Json summary = read_json_file(bundle / "summary.json");
  const auto& fm = summary.at("frechet_mean");
  Vector est(static_cast<Index>(fm.size()));
  for (std::size_t i = 0; i < fm.size(); ++i) est[static_cast<Index>(i)] = fm[i].get<double>();
  const CsvTable t = read_csv(truth_csv.string());
  auto it = std::find(t.header.begin(), t.header.end(), "theta");
  if (it == t.header.end()) throw InputError(truth_csv.string() + ": missing column 'theta'");
  return compute_selection_metrics(est, t.values.col(std::distance(t.header.begin(), it)));
}

}  // namespace l1ball
