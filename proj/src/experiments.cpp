#include "noisyglm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "noisyglm/csv.hpp"
#include "noisyglm/inference.hpp"
#include "noisyglm/losses.hpp"
#include "noisyglm/optim.hpp"
#include "noisyglm/simgen.hpp"

namespace noisyglm {

std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::efficiency_vs_gap: return "efficiency_vs_gap";
    case StudyKind::noise_rates: return "noise_rates";
    case StudyKind::estimation_error: return "estimation_error";
    case StudyKind::sparsity_ratio: return "sparsity_ratio";
    case StudyKind::coverage: return "coverage";
  }
  return "unknown";
}

StudyKind study_kind_from_string(const std::string& s) {
  for (auto k : {StudyKind::efficiency_vs_gap, StudyKind::noise_rates,
                 StudyKind::estimation_error, StudyKind::sparsity_ratio,
                 StudyKind::coverage})
    if (s == to_string(k)) return k;
  throw DomainError("unknown study kind '" + s + "'");
}

std::string to_string(LambdaRule r) {
  switch (r) {
    case LambdaRule::cv: return "cv";
    case LambdaRule::theory: return "theory";
    case LambdaRule::test_set: return "test_set";
  }
  return "unknown";
}

LambdaRule lambda_rule_from_string(const std::string& s) {
  if (s == "cv") return LambdaRule::cv;
  if (s == "theory") return LambdaRule::theory;
  if (s == "test_set") return LambdaRule::test_set;
  throw DomainError("unknown lambda rule '" + s + "' (expected cv, theory, test_set)");
}

StudySpec StudySpec::defaults(StudyKind kind) {
  StudySpec s;
  s.study = kind;
  switch (kind) {
    case StudyKind::efficiency_vs_gap:
      s.n = 1000;
      s.p = 10;
      s.d_squared_grid = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
      s.replications = 200;
      s.radius = 5.0;
      break;
    case StudyKind::noise_rates:
      s.n = 1000;
      s.p = 10;
      s.d = 2.0 / std::sqrt(10.0);
      s.noise_grid = {{0.05, 0.05}, {0.10, 0.05}, {0.15, 0.05}, {0.20, 0.05}};
      s.replications = 200;
      s.radius = 5.0;
      break;
    case StudyKind::estimation_error:
      s.p = 10;
      s.s = 10;
      s.n_grid = {1000, 1500, 2200, 3300, 5000};
      s.replications = 300;
      s.lambda_rule = LambdaRule::cv;
      break;
    case StudyKind::sparsity_ratio:
      s.n = 2000;
      s.p = 20;
      s.d = 3.0 / std::sqrt(20.0);
      for (Eigen::Index k = 1; k <= 20; ++k) s.sparsity_grid.push_back(k);
      s.replications = 200;
      s.lambda_rule = LambdaRule::test_set;
      s.lambda_grid_size = 30;
      break;
    case StudyKind::coverage:
      s.n = 2000;
      s.p = 20;
      s.s = 10;
      s.replications = 100;
      s.lambda_rule = LambdaRule::cv;
      break;
  }
  return s;
}

void StudySpec::validate() const {
  if (replications < 1) throw DomainError("replications must be >= 1");
  if (n < 1 || p < 1) throw DomainError("n and p must be >= 1");
  if (s < 0) throw DomainError("s must be nonnegative");
  NoiseModel(noise.rho0, noise.rho1);
  for (const auto& np : noise_grid) NoiseModel(np.rho0, np.rho1);
  if (!(ar1_rho > -1.0 && ar1_rho < 1.0)) throw DomainError("ar1_rho must lie in (-1, 1)");
  if (!(target_var > 0.0)) throw DomainError("target_var must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  if (folds < 2) throw DomainError("folds must be >= 2");
  if (lambda_grid_size < 1) throw DomainError("lambda_grid_size must be >= 1");
  if (!(lambda_grid_ratio > 0.0 && lambda_grid_ratio <= 1.0))
    throw DomainError("lambda_grid_ratio must lie in (0, 1]");
  if (!(lambda_scale > 0.0)) throw DomainError("lambda_scale must be positive");
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");
  if (tol_gradmap && !(*tol_gradmap > 0.0)) throw DomainError("tol_gradmap must be positive");
  if (d && !std::isfinite(*d)) throw DomainError("d must be finite");
  if (radius && !(*radius > 0.0)) throw DomainError("radius must be positive");
  switch (study) {
    case StudyKind::efficiency_vs_gap:
      if (d_squared_grid.empty()) throw DomainError("d_squared_grid must be nonempty");
      for (double v : d_squared_grid)
        if (!(v >= 0.0)) throw DomainError("d_squared_grid values must be >= 0");
      break;
    case StudyKind::noise_rates:
      if (noise_grid.empty()) throw DomainError("noise_grid must be nonempty");
      break;
    case StudyKind::estimation_error:
      if (n_grid.empty()) throw DomainError("n_grid must be nonempty");
      for (auto v : n_grid) {
        if (v < 2) throw DomainError("n_grid values must be >= 2");
        if (s > (p_equals_n ? v : p)) throw DomainError("s exceeds p");
      }
      break;
    case StudyKind::sparsity_ratio:
      if (sparsity_grid.empty()) throw DomainError("sparsity_grid must be nonempty");
      for (auto v : sparsity_grid)
        if (v < 1 || v > p) throw DomainError("sparsity_grid values must lie in [1, p]");
      break;
    case StudyKind::coverage:
      if (s > p) throw DomainError("s exceeds p");
      break;
  }
}

nlohmann::json to_json(const StudySpec& s) {
  nlohmann::json j;
  j["study"] = to_string(s.study);
  j["n"] = s.n;
  j["p"] = s.p;
  j["s"] = s.s;
  j["noise"] = {s.noise.rho0, s.noise.rho1};
  j["noise_grid"] = nlohmann::json::array();
  for (const auto& np : s.noise_grid) j["noise_grid"].push_back({np.rho0, np.rho1});
  j["d_squared_grid"] = s.d_squared_grid;
  j["n_grid"] = s.n_grid;
  j["sparsity_grid"] = s.sparsity_grid;
  j["p_equals_n"] = s.p_equals_n;
  j["high_dim"] = s.high_dim;
  j["d"] = s.d ? nlohmann::json(*s.d) : nlohmann::json(nullptr);
  j["radius"] = s.radius ? nlohmann::json(*s.radius) : nlohmann::json(nullptr);
  j["ar1_rho"] = s.ar1_rho;
  j["target_var"] = s.target_var;
  j["replications"] = s.replications;
  j["seed"] = s.seed;
  j["lambda_rule"] = to_string(s.lambda_rule);
  j["lambda_scale"] = s.lambda_scale;
  j["folds"] = s.folds;
  j["lambda_grid_size"] = s.lambda_grid_size;
  j["lambda_grid_ratio"] = s.lambda_grid_ratio;
  j["alpha"] = s.alpha;
  j["max_iter"] = s.max_iter;
  j["tol_gradmap"] = s.tol_gradmap ? nlohmann::json(*s.tol_gradmap) : nlohmann::json(nullptr);
  j["tol_obj"] = s.tol_obj;
  j["threads"] = s.threads;
  return j;
}

namespace {

NoisePair noise_pair_from_json(const nlohmann::json& v) {
  if (!v.is_array() || v.size() != 2)
    throw DomainError("noise pairs must be [rho0, rho1] arrays");
  return NoisePair{v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

StudySpec study_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DomainError("study config must be a JSON object");
  if (!j.contains("study")) throw DomainError("study config needs a 'study' key");
  StudySpec s = StudySpec::defaults(study_kind_from_string(j.at("study").get<std::string>()));
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "study") continue;
      else if (key == "n") s.n = v.get<Eigen::Index>();
      else if (key == "p") s.p = v.get<Eigen::Index>();
      else if (key == "s") s.s = v.get<Eigen::Index>();
      else if (key == "noise") s.noise = noise_pair_from_json(v);
      else if (key == "noise_grid") {
        s.noise_grid.clear();
        for (const auto& e : v) s.noise_grid.push_back(noise_pair_from_json(e));
      }
      else if (key == "d_squared_grid") s.d_squared_grid = v.get<std::vector<double>>();
      else if (key == "n_grid") s.n_grid = v.get<std::vector<Eigen::Index>>();
      else if (key == "sparsity_grid") s.sparsity_grid = v.get<std::vector<Eigen::Index>>();
      else if (key == "p_equals_n") s.p_equals_n = v.get<bool>();
      else if (key == "high_dim") s.high_dim = v.get<bool>();
      else if (key == "d") s.d = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "radius")
        s.radius = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "ar1_rho") s.ar1_rho = v.get<double>();
      else if (key == "target_var") s.target_var = v.get<double>();
      else if (key == "replications") s.replications = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "lambda_rule") s.lambda_rule = lambda_rule_from_string(v.get<std::string>());
      else if (key == "lambda_scale") s.lambda_scale = v.get<double>();
      else if (key == "folds") s.folds = v.get<int>();
      else if (key == "lambda_grid_size") s.lambda_grid_size = v.get<int>();
      else if (key == "lambda_grid_ratio") s.lambda_grid_ratio = v.get<double>();
      else if (key == "alpha") s.alpha = v.get<double>();
      else if (key == "max_iter") s.max_iter = v.get<int>();
      else if (key == "tol_gradmap")
        s.tol_gradmap = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "tol_obj") s.tol_obj = v.get<double>();
      else if (key == "threads") s.threads = v.get<int>();
      else throw DomainError("unknown study config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("study config: ") + e.what());
  }
  s.validate();
  return s;
}

std::string StudyResult::to_csv() const {
  std::ostringstream os;
  csv::write_row(os, {"study", "grid_index", "grid_label", "grid_value", "metric", "mean",
                      "stderr", "median", "B", "failed"});
  const std::string study = to_string(spec.study);
  for (const auto& r : rows)
    csv::write_row(os, {study, std::to_string(r.grid_index), r.grid_label,
                        csv::format(r.grid_value), r.metric, csv::format(r.mean),
                        csv::format(r.std_err), csv::format(r.median),
                        std::to_string(r.B), std::to_string(r.failed)});
  return os.str();
}

std::string StudyResult::coverage_csv() const {
  std::ostringstream os;
  csv::write_row(os, {"method", "coverage_all", "coverage_nzero", "coverage_zero", "ci_length"});
  for (const auto& c : coverage)
    csv::write_row(os, {c.method, csv::format(c.coverage_all), csv::format(c.coverage_nzero),
                        csv::format(c.coverage_zero), csv::format(c.ci_length)});
  return os.str();
}

const StudyRow* StudyResult::find(const std::string& metric, std::size_t grid_index) const {
  for (const auto& r : rows)
    if (r.metric == metric && r.grid_index == grid_index) return &r;
  return nullptr;
}

std::vector<StudyRow> StudyResult::series(const std::string& metric) const {
  std::vector<StudyRow> out;
  for (const auto& r : rows)
    if (r.metric == metric) out.push_back(r);
  std::sort(out.begin(), out.end(),
            [](const StudyRow& a, const StudyRow& b) { return a.grid_index < b.grid_index; });
  return out;
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested
                        : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("NOISYGLM_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<long>(n, cap);
  }
  return std::max(1, n);
}

namespace {

// ---------------------------------------------------------------------------
// Per-replication building blocks.

struct GridPoint {
  std::string label;
  double value = 0.0;
  NoisePair noise;
  double d = 0.0;
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index s = 0;
};

struct RatioDef {
  std::string name;
  std::string num;
  std::string den;
};

struct Outcome {
  bool failed = false;
  std::vector<double> values;  // aligned with the plan's metric list
};

struct Plan {
  std::vector<GridPoint> grid;
  std::vector<std::string> metrics;
  std::vector<RatioDef> ratios;
  std::function<std::vector<double>(const GridPoint&, std::uint64_t)> run;
};

struct FitFailure : Error {
  using Error::Error;
};

Vector beta_dense_unit(Eigen::Index p) {
  return Vector::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));
}

// (+1 x ceil(s/2), -1 x floor(s/2), 0, ...)
Vector beta_signed(Eigen::Index p, Eigen::Index s) {
  Vector b = Vector::Zero(p);
  const Eigen::Index pos = (s + 1) / 2;
  for (Eigen::Index j = 0; j < s; ++j) b[j] = j < pos ? 1.0 : -1.0;
  return b;
}

Vector beta_sparse_unit(Eigen::Index p, Eigen::Index s) {
  Vector b = Vector::Zero(p);
  b.head(s).setConstant(1.0 / std::sqrt(static_cast<double>(s)));
  return b;
}

// Design, clean labels, and noisy labels from independent streams.
Dataset simulate(const DesignSpec& design_base, const Vector& beta0, const NoiseModel& nm,
                 std::uint64_t seed) {
  DesignSpec design = design_base;
  design.seed = derive_seed(seed, 1);
  Dataset data;
  data.X = gen_design(design);
  const Vector y = gen_labels(data.X, beta0, derive_seed(seed, 2));
  data.z = flip_labels(y, nm, derive_seed(seed, 3));
  data.y = y;
  return data;
}

DesignSpec mixture_design(const StudySpec& spec, Eigen::Index n, Eigen::Index p, double d) {
  DesignSpec ds;
  ds.kind = DesignKind::gaussian_mixture;
  ds.n = n;
  ds.p = p;
  ds.d = d;
  ds.cov = Ar1Cov{spec.ar1_rho, 1.0};
  return ds;
}

DesignSpec scaled_gaussian_design(const StudySpec& spec, Eigen::Index n, const Vector& beta0) {
  DesignSpec ds;
  ds.kind = DesignKind::gaussian;
  ds.n = n;
  ds.p = beta0.size();
  ds.cov = scale_covariance_for_signal(Ar1Cov{spec.ar1_rho, 1.0}, beta0, spec.target_var);
  return ds;
}

FitConfig base_config(const StudySpec& spec, Eigen::Index p, LossKind kind) {
  FitConfig cfg;
  cfg.loss_kind = kind;
  cfg.max_iter = spec.max_iter;
  cfg.tol_obj = spec.tol_obj;
  cfg.tol_gradmap = spec.tol_gradmap.value_or(1e-6 * std::sqrt(static_cast<double>(p)));
  return cfg;
}

FitResult checked_fit(const Dataset& data, const NoiseModel& nm, const FitConfig& cfg) {
  FitResult r = fit(data, nm, cfg);
  if (!r.converged()) throw FitFailure("solver stopped: " + to_string(r.termination));
  return r;
}

// Likelihood ball radius: the configured value, else 100 max(1, ||beta_s||).
double ball_radius(const StudySpec& spec, const Vector& sur_beta) {
  return spec.radius.value_or(100.0 * std::max(1.0, sur_beta.norm()));
}

struct FitPair {
  FitResult lik;
  FitResult sur;
};

// Unpenalized fits; the likelihood starts at the null model.
FitPair fit_unpenalized(const StudySpec& spec, const Dataset& data, const NoiseModel& nm) {
  FitPair out;
  out.sur = checked_fit(data, nm, base_config(spec, data.p(), LossKind::surrogate));
  FitConfig lc = base_config(spec, data.p(), LossKind::likelihood);
  lc.radius = ball_radius(spec, out.sur.beta);
  out.lik = checked_fit(data, nm, lc);
  return out;
}

// Universal-threshold penalty scale * sigma * sqrt(2 log p / n), where sigma
// is the spread of one coordinate of the loss score at beta = 0.
double theory_lambda(const StudySpec& spec, const Dataset& data, const NoiseModel& nm,
                     LossKind kind) {
  const double n = static_cast<double>(data.n());
  const double p = static_cast<double>(data.p());
  Vector deriv;
  loss_value_deriv_eta(kind, Vector::Zero(data.n()), data.z, nm, deriv);
  const double col_ms = data.X.squaredNorm() / (n * p);
  const double sigma = std::sqrt(col_ms * deriv.squaredNorm() / n);
  return spec.lambda_scale * sigma * std::sqrt(2.0 * std::log(std::max(p, 2.0)) / n);
}

// Penalized fits with lambda chosen per loss. The likelihood is started
// from the surrogate estimate at its own lambda.
FitPair fit_penalized(const StudySpec& spec, const Dataset& data, const NoiseModel& nm,
                      const Dataset* test) {
  const Eigen::Index p = data.p();
  FitPair out;
  FitConfig sc = base_config(spec, p, LossKind::surrogate);
  FitConfig lc = base_config(spec, p, LossKind::likelihood);

  switch (spec.lambda_rule) {
    case LambdaRule::theory: {
      sc.lambda = theory_lambda(spec, data, nm, LossKind::surrogate);
      out.sur = checked_fit(data, nm, sc);
      lc.lambda = theory_lambda(spec, data, nm, LossKind::likelihood);
      lc.radius = ball_radius(spec, out.sur.beta);
      lc.warm_start = out.sur.beta;
      out.lik = checked_fit(data, nm, lc);
      break;
    }
    case LambdaRule::cv: {
      const Vector sgrid = lambda_grid(lambda_max(data, nm, LossKind::surrogate),
                                       spec.lambda_grid_size, spec.lambda_grid_ratio);
      sc.lambda = cv_select_lambda(data, nm, sc, spec.folds, sgrid).lambda;
      out.sur = checked_fit(data, nm, sc);

      FitConfig rs = sc;
      rs.lambda = sgrid[sgrid.size() - 1];
      lc.radius = ball_radius(spec, checked_fit(data, nm, rs).beta);
      const Vector lgrid = lambda_grid(lambda_max(data, nm, LossKind::likelihood),
                                       spec.lambda_grid_size, spec.lambda_grid_ratio);
      lc.lambda = cv_select_lambda(data, nm, lc, spec.folds, lgrid).lambda;
      FitConfig ws = sc;
      ws.lambda = lc.lambda;
      lc.warm_start = checked_fit(data, nm, ws).beta;
      out.lik = checked_fit(data, nm, lc);
      break;
    }
    case LambdaRule::test_set: {
      if (!test) throw Error("test_set rule needs a test sample");
      const Vector grid = lambda_grid(lambda_max(data, nm, LossKind::surrogate),
                                      spec.lambda_grid_size, spec.lambda_grid_ratio);
      // Surrogate path with warm starts; the likelihood path starts each
      // lambda from the surrogate solution at that lambda.
      std::vector<Vector> sur_path;
      double best_s = std::numeric_limits<double>::infinity();
      for (Eigen::Index g = 0; g < grid.size(); ++g) {
        sc.lambda = grid[g];
        FitResult r = checked_fit(data, nm, sc);
        sc.warm_start = r.beta;
        const double loss = loss_value_eta(LossKind::surrogate, test->X * r.beta, test->z, nm);
        if (loss <= best_s) {
          best_s = loss;
          out.sur = r;
        }
        sur_path.push_back(r.beta);
      }
      lc.radius = ball_radius(spec, sur_path.back());
      double best_l = std::numeric_limits<double>::infinity();
      for (Eigen::Index g = 0; g < grid.size(); ++g) {
        lc.lambda = grid[g];
        lc.warm_start = sur_path[static_cast<std::size_t>(g)];
        FitResult r = checked_fit(data, nm, lc);
        const double loss = loss_value_eta(LossKind::likelihood, test->X * r.beta, test->z, nm);
        if (loss <= best_l) {
          best_l = loss;
          out.lik = r;
        }
      }
      break;
    }
  }
  return out;
}

// Clean-label reference: logistic regression on y.
FitResult fit_reference(const StudySpec& spec, const Dataset& data, bool penalized) {
  Dataset clean = data;
  clean.z = *data.y;
  const NoiseModel none;
  FitConfig cfg = base_config(spec, data.p(), LossKind::surrogate);
  if (penalized) {
    if (spec.lambda_rule == LambdaRule::cv) {
      const Vector grid = lambda_grid(lambda_max(clean, none, LossKind::surrogate),
                                      spec.lambda_grid_size, spec.lambda_grid_ratio);
      cfg.lambda = cv_select_lambda(clean, none, cfg, spec.folds, grid).lambda;
    } else {
      cfg.lambda = theory_lambda(spec, clean, none, LossKind::surrogate);
    }
  }
  return checked_fit(clean, none, cfg);
}

// ---------------------------------------------------------------------------
// Study plans.

Plan efficiency_plan(const StudySpec& spec) {
  Plan plan;
  const NoiseModel fixed(spec.noise.rho0, spec.noise.rho1);
  if (spec.study == StudyKind::efficiency_vs_gap) {
    for (double d2 : spec.d_squared_grid) {
      std::ostringstream os;
      os << "d2=" << csv::format(d2);
      plan.grid.push_back({os.str(), d2, spec.noise, std::sqrt(d2), spec.n, spec.p, spec.p});
    }
  } else {
    const double d = spec.d.value_or(2.0 / std::sqrt(static_cast<double>(spec.p)));
    for (const auto& np : spec.noise_grid) {
      std::ostringstream os;
      os << "rho0=" << csv::format(np.rho0) << ";rho1=" << csv::format(np.rho1);
      plan.grid.push_back({os.str(), np.rho0, np, d, spec.n, spec.p, spec.p});
    }
  }
  plan.metrics = {"gap", "gap2", "rd", "one_minus_rd", "amse_lik", "amse_sur",
                  "mse_lik", "mse_sur"};
  plan.ratios = {{"r_mse", "mse_lik", "mse_sur"}, {"r_amse", "amse_lik", "amse_sur"}};
  plan.run = [spec](const GridPoint& gp, std::uint64_t seed) {
    const NoiseModel nm(gp.noise.rho0, gp.noise.rho1);
    const Vector beta0 = beta_dense_unit(gp.p);
    const Dataset data = simulate(mixture_design(spec, gp.n, gp.p, gp.d), beta0, nm, seed);
    const InfoPair info = info_matrices(data.X, beta0, nm);
    // The surrogate minimizer need not exist under strong separation; the
    // design metrics are still recorded and the error pair is left missing.
    double mse_lik = std::numeric_limits<double>::quiet_NaN(), mse_sur = mse_lik;
    try {
      const FitPair fits = fit_unpenalized(spec, data, nm);
      mse_lik = (fits.lik.beta - beta0).squaredNorm();
      mse_sur = (fits.sur.beta - beta0).squaredNorm();
    } catch (const FitFailure&) {
    }
    return std::vector<double>{info.gap,
                               info.gap * info.gap,
                               info.rel_l2_diff,
                               1.0 - info.rel_l2_diff,
                               info.amse_lik,
                               info.amse_sur,
                               mse_lik,
                               mse_sur};
  };
  return plan;
}

Plan estimation_plan(const StudySpec& spec) {
  Plan plan;
  for (auto n : spec.n_grid) {
    const Eigen::Index p = spec.p_equals_n ? n : spec.p;
    plan.grid.push_back({"n=" + std::to_string(n), static_cast<double>(n), spec.noise, 0.0,
                         n, p, spec.s});
  }
  const bool penalized = spec.p_equals_n;
  plan.metrics = {"err_lik", "err_sur", "err_ref", "mse_lik", "mse_sur", "mse_ref"};
  if (penalized) {
    plan.metrics.push_back("lambda_lik");
    plan.metrics.push_back("lambda_sur");
  }
  plan.ratios = {{"r_mse", "mse_lik", "mse_sur"}};
  plan.run = [spec, penalized](const GridPoint& gp, std::uint64_t seed) {
    const NoiseModel nm(gp.noise.rho0, gp.noise.rho1);
    const Vector beta0 = beta_signed(gp.p, gp.s);
    const Dataset data = simulate(scaled_gaussian_design(spec, gp.n, beta0), beta0, nm, seed);
    const FitPair fits = penalized ? fit_penalized(spec, data, nm, nullptr)
                                   : fit_unpenalized(spec, data, nm);
    const FitResult ref = fit_reference(spec, data, penalized);
    const double el = (fits.lik.beta - beta0).norm();
    const double es = (fits.sur.beta - beta0).norm();
    const double er = (ref.beta - beta0).norm();
    std::vector<double> v{el, es, er, el * el, es * es, er * er};
    if (penalized) {
      v.push_back(fits.lik.lambda);
      v.push_back(fits.sur.lambda);
    }
    return v;
  };
  return plan;
}

Plan sparsity_plan(const StudySpec& spec) {
  Plan plan;
  const double d = spec.d.value_or(3.0 / std::sqrt(static_cast<double>(spec.p)));
  for (auto s : spec.sparsity_grid)
    plan.grid.push_back({"s=" + std::to_string(s), std::sqrt(static_cast<double>(s)),
                         spec.noise, d, spec.n, spec.p, s});
  plan.metrics = {"mse_lik", "mse_sur", "smse_lik", "smse_sur", "lambda_lik", "lambda_sur"};
  plan.ratios = {{"r_mse", "mse_lik", "mse_sur"}, {"r_smse", "smse_lik", "smse_sur"}};
  plan.run = [spec](const GridPoint& gp, std::uint64_t seed) {
    const NoiseModel nm(gp.noise.rho0, gp.noise.rho1);
    const Vector beta0 = beta_sparse_unit(gp.p, gp.s);
    const DesignSpec design = mixture_design(spec, gp.n, gp.p, gp.d);
    const Dataset data = simulate(design, beta0, nm, seed);
    std::optional<Dataset> test;
    if (spec.lambda_rule == LambdaRule::test_set)
      test = simulate(design, beta0, nm, derive_seed(seed, 4));
    const FitPair dense = fit_unpenalized(spec, data, nm);
    const FitPair sparse = fit_penalized(spec, data, nm, test ? &*test : nullptr);
    return std::vector<double>{(dense.lik.beta - beta0).squaredNorm(),
                               (dense.sur.beta - beta0).squaredNorm(),
                               (sparse.lik.beta - beta0).squaredNorm(),
                               (sparse.sur.beta - beta0).squaredNorm(),
                               sparse.lik.lambda,
                               sparse.sur.lambda};
  };
  return plan;
}

struct CoverageStats {
  double all = 0.0, nzero = 0.0, zero = 0.0, length = 0.0;
};

CoverageStats coverage_stats(const Vector& lo, const Vector& hi, const Vector& beta0) {
  CoverageStats c;
  int n_all = 0, n_nz = 0, n_z = 0;
  double cov_nz = 0.0, cov_z = 0.0;
  for (Eigen::Index j = 0; j < beta0.size(); ++j) {
    const double hit = (lo[j] <= beta0[j] && beta0[j] <= hi[j]) ? 1.0 : 0.0;
    ++n_all;
    c.all += hit;
    c.length += hi[j] - lo[j];
    if (beta0[j] != 0.0) {
      ++n_nz;
      cov_nz += hit;
    } else {
      ++n_z;
      cov_z += hit;
    }
  }
  c.all /= n_all;
  c.length /= n_all;
  c.nzero = n_nz ? cov_nz / n_nz : std::numeric_limits<double>::quiet_NaN();
  c.zero = n_z ? cov_z / n_z : std::numeric_limits<double>::quiet_NaN();
  return c;
}

const std::vector<std::pair<std::string, std::string>>& coverage_methods(bool high_dim) {
  static const std::vector<std::pair<std::string, std::string>> low = {
      {"loglik", "logLik"},
      {"convex", "convex"},
      {"loglik_debiased", "logLik (debiased)"},
      {"convex_debiased", "convex (debiased)"}};
  static const std::vector<std::pair<std::string, std::string>> high = {
      {"loglik_debiased", "logLik (debiased)"}, {"convex_debiased", "convex (debiased)"}};
  return high_dim ? high : low;
}

Plan coverage_plan(const StudySpec& spec) {
  Plan plan;
  std::ostringstream os;
  os << "n=" << spec.n << ";p=" << spec.p << ";s=" << spec.s;
  const double d = spec.d.value_or(3.0 / std::sqrt(static_cast<double>(spec.p)));
  plan.grid.push_back({os.str(), 0.0, spec.noise, d, spec.n, spec.p, spec.s});
  for (const auto& m : coverage_methods(spec.high_dim)) {
    plan.metrics.push_back("coverage_all." + m.first);
    plan.metrics.push_back("coverage_nzero." + m.first);
    plan.metrics.push_back("coverage_zero." + m.first);
    plan.metrics.push_back("ci_length." + m.first);
  }
  plan.run = [spec](const GridPoint& gp, std::uint64_t seed) {
    const NoiseModel nm(gp.noise.rho0, gp.noise.rho1);
    const Vector beta0 = beta_sparse_unit(gp.p, gp.s);
    const Dataset data = simulate(mixture_design(spec, gp.n, gp.p, gp.d), beta0, nm, seed);
    std::vector<double> v;
    const auto push = [&](const Vector& lo, const Vector& hi) {
      const CoverageStats c = coverage_stats(lo, hi, beta0);
      v.insert(v.end(), {c.all, c.nzero, c.zero, c.length});
    };
    if (!spec.high_dim) {
      const FitPair dense = fit_unpenalized(spec, data, nm);
      for (auto [kind, beta] : {std::pair{LossKind::likelihood, &dense.lik.beta},
                                std::pair{LossKind::surrogate, &dense.sur.beta}}) {
        const WaldReport w = wald_intervals(data.X, *beta, nm, kind, spec.alpha);
        push(w.ci_low, w.ci_high);
      }
    }
    const FitPair sparse = fit_penalized(spec, data, nm, nullptr);
    for (auto [kind, beta] : {std::pair{LossKind::likelihood, &sparse.lik.beta},
                              std::pair{LossKind::surrogate, &sparse.sur.beta}}) {
      const PsiSpec psi = PsiSpec::for_loss(kind, nm);
      const Matrix theta = spec.high_dim ? nodewise_theta(data.X, *beta, psi).theta
                                         : inverse_jacobian_theta(data.X, *beta, psi);
      const DebiasReport rep = debias(data, *beta, psi, theta, spec.alpha);
      push(rep.ci_low, rep.ci_high);
    }
    return v;
  };
  return plan;
}

Plan make_plan(const StudySpec& spec) {
  switch (spec.study) {
    case StudyKind::efficiency_vs_gap:
    case StudyKind::noise_rates: return efficiency_plan(spec);
    case StudyKind::estimation_error: return estimation_plan(spec);
    case StudyKind::sparsity_ratio: return sparsity_plan(spec);
    case StudyKind::coverage: return coverage_plan(spec);
  }
  throw DomainError("unknown study kind");
}

// ---------------------------------------------------------------------------
// Aggregation.

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance (B - 1 denominator)
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) {
    m.mean = m.var = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size() - 1);
  }
  return m;
}

double covariance(const std::vector<double>& a, double ma, const std::vector<double>& b,
                  double mb) {
  if (a.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

StudyResult run_study(const StudySpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Plan plan = make_plan(spec);
  const std::size_t G = plan.grid.size();
  const std::size_t B = static_cast<std::size_t>(spec.replications);
  std::vector<Outcome> outcomes(G * B);

  const int workers = std::min<int>(resolve_threads(spec.threads), static_cast<int>(G * B));
  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (std::size_t task = next++; task < G * B; task = next++) {
      const std::size_t g = task / B;
      const std::size_t r = task % B;
      Outcome& out = outcomes[task];
      try {
        out.values = plan.run(plan.grid[g], derive_seed(spec.seed, g, r));
        for (double v : out.values)
          if (std::isinf(v)) throw NumericalError("non-finite metric");
      } catch (const std::exception&) {
        out.failed = true;
        out.values.clear();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  StudyResult res;
  res.spec = spec;
  res.threads_used = std::max(1, workers);
  for (std::size_t g = 0; g < G; ++g) {
    const GridPoint& gp = plan.grid[g];
    int failed = 0;
    std::vector<std::vector<double>> cols(plan.metrics.size());
    for (std::size_t r = 0; r < B; ++r) {
      const Outcome& o = outcomes[g * B + r];
      if (o.failed) {
        ++failed;
        continue;
      }
      for (std::size_t m = 0; m < plan.metrics.size(); ++m) cols[m].push_back(o.values[m]);
    }
    std::vector<Moments> mom(plan.metrics.size());
    for (std::size_t m = 0; m < plan.metrics.size(); ++m) {
      // NaN entries (e.g. coverage over an empty coordinate set) are
      // dropped from that metric only.
      std::vector<double> vals;
      for (double x : cols[m])
        if (!std::isnan(x)) vals.push_back(x);
      mom[m] = moments(vals);
      StudyRow row;
      row.grid_index = g;
      row.grid_label = gp.label;
      row.grid_value = gp.value;
      row.metric = plan.metrics[m];
      row.mean = mom[m].mean;
      row.std_err = vals.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : std::sqrt(mom[m].var / static_cast<double>(vals.size()));
      row.median = median_of(vals);
      row.B = static_cast<int>(vals.size());
      row.failed = failed;
      res.rows.push_back(row);
    }
    for (const auto& rd : plan.ratios) {
      const auto idx = [&](const std::string& name) {
        return static_cast<std::size_t>(
            std::find(plan.metrics.begin(), plan.metrics.end(), name) - plan.metrics.begin());
      };
      const std::size_t a = idx(rd.num), b = idx(rd.den);
      // Replications where both members of the pair are present.
      std::vector<double> va, vb;
      for (std::size_t k = 0; k < cols[a].size(); ++k)
        if (!std::isnan(cols[a][k]) && !std::isnan(cols[b][k])) {
          va.push_back(cols[a][k]);
          vb.push_back(cols[b][k]);
        }
      const int paired = static_cast<int>(va.size());
      const Moments pa = moments(va), pb = moments(vb);
      const double ma = pa.mean, mb = pb.mean;
      const double r = ma / mb;
      // Delta method for a ratio of paired means.
      const double cab = covariance(va, ma, vb, mb);
      const double rel = pa.var / (ma * ma) + pb.var / (mb * mb) - 2.0 * cab / (ma * mb);
      StudyRow row;
      row.grid_index = g;
      row.grid_label = gp.label;
      row.grid_value = gp.value;
      row.metric = rd.name;
      row.mean = r;
      row.std_err = paired > 1 ? std::abs(r) * std::sqrt(std::max(0.0, rel) / paired)
                               : std::numeric_limits<double>::quiet_NaN();
      row.median = std::numeric_limits<double>::quiet_NaN();
      row.B = paired;
      row.failed = failed;
      res.rows.push_back(row);
    }
  }

  if (spec.study == StudyKind::coverage) {
    for (const auto& [key, label] : coverage_methods(spec.high_dim)) {
      CoverageRow c;
      c.method = label;
      c.coverage_all = res.find("coverage_all." + key, 0)->mean;
      c.coverage_nzero = res.find("coverage_nzero." + key, 0)->mean;
      c.coverage_zero = res.find("coverage_zero." + key, 0)->mean;
      c.ci_length = res.find("ci_length." + key, 0)->mean;
      res.coverage.push_back(c);
    }
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

bool check_monotone_gap(const StudyResult& result, const std::string& metric) {
  if (result.spec.study != StudyKind::efficiency_vs_gap &&
      result.spec.study != StudyKind::noise_rates)
    throw DomainError("check_monotone_gap needs an efficiency_vs_gap or noise_rates result");
  const auto s = result.series(metric);
  if (s.empty()) throw DomainError("metric '" + metric + "' not present in result");
  int inversions = 0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const double drop = s[k].mean - s[k + 1].mean;
    if (drop <= 0.0) continue;
    if (drop > std::max(s[k].std_err, s[k + 1].std_err)) return false;
    if (++inversions > 1) return false;
  }
  return true;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw DimensionError("rank_correlation needs two equal-length series of length >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace noisyglm
