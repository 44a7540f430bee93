#include "cli_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "noisyglm/csv.hpp"
#include "noisyglm/experiments.hpp"
#include "noisyglm/inference.hpp"
#include "noisyglm/losses.hpp"
#include "noisyglm/optim.hpp"
#include "noisyglm/simgen.hpp"

namespace noisyglm::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::system_clock;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error("sha256 initialisation failed");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 15];
  }
  return out;
}

namespace {

std::string utc_timestamp(Clock::time_point t) {
  const std::time_t tt = Clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what goes into manifest.json while a command runs.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(Clock::now()) {}

  json config = json::object();
  json results = json::object();
  std::optional<std::uint64_t> seed;

  void add_input(const std::string& role, const std::string& path) {
    inputs_.push_back({{"role", role}, {"path", path}, {"sha256", sha256_file(path)}});
  }

  void write(const fs::path& dir) const {
    const auto end = Clock::now();
    json m;
    m["schema"] = kSchema;
    m["command"] = command_;
    m["version"] = NOISYGLM_VERSION;
    m["rng"] = Rng::algorithm;
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["config"] = config;
    m["inputs"] = inputs_;
    m["results"] = results;
    m["started_at"] = utc_timestamp(start_);
    m["finished_at"] = utc_timestamp(end);
    m["wall_seconds"] = std::chrono::duration<double>(end - start_).count();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  }

 private:
  std::string command_;
  Clock::time_point start_;
  json inputs_ = json::array();
};

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw InputError("an output directory is required");
  fs::create_directories(dir);
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

csv::Table load_table(const std::string& path) {
  if (!fs::exists(path)) throw InputError("no such file: " + path);
  return csv::read_file(path);
}

std::size_t require_column(const csv::Table& t, const std::string& name, const std::string& file) {
  const auto c = t.column(name);
  if (!c) throw InputError("column '" + name + "' not found in " + file);
  return *c;
}

NoiseModel resolve_noise(const NoiseFlags& f, json& cfg) {
  const bool pu = f.pu_pi || f.pu_nl || f.pu_nu;
  if (pu) {
    if (f.rho0 || f.rho1) throw InputError("--rho0/--rho1 cannot be combined with --pu-* flags");
    if (!(f.pu_pi && f.pu_nl && f.pu_nu))
      throw InputError("--pu-pi, --pu-nl and --pu-nu must be given together");
    const PuSpec spec{*f.pu_pi, *f.pu_nl, *f.pu_nu};
    const NoiseModel nm = pu_noise_rates(spec);
    cfg["pu"] = {{"pi", spec.pi},
                 {"n_labeled", spec.n_labeled},
                 {"n_unlabeled", spec.n_unlabeled},
                 {"gamma", case_control_gamma(spec)}};
    cfg["rho0"] = nm.rho0();
    cfg["rho1"] = nm.rho1();
    return nm;
  }
  const NoiseModel nm(f.rho0.value_or(0.0), f.rho1.value_or(0.0));
  cfg["rho0"] = nm.rho0();
  cfg["rho1"] = nm.rho1();
  return nm;
}

// Rejects a rank-deficient design with the offending columns named.
void check_full_rank(const Matrix& X, const std::vector<std::string>& names) {
  const IndexSet dep = dependent_columns(X);
  if (dep.empty()) return;
  std::string msg = "design is rank deficient; dependent columns:";
  for (const auto j : dep) msg += " " + names[static_cast<std::size_t>(j)];
  throw InputError(msg);
}

std::string rank_message(const RankDeficientError& e, const std::vector<std::string>& names) {
  if (e.columns().empty()) return e.what();
  std::string msg = std::string(e.what()) + " (columns:";
  for (const auto j : e.columns())
    msg += " " + (j >= 0 && static_cast<std::size_t>(j) < names.size()
                      ? names[static_cast<std::size_t>(j)]
                      : std::to_string(j));
  return msg + ")";
}

struct Design {
  Matrix X;
  std::vector<std::string> names;
};

// Numeric block of `names`; the intercept name yields a column of ones when
// the table has no column of that name.
Design select_columns(const csv::Table& t, const std::vector<std::string>& names,
                      const std::string& file) {
  Design d;
  d.names = names;
  d.X.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto col = t.column(names[k]);
    if (!col && names[k] == kInterceptName) {
      d.X.col(static_cast<Eigen::Index>(k)).setOnes();
      continue;
    }
    if (!col) throw InputError("column '" + names[k] + "' not found in " + file);
    d.X.col(static_cast<Eigen::Index>(k)) = csv::numeric_columns(t, {*col});
  }
  return d;
}

void write_coefficients(const fs::path& path, const std::vector<std::string>& names,
                        const Vector& beta) {
  auto out = open_out(path);
  csv::write_row(out, {"name", "estimate"});
  for (std::size_t k = 0; k < names.size(); ++k)
    csv::write_row(out, {names[k], csv::format(beta[static_cast<Eigen::Index>(k)])});
}

std::pair<std::vector<std::string>, Vector> read_coefficients(const std::string& path) {
  const csv::Table t = load_table(path);
  const auto name_col = require_column(t, "name", path);
  const auto est_col = require_column(t, "estimate", path);
  std::vector<std::string> names;
  Vector beta(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    names.push_back(t.rows[i][name_col]);
    beta[static_cast<Eigen::Index>(i)] = csv::parse(t.rows[i][est_col], path);
  }
  return {names, beta};
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw InputError("no manifest.json in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace

int cmd_fit(const FitOptions& opt) {
  Manifest man("fit");
  man.seed = opt.seed;
  const csv::Table t = load_table(opt.data);
  man.add_input("data", opt.data);
  const std::size_t label_col = require_column(t, opt.label, opt.data);

  std::vector<std::string> features = opt.features;
  if (features.empty())
    for (std::size_t k = 0; k < t.header.size(); ++k)
      if (k != label_col) features.push_back(t.header[k]);
  if (features.empty()) throw InputError("no feature columns in " + opt.data);
  for (const auto& f : features) {
    if (f == opt.label) throw InputError("label column '" + f + "' listed as a feature");
    require_column(t, f, opt.data);
  }

  std::vector<std::string> names;
  if (opt.intercept) names.push_back(kInterceptName);
  names.insert(names.end(), features.begin(), features.end());
  const Design design = select_columns(t, names, opt.data);

  Dataset data;
  data.X = design.X;
  data.z = csv::numeric_columns(t, {label_col});
  if (opt.intercept) data.intercept_col = 0;
  data.validate();

  json& cfg = man.config;
  const NoiseModel nm = resolve_noise(opt.noise, cfg);
  FitConfig fc;
  fc.loss_kind = loss_kind_from_string(opt.loss);
  fc.radius = opt.radius;
  fc.max_iter = opt.max_iter;
  for (const auto& u : opt.unpenalized) {
    const auto it = std::find(names.begin(), names.end(), u);
    if (it == names.end()) throw InputError("unpenalized column '" + u + "' is not a feature");
    fc.unpenalized.push_back(it - names.begin());
  }
  if (opt.lambda && opt.cv) throw InputError("--lambda and --cv are mutually exclusive");
  fc.lambda = opt.lambda.value_or(0.0);
  fc.validate();
  if (fc.lambda == 0.0 && !opt.cv) {
    if (data.n() <= data.p())
      throw InputError("an unpenalized fit needs more rows than columns; pass --lambda or --cv");
    check_full_rank(data.X, names);
  }

  const fs::path out = prepare_out_dir(opt.out_dir);
  if (opt.cv) {
    // Folds are taken over a seeded row permutation.
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(data.n()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Eigen::Index>(i);
    Rng rng(derive_seed(opt.seed, 5));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i))]);
    const Dataset shuffled = data.subset(perm);
    const Vector grid =
        lambda_grid(lambda_max(data, nm, fc.loss_kind, fc.unpenalized), 50, 1e-3);
    const CvResult cv = cv_select_lambda(shuffled, nm, fc, opt.folds, grid);
    fc.lambda = cv.lambda;
    auto cv_out = open_out(out / "cv.csv");
    csv::write_row(cv_out, {"lambda", "cv_mean", "cv_se"});
    for (Eigen::Index k = 0; k < grid.size(); ++k)
      csv::write_row(cv_out, {csv::format(grid[k]), csv::format(cv.cv_curve[k]),
                              csv::format(cv.cv_se[k])});
  }
  const FitResult r = fit(data, nm, fc);

  write_coefficients(out / "coefficients.csv", names, r.beta);
  {
    auto tr = open_out(out / "trace.csv");
    csv::write_row(tr, {"iteration", "objective"});
    for (std::size_t k = 0; k < r.objective_trace.size(); ++k)
      csv::write_row(tr, {std::to_string(k), csv::format(r.objective_trace[k])});
  }
  {
    // The design as fitted, for later inference.
    auto ds = open_out(out / "design.csv");
    std::vector<std::string> header = names;
    header.push_back(opt.label);
    csv::write_row(ds, header);
    std::vector<std::string> row(header.size());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      for (Eigen::Index j = 0; j < data.p(); ++j)
        row[static_cast<std::size_t>(j)] = csv::format(data.X(i, j));
      row.back() = csv::format(data.z[i]);
      csv::write_row(ds, row);
    }
  }

  cfg["data"] = opt.data;
  cfg["label"] = opt.label;
  cfg["features"] = features;
  cfg["intercept"] = opt.intercept;
  cfg["loss"] = to_string(fc.loss_kind);
  cfg["lambda_rule"] = opt.cv ? "cv" : "fixed";
  cfg["lambda"] = fc.lambda;
  cfg["folds"] = opt.cv ? json(opt.folds) : json(nullptr);
  cfg["radius"] = opt.radius ? json(*opt.radius) : json(nullptr);
  cfg["unpenalized"] = opt.unpenalized;
  cfg["max_iter"] = opt.max_iter;
  man.results = {{"termination", to_string(r.termination)},
                 {"iterations", r.iterations},
                 {"objective", r.objective_trace.empty() ? 0.0 : r.objective_trace.back()},
                 {"gradmap_norm", r.gradmap_norm},
                 {"radius", r.radius},
                 {"active_set_size", r.active_set.size()},
                 {"train_auc", observed_auc(data.X * r.beta, data.z)}};
  man.write(out);

  if (!r.converged()) {
    std::cerr << "noisyglm: warning: solver stopped without converging (" << to_string(r.termination)
              << " after " << r.iterations << " iterations)\n";
    return kExitMaxIter;
  }
  return kExitOk;
}

int cmd_infer(const InferOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw InputError("--alpha must lie in (0, 1)");
  const fs::path fit_dir(opt.fit_dir);
  const json fm = read_manifest(fit_dir);
  if (fm.value("schema", "") != kSchema || fm.value("command", "") != "fit")
    throw InputError(fit_dir.string() + " is not a noisyglm fit directory");

  Manifest man("infer");
  const std::string design_path = (fit_dir / "design.csv").string();
  const std::string coef_path = (fit_dir / "coefficients.csv").string();
  const json& fcfg = fm.at("config");
  const std::string label = fcfg.at("label").get<std::string>();

  const csv::Table t = load_table(design_path);
  man.add_input("design", design_path);
  man.add_input("coefficients", coef_path);
  man.add_input("fit_manifest", (fit_dir / "manifest.json").string());
  auto [names, beta] = read_coefficients(coef_path);
  const std::size_t label_col = require_column(t, label, design_path);
  if (names.size() + 1 != t.header.size())
    throw InputError("coefficients have " + std::to_string(names.size()) +
                     " entries but the stored design has " +
                     std::to_string(t.header.size() - 1) + " columns");
  for (const auto& nme : names) require_column(t, nme, design_path);

  Dataset data;
  data.X = select_columns(t, names, design_path).X;
  data.z = csv::numeric_columns(t, {label_col});
  if (fcfg.at("intercept").get<bool>()) data.intercept_col = 0;
  data.validate();

  const NoiseModel nm(fcfg.at("rho0").get<double>(), fcfg.at("rho1").get<double>());
  const LossKind kind = loss_kind_from_string(fcfg.at("loss").get<std::string>());
  const double lambda = fcfg.at("lambda").get<double>();
  const PsiSpec psi = PsiSpec::for_loss(kind, nm);

  Vector debiased, se, lo, hi;
  std::vector<ThetaColumnStats> diag;
  std::string method;
  try {
    if (lambda == 0.0) {
      // Unpenalized: one-step correction with the exact inverse, Wald intervals.
      method = "wald";
      const Matrix theta = inverse_jacobian_theta(data.X, beta, psi);
      debiased = debias(data, beta, psi, theta, opt.alpha).beta_db;
      const WaldReport w = wald_intervals(data.X, beta, nm, kind, opt.alpha);
      se = w.se;
      lo = w.ci_low;
      hi = w.ci_high;
      diag.resize(names.size());
      for (std::size_t j = 0; j < names.size(); ++j)
        diag[j].l1_norm = theta.row(static_cast<Eigen::Index>(j)).lpNorm<1>();
    } else {
      method = "debiased";
      const ThetaEstimate th = nodewise_theta(data.X, beta, psi);
      const DebiasReport r = debias(data, beta, psi, th.theta, opt.alpha);
      debiased = r.beta_db;
      se = r.se;
      lo = r.ci_low;
      hi = r.ci_high;
      diag = th.diag;
    }
  } catch (const RankDeficientError& e) {
    throw InputError(rank_message(e, names));
  }

  const fs::path out = prepare_out_dir(opt.out_dir.empty() ? (fit_dir / "inference").string()
                                                           : opt.out_dir);
  if (fs::equivalent(out, fit_dir))
    throw InputError("inference output must not overwrite the fit directory");
  {
    auto f = open_out(out / "inference.csv");
    csv::write_row(f, {"name", "estimate", "debiased", "se", "ci_low", "ci_high"});
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto k = static_cast<Eigen::Index>(j);
      csv::write_row(f, {names[j], csv::format(beta[k]), csv::format(debiased[k]),
                         csv::format(se[k]), csv::format(lo[k]), csv::format(hi[k])});
    }
  }
  {
    auto f = open_out(out / "theta.csv");
    csv::write_row(f, {"name", "tau2", "kkt_residual", "l1_norm", "lambda"});
    for (std::size_t j = 0; j < names.size(); ++j)
      csv::write_row(f, {names[j], csv::format(diag[j].tau2), csv::format(diag[j].kkt_residual),
                         csv::format(diag[j].l1_norm), csv::format(diag[j].lambda)});
  }
  man.config = {{"fit_dir", opt.fit_dir}, {"alpha", opt.alpha}, {"method", method},
                {"loss", to_string(kind)},  {"lambda", lambda},  {"rho0", nm.rho0()},
                {"rho1", nm.rho1()}};
  man.seed = fm.at("seed").is_null() ? std::nullopt
                                     : std::optional<std::uint64_t>(fm.at("seed").get<std::uint64_t>());
  man.write(out);
  return kExitOk;
}

int cmd_gap(const GapOptions& opt) {
  Manifest man("gap");
  const csv::Table t = load_table(opt.design);
  man.add_input("design", opt.design);
  man.add_input("beta", opt.beta);
  auto [names, beta] = read_coefficients(opt.beta);
  if (names.empty()) throw InputError(opt.beta + " has no coefficients");
  const Design d = select_columns(t, names, opt.design);
  if (!d.X.allFinite()) throw InputError("design has non-finite entries");
  const NoiseModel nm = resolve_noise(opt.noise, man.config);

  InfoPair info;
  Cor1Check bound;
  try {
    info = info_matrices(d.X, beta, nm);
    bound = cor1_bound_check(d.X, beta, nm);
  } catch (const RankDeficientError& e) {
    throw InputError(rank_message(e, names));
  }

  const fs::path out = prepare_out_dir(opt.out_dir);
  auto f = open_out(out / "gap.csv");
  csv::write_row(f, {"metric", "value"});
  const std::pair<const char*, double> metrics[] = {
      {"gap", info.gap},
      {"gap2", info.gap * info.gap},
      {"rd", info.rel_l2_diff},
      {"amse_lik", info.amse_lik},
      {"amse_sur", info.amse_sur},
      {"bound_rhs", bound.rhs},
      {"bound_constant", bound.c_n}};
  for (const auto& [k, v] : metrics) csv::write_row(f, {k, csv::format(v)});
  man.config["columns"] = names;
  man.results = {{"gap", info.gap}, {"rd", info.rel_l2_diff}, {"bound_holds", bound.holds()}};
  man.write(out);
  return kExitOk;
}

int cmd_study(const StudyOptions& opt) {
  Manifest man("study");
  std::ifstream in(opt.config);
  if (!in) throw InputError("cannot open " + opt.config);
  man.add_input("config", opt.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed study config: " + std::string(e.what()));
  }
  StudySpec spec = study_spec_from_json(j);
  if (opt.seed) spec.seed = *opt.seed;
  if (opt.replications) spec.replications = *opt.replications;
  if (opt.threads) spec.threads = *opt.threads;
  spec.validate();

  const fs::path out = prepare_out_dir(opt.out_dir);
  StudyResult r;
  try {
    r = run_study(spec);
  } catch (const RankDeficientError& e) {
    throw InputError(rank_message(e, {}));
  }
  {
    auto f = open_out(out / "results.csv");
    f << r.to_csv();
  }
  if (spec.study == StudyKind::coverage) {
    auto f = open_out(out / "coverage_table.csv");
    f << r.coverage_csv();
  }
  man.seed = spec.seed;
  man.config = to_json(spec);
  man.results = {{"threads_used", r.threads_used}, {"study_seconds", r.wall_seconds}};
  man.write(out);
  return kExitOk;
}

}  // namespace noisyglm::cli
