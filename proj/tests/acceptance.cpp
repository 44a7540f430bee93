// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "noisyglm/experiments.hpp"
#include "noisyglm/glm_core.hpp"
#include "noisyglm/inference.hpp"
#include "noisyglm/losses.hpp"
#include "noisyglm/optim.hpp"
#include "noisyglm/simgen.hpp"
#include "oracles.hpp"

using namespace noisyglm;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome zero_noise_oracle() {
  const auto t0 = Clock::now();
  oracle::Draws rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Dataset d;
    d.X = rng.normal(500, 5);
    d.z = rng.logistic_labels(d.X, rng.normal_vec(5, 0.5));
    const Vector ref = oracle::irls_logistic(d.X, d.z);
    for (LossKind kind : {LossKind::likelihood, LossKind::surrogate}) {
      FitConfig cfg;
      cfg.loss_kind = kind;
      worst = std::max(worst, (fit(d, NoiseModel{}, cfg).beta - ref).lpNorm<Eigen::Infinity>());
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 5.0, "max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  oracle::Draws rng(102);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const NoiseModel nm(rng.uniform(0, 0.3), rng.uniform(0, 0.3));
    Dataset d;
    d.X = rng.normal(100, 5);
    d.z = rng.noisy_labels(d.X, rng.normal_vec(5, 0.7), nm.rho0(), nm.rho1());
    const Vector beta = rng.normal_vec(5);
    for (LossKind kind : {LossKind::likelihood, LossKind::surrogate}) {
      const Vector g = evaluate_loss(kind, beta, d, nm).gradient;
      const Vector fd = oracle::fd_gradient(
          [&](const Vector& b) { return evaluate_loss(kind, b, d, nm).value; }, beta, 1e-5);
      worst = std::max(worst, (g - fd).norm() / std::max(1e-12, fd.norm()));
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 5.0, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome h_bounds() {
  const auto t0 = Clock::now();
  double m1 = 0, m2 = 0, m3 = 0;
  for (double r0 : {0.05, 0.1, 0.2})
    for (double r1 : {0.05, 0.1, 0.2}) {
      if (r0 + r1 >= 1.0) continue;
      const NoiseModel nm(r0, r1);
      for (int k = 0; k <= 2000; ++k) {
        const auto d = h_ln(-20.0 + 0.02 * k, nm);
        m1 = std::max(m1, std::abs(d.h1));
        m2 = std::max(m2, std::abs(d.h2));
        m3 = std::max(m3, std::abs(d.h3));
      }
    }
  const double t = seconds_since(t0);
  const bool ok = m1 <= 1 + 1e-9 && m2 <= 2 + 1e-9 && m3 <= 7 + 1e-9 && t < 1.0;
  return {ok, "max |h'| " + fmt("%.4f", m1) + ", |h''| " + fmt("%.4f", m2) + ", |h'''| " +
                  fmt("%.4f", m3)};
}

Outcome efficiency_ordering() {
  const auto t0 = Clock::now();
  const NoiseModel nm(0.1, 0.05);
  const Vector beta0 = Vector::Constant(10, 1.0 / std::sqrt(10.0));
  Rng pick(103);
  double worst_eig = 1e300;
  int bound_fail = 0;
  for (int rep = 0; rep < 100; ++rep) {
    DesignSpec ds;
    ds.n = 1000;
    ds.p = 10;
    ds.d = std::sqrt(2.5 * pick.uniform());
    ds.seed = derive_seed(103, static_cast<std::uint64_t>(rep));
    const Matrix X = gen_design(ds);
    const InfoPair info = info_matrices(X, beta0, nm);
    Eigen::SelfAdjointEigenSolver<Matrix> es(info.I_lik - info.I_sur, Eigen::EigenvaluesOnly);
    worst_eig = std::min(worst_eig, es.eigenvalues().minCoeff() / info.I_lik.trace());
    if (!cor1_bound_check(X, beta0, nm).holds()) ++bound_fail;
  }
  const double t = seconds_since(t0);
  return {worst_eig >= -1e-8 && bound_fail == 0 && t < 30.0,
          "min eig/tr " + fmt("%.2e", worst_eig) + ", bound violations " +
              std::to_string(bound_fail) + ", " + fmt("%.1f", t) + " s"};
}

Outcome unique_stationary_point() {
  const auto t0 = Clock::now();
  const NoiseModel nm(0.1, 0.05);
  DesignSpec ds;
  ds.n = 5000;
  ds.p = 10;
  ds.d = 1.0 / std::sqrt(10.0);
  ds.seed = 104;
  const Vector beta0 = Vector::Constant(10, 1.0 / std::sqrt(10.0));
  Dataset d;
  d.X = gen_design(ds);
  d.z = flip_labels(gen_labels(d.X, beta0, 105), nm, 106);

  const double radius = 5.0;
  Rng rng(107);
  std::vector<Vector> sols;
  double worst_gm = 0.0;
  for (int k = 0; k < 20; ++k) {
    Vector init(10);
    for (auto& v : init) v = rng.normal();
    init *= radius * std::pow(rng.uniform(), 0.1) / init.norm();
    FitConfig cfg;
    cfg.loss_kind = LossKind::likelihood;
    cfg.radius = radius;
    cfg.warm_start = init;
    const Vector b = fit(d, nm, cfg).beta;
    // Unit-step projected gradient map at the terminal iterate.
    const Vector g = evaluate_loss(LossKind::likelihood, b, d, nm).gradient;
    worst_gm = std::max(worst_gm, (b - project_l2_ball(b - g, radius)).norm());
    sols.push_back(b);
  }
  double worst_pair = 0.0;
  for (std::size_t i = 0; i < sols.size(); ++i)
    for (std::size_t j = i + 1; j < sols.size(); ++j)
      worst_pair = std::max(worst_pair, (sols[i] - sols[j]).norm());
  const double t = seconds_since(t0);
  return {worst_pair <= 1e-4 && worst_gm <= 1e-6 && t < 60.0,
          "max pairwise " + fmt("%.2e", worst_pair) + ", max gradmap " + fmt("%.2e", worst_gm) +
              ", " + fmt("%.1f", t) + " s"};
}

Outcome coverage() {
  const auto t0 = Clock::now();
  StudySpec s = StudySpec::defaults(StudyKind::coverage);
  const StudyResult low = run_study(s);
  const double targets[] = {0.951, 0.962, 0.944, 0.946};
  bool ok = low.coverage.size() == 4;
  std::ostringstream os;
  for (std::size_t k = 0; k < low.coverage.size() && k < 4; ++k) {
    const auto& c = low.coverage[k];
    ok = ok && std::abs(c.coverage_all - targets[k]) <= 0.05;
    os << c.method << " " << fmt("%.3f", c.coverage_all) << "/" << fmt("%.3f", c.ci_length) << "; ";
  }
  if (low.coverage.size() >= 2) ok = ok && low.coverage[0].ci_length < low.coverage[1].ci_length;

  StudySpec h = StudySpec::defaults(StudyKind::coverage);
  h.n = 300;
  h.p = 400;
  h.s = 5;
  h.replications = 50;
  h.high_dim = true;
  h.lambda_rule = LambdaRule::theory;
  const StudyResult high = run_study(h);
  ok = ok && !high.coverage.empty();
  for (const auto& c : high.coverage) {
    ok = ok && c.coverage_zero >= 0.90 && c.coverage_zero <= 1.0;
    os << "high-dim " << c.method << " zero " << fmt("%.3f", c.coverage_zero) << "; ";
  }
  const double t = seconds_since(t0);
  ok = ok && t <= 900.0;
  os << fmt("%.0f", t) << " s";
  return {ok, os.str()};
}

Outcome rate_check() {
  const auto t0 = Clock::now();
  StudySpec s = StudySpec::defaults(StudyKind::estimation_error);
  s.p_equals_n = true;
  s.s = 10;
  s.n_grid = {1000, 2000, 4000};
  s.replications = 30;
  s.lambda_rule = LambdaRule::theory;
  const StudyResult r = run_study(s);
  bool ok = true;
  std::ostringstream os;
  for (const char* m : {"err_lik", "err_sur"}) {
    const auto series = r.series(m);
    std::vector<double> lx, ly;
    for (const auto& row : series) {
      lx.push_back(std::log(row.grid_value));
      ly.push_back(std::log(row.median));
    }
    const double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3;
    double sxy = 0, sxx = 0;
    for (int k = 0; k < 3; ++k) {
      sxy += (lx[k] - mx) * (ly[k] - my);
      sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    const double slope = sxy / sxx;
    ok = ok && slope >= -0.75 && slope <= -0.25;
    os << m << " slope " << fmt("%.3f", slope) << "; ";
  }
  const double t = seconds_since(t0);
  ok = ok && t <= 600.0;
  os << fmt("%.0f", t) << " s";
  return {ok, os.str()};
}

Outcome gap_trends() {
  const auto t0 = Clock::now();
  StudySpec e = StudySpec::defaults(StudyKind::efficiency_vs_gap);
  e.d_squared_grid = {0, 0.5, 1.0, 1.5, 2.0, 2.5};
  e.replications = 200;
  const StudyResult er = run_study(e);
  const bool mono = check_monotone_gap(er, "gap2");
  std::vector<double> g2, omr;
  for (const auto& row : er.series("gap2")) g2.push_back(row.mean);
  for (const auto& row : er.series("one_minus_rd")) omr.push_back(row.mean);
  const double rc = rank_correlation(g2, omr);
  bool ratio_ok = true;
  double worst = -1e300;
  std::string worst_at;
  for (const auto& row : er.series("r_mse")) {
    ratio_ok = ratio_ok && row.mean <= 1.0 + 2.0 * row.std_err;
    if (row.mean - 1.0 - 2.0 * row.std_err > worst) {
      worst = row.mean - 1.0 - 2.0 * row.std_err;
      worst_at = row.grid_label + " (r_mse " + fmt("%.3f", row.mean) + ", se " +
                 fmt("%.3f", row.std_err) + ", B " + std::to_string(row.B) + ")";
    }
  }

  StudySpec nr = StudySpec::defaults(StudyKind::noise_rates);
  nr.replications = 200;
  const StudyResult nrr = run_study(nr);
  const bool mono_noise = check_monotone_gap(nrr, "gap2");
  const double t = seconds_since(t0);
  std::ostringstream os;
  os << "gap2 monotone in d " << (mono ? "yes" : "no") << ", rank corr " << fmt("%.3f", rc)
     << ", max r_mse - (1 + 2se) " << fmt("%.3f", worst) << " at " << worst_at
     << ", gap2 monotone in noise "
     << (mono_noise ? "yes" : "no") << ", " << fmt("%.0f", t) << " s";
  return {mono && rc <= -0.8 && ratio_ok && mono_noise && t <= 600.0, os.str()};
}

Outcome pu_arithmetic() {
  const PuSpec spec{0.35, 2533388, 1500277};
  const double rho1 = pu_noise_rates(spec).rho1();
  const double gamma = case_control_gamma(spec);
  // Long-double evaluation of the defining formulas.
  const long double pi = 0.35L, nl = 2533388.0L, nu = 1500277.0L;
  const long double rho1_hp = pi * nu / (nl + pi * nu);
  const long double gamma_hp = std::log(1.0L + nl / (pi * nu));
  const bool hp_ok = std::abs(rho1 - static_cast<double>(rho1_hp)) <= 1e-12 &&
                     std::abs(gamma - static_cast<double>(gamma_hp)) <= 1e-12;
  const bool rho_ok = std::abs(rho1 - 0.17168) <= 1e-4;
  const bool gamma_ok = std::abs(gamma - 1.7622) <= 1e-4;
  std::ostringstream os;
  os << "rho1 " << fmt("%.6f", rho1) << " (target 0.17168), gamma " << fmt("%.6f", gamma)
     << " (target 1.7622, |diff| " << fmt("%.2e", std::abs(gamma - 1.7622)) << ")";
  return {hp_ok && rho_ok && gamma_ok, os.str()};
}

Outcome determinism() {
  const auto t0 = Clock::now();
  std::vector<StudySpec> specs;
  StudySpec a = StudySpec::defaults(StudyKind::efficiency_vs_gap);
  a.n = 400;
  a.replications = 12;
  specs.push_back(a);
  StudySpec b = StudySpec::defaults(StudyKind::sparsity_ratio);
  b.n = 400;
  b.sparsity_grid = {2, 10};
  b.replications = 6;
  b.lambda_grid_size = 10;
  specs.push_back(b);
  StudySpec c = StudySpec::defaults(StudyKind::coverage);
  c.n = 400;
  c.replications = 6;
  specs.push_back(c);
  bool ok = true;
  for (auto s : specs) {
    s.threads = 1;
    const StudyResult r1 = run_study(s);
    for (int th : {2, 4}) {
      s.threads = th;
      const StudyResult r = run_study(s);
      ok = ok && r.to_csv() == r1.to_csv() && r.coverage_csv() == r1.coverage_csv();
    }
  }
  const double t = seconds_since(t0);
  return {ok && t < 60.0, "3 studies x {1, 2, 4} threads, " + fmt("%.1f", t) + " s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"zero-noise IRLS agreement", zero_noise_oracle},
      {"analytic gradients", gradient_check},
      {"link derivative bounds", h_bounds},
      {"information ordering and gap bound", efficiency_ordering},
      {"unique stationary point", unique_stationary_point},
      {"confidence interval coverage", coverage},
      {"high-dimensional error rate", rate_check},
      {"gap and efficiency trends", gap_trends},
      {"PU conversion arithmetic", pu_arithmetic},
      {"thread-count determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
