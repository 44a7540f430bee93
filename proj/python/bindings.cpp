#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "noisyglm/experiments.hpp"
#include "noisyglm/glm_core.hpp"
#include "noisyglm/inference.hpp"
#include "noisyglm/losses.hpp"
#include "noisyglm/optim.hpp"
#include "noisyglm/simgen.hpp"

namespace py = pybind11;
using namespace noisyglm;
using namespace pybind11::literals;

namespace {

Dataset make_data(const Matrix& X, const Vector& z, std::optional<Eigen::Index> intercept_col) {
  Dataset d(X, z, intercept_col);
  d.validate();
  return d;
}

py::dict fit_py(const Matrix& X, const Vector& z, double rho0, double rho1,
                const std::string& loss, double lam, std::optional<double> radius,
                std::optional<Eigen::Index> intercept_col, const IndexSet& unpenalized,
                int max_iter) {
  const Dataset d = make_data(X, z, intercept_col);
  FitConfig cfg;
  cfg.loss_kind = loss_kind_from_string(loss);
  cfg.lambda = lam;
  cfg.radius = radius;
  cfg.unpenalized = unpenalized;
  cfg.max_iter = max_iter;
  FitResult r;
  {
    py::gil_scoped_release release;
    r = fit(d, NoiseModel(rho0, rho1), cfg);
  }
  return py::dict("beta"_a = r.beta, "iterations"_a = r.iterations,
                  "termination"_a = to_string(r.termination), "converged"_a = r.converged(),
                  "objective_trace"_a = r.objective_trace, "radius"_a = r.radius,
                  "lambda"_a = r.lambda);
}

py::dict info_py(const Matrix& X, const Vector& beta, double rho0, double rho1) {
  const InfoPair info = info_matrices(X, beta, NoiseModel(rho0, rho1));
  return py::dict("I_lik"_a = info.I_lik, "I_sur"_a = info.I_sur, "gap"_a = info.gap,
                  "rd"_a = info.rel_l2_diff, "amse_lik"_a = info.amse_lik,
                  "amse_sur"_a = info.amse_sur);
}

// Wald intervals for lam == 0, node-wise debiasing otherwise.
py::dict infer_py(const Matrix& X, const Vector& z, const Vector& beta, double rho0, double rho1,
                  const std::string& loss, bool penalized, double alpha) {
  const Dataset d = make_data(X, z, std::nullopt);
  const NoiseModel nm(rho0, rho1);
  const LossKind kind = loss_kind_from_string(loss);
  const PsiSpec psi = PsiSpec::for_loss(kind, nm);
  if (!penalized) {
    const WaldReport w = wald_intervals(X, beta, nm, kind, alpha);
    return py::dict("estimate"_a = beta, "se"_a = w.se, "ci_low"_a = w.ci_low,
                    "ci_high"_a = w.ci_high);
  }
  const ThetaEstimate th = nodewise_theta(X, beta, psi);
  const DebiasReport r = debias(d, beta, psi, th.theta, alpha);
  return py::dict("estimate"_a = beta, "debiased"_a = r.beta_db, "se"_a = r.se,
                  "ci_low"_a = r.ci_low, "ci_high"_a = r.ci_high);
}

py::dict study_py(const std::string& config) {
  const StudySpec spec = study_spec_from_json(nlohmann::json::parse(config));
  StudyResult r;
  {
    py::gil_scoped_release release;
    r = run_study(spec);
  }
  return py::dict("csv"_a = r.to_csv(), "coverage_csv"_a = r.coverage_csv(),
                  "spec"_a = to_json(r.spec).dump(), "wall_seconds"_a = r.wall_seconds);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Logistic regression under known class-conditional label noise";
  m.attr("__version__") = NOISYGLM_VERSION;

  static py::exception<Error> base(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("pu_noise_rates",
        [](double pi, double n_l, double n_u) {
          const NoiseModel nm = pu_noise_rates(PuSpec{pi, n_l, n_u});
          return py::make_tuple(nm.rho0(), nm.rho1());
        },
        "pi"_a, "n_labeled"_a, "n_unlabeled"_a, "(rho0, rho1) for positive-unlabeled sampling");
  m.def("case_control_gamma",
        [](double pi, double n_l, double n_u) { return case_control_gamma(PuSpec{pi, n_l, n_u}); },
        "pi"_a, "n_labeled"_a, "n_unlabeled"_a);
  m.def("h",
        [](double t, double rho0, double rho1) {
          const auto d = h_ln(t, NoiseModel(rho0, rho1));
          return py::make_tuple(d.h, d.h1, d.h2, d.h3);
        },
        "t"_a, "rho0"_a, "rho1"_a, "h and its first three derivatives");
  m.def("loss",
        [](const std::string& kind, const Vector& beta, const Matrix& X, const Vector& z,
           double rho0, double rho1) {
          const LossEval e = evaluate_loss(loss_kind_from_string(kind), beta,
                                           make_data(X, z, std::nullopt), NoiseModel(rho0, rho1));
          return py::make_tuple(e.value, e.gradient);
        },
        "kind"_a, "beta"_a, "X"_a, "z"_a, "rho0"_a = 0.0, "rho1"_a = 0.0,
        "(value, gradient) of the averaged loss");
  m.def("fit", &fit_py, "X"_a, "z"_a, "rho0"_a = 0.0, "rho1"_a = 0.0, "loss"_a = "sur",
        "lam"_a = 0.0, "radius"_a = py::none(), "intercept_col"_a = py::none(),
        "unpenalized"_a = IndexSet{}, "max_iter"_a = 10000);
  m.def("info_matrices", &info_py, "X"_a, "beta"_a, "rho0"_a = 0.0, "rho1"_a = 0.0);
  m.def("infer", &infer_py, "X"_a, "z"_a, "beta"_a, "rho0"_a = 0.0, "rho1"_a = 0.0,
        "loss"_a = "sur", "penalized"_a = false, "alpha"_a = 0.05);
  m.def("observed_auc", &observed_auc, "scores"_a, "z"_a,
        "ROC area against the observed labels (no noise correction)");
  m.def("run_study", &study_py, "config"_a, "run a study from its JSON config text");
}
