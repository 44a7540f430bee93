#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cli_io.hpp"
#include "json.hpp"

using namespace noisyglm;
using namespace noisyglm::cli;

namespace {

void add_noise_flags(CLI::App* cmd, NoiseFlags& f) {
  auto* r0 = cmd->add_option("--rho0", f.rho0, "P(z=1 | y=0)");
  auto* r1 = cmd->add_option("--rho1", f.rho1, "P(z=0 | y=1)");
  auto* pi = cmd->add_option("--pu-pi", f.pu_pi, "positive prevalence among unlabeled");
  auto* nl = cmd->add_option("--pu-nl", f.pu_nl, "number of labeled positives");
  auto* nu = cmd->add_option("--pu-nu", f.pu_nu, "number of unlabeled");
  for (auto* pu : {pi, nl, nu}) pu->excludes(r0)->excludes(r1);
}

int fail(const std::string& msg, int code) {
  std::cerr << "noisyglm: error: " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Logistic regression under known class-conditional label noise"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NOISYGLM_VERSION);

  FitOptions fo;
  auto* fit = app.add_subcommand("fit", "fit a (penalized) noisy-label logistic model");
  fit->add_option("data", fo.data, "CSV with a header row")->required();
  fit->add_option("-o,--out", fo.out_dir, "output directory")->required();
  fit->add_option("--label", fo.label, "label column (0/1)")->capture_default_str();
  fit->add_option("--features", fo.features, "feature columns (default: all others)")
      ->delimiter(',');
  fit->add_flag("!--no-intercept", fo.intercept, "omit the intercept column");
  add_noise_flags(fit, fo.noise);
  fit->add_option("--loss", fo.loss, "lik or sur")
      ->check(CLI::IsMember({"lik", "sur", "likelihood", "surrogate"}))
      ->capture_default_str();
  auto* lam = fit->add_option("--lambda", fo.lambda, "l1 penalty level");
  fit->add_flag("--cv", fo.cv, "choose lambda by K-fold cross-validation")->excludes(lam);
  fit->add_option("--folds", fo.folds, "cross-validation folds")->capture_default_str();
  fit->add_option("--radius", fo.radius, "l2 ball radius (likelihood loss)");
  fit->add_option("--unpenalized", fo.unpenalized, "columns left out of the penalty")
      ->delimiter(',');
  fit->add_option("--seed", fo.seed, "seed for fold assignment")->capture_default_str();
  fit->add_option("--max-iter", fo.max_iter, "solver iteration cap")->capture_default_str();

  InferOptions io;
  auto* infer = app.add_subcommand("infer", "confidence intervals from a fit directory");
  infer->add_option("fit_dir", io.fit_dir, "output directory of `noisyglm fit`")->required();
  infer->add_option("--alpha", io.alpha, "1 - confidence level")->capture_default_str();
  infer->add_option("-o,--out", io.out_dir, "output directory (default: <fit_dir>/inference)");

  GapOptions go;
  auto* gap = app.add_subcommand("gap", "efficiency diagnostics at a fixed design");
  gap->add_option("design", go.design, "design CSV with a header row")->required();
  gap->add_option("--beta", go.beta, "CSV with name,estimate columns")->required();
  gap->add_option("-o,--out", go.out_dir, "output directory")->required();
  add_noise_flags(gap, go.noise);

  StudyOptions so;
  auto* study = app.add_subcommand("study", "run a Monte-Carlo study from a JSON config");
  study->add_option("config", so.config, "study config (JSON)")->required();
  study->add_option("-o,--out", so.out_dir, "output directory")->required();
  study->add_option("--seed", so.seed, "override the config seed");
  study->add_option("--replications", so.replications, "override the replication count");
  study->add_option("--threads", so.threads, "worker threads (0: automatic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    return fail(e.what(), kExitInput);
  }

  try {
    if (*fit) return cmd_fit(fo);
    if (*infer) return cmd_infer(io);
    if (*gap) return cmd_gap(go);
    return cmd_study(so);
  } catch (const InputError& e) {
    return fail(e.what(), kExitInput);
  } catch (const RankDeficientError& e) {
    return fail(e.what(), kExitInput);
  } catch (const DomainError& e) {
    return fail(e.what(), kExitInput);
  } catch (const DimensionError& e) {
    return fail(e.what(), kExitInput);
  } catch (const nlohmann::json::exception& e) {
    return fail(e.what(), kExitInput);
  } catch (const std::exception& e) {
    return fail(e.what(), 1);
  }
}
