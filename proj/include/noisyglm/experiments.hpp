#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "noisyglm/glm_core.hpp"
#include "noisyglm/types.hpp"

namespace noisyglm {

enum class StudyKind { efficiency_vs_gap, noise_rates, estimation_error, sparsity_ratio, coverage };
std::string to_string(StudyKind k);
StudyKind study_kind_from_string(const std::string& s);

enum class LambdaRule { cv, theory, test_set };
std::string to_string(LambdaRule r);
LambdaRule lambda_rule_from_string(const std::string& s);

struct NoisePair {
  double rho0 = 0.1;
  double rho1 = 0.05;
};

/// Monte-Carlo study configuration. Fields irrelevant to a study kind are
/// ignored; `defaults(kind)` fills the desk-scale settings.
///
/// Designs per kind:
///  - efficiency_vs_gap: mixture design, one grid point per d^2 value,
///    beta0 = 1/sqrt(p) in every coordinate.
///  - noise_rates: the same design at fixed d, one grid point per noise pair.
///    Both efficiency kinds default to a likelihood ball of radius 5: at strong
///    separation the noisy likelihood has no finite minimizer and the fit
///    otherwise lands on a far boundary.
///  - estimation_error: Gaussian design scaled so Var(x'beta0) = target_var,
///    beta0 = (+1 x s/2, -1 x s/2, 0, ...). One grid point per n; `p_equals_n`
///    switches to the penalized high-dimensional regime.
///  - sparsity_ratio: mixture design at fixed d, beta0 = 1/sqrt(s) on the
///    first s coordinates, one grid point per s.
///  - coverage: the sparsity_ratio design (d = 3/sqrt(p) by default) at a
///    single (n, p, s).
struct StudySpec {
  StudyKind study = StudyKind::efficiency_vs_gap;
  Eigen::Index n = 1000;
  Eigen::Index p = 10;
  Eigen::Index s = 10;
  NoisePair noise;
  std::vector<NoisePair> noise_grid;
  std::vector<double> d_squared_grid;
  std::vector<Eigen::Index> n_grid;
  std::vector<Eigen::Index> sparsity_grid;
  bool p_equals_n = false;
  bool high_dim = false;  // coverage: node-wise debiasing only
  std::optional<double> d;  // fixed mixture offset; kind-specific default
  std::optional<double> radius;  // likelihood ball; unset: 100 max(1, ||beta_s||)
  double ar1_rho = 0.2;
  double target_var = 5.0;
  int replications = 200;
  std::uint64_t seed = 20240611;

  LambdaRule lambda_rule = LambdaRule::theory;
  // theory rule: lambda = scale * sigma * sqrt(2 log p / n), sigma the
  // spread of one score coordinate of the loss at beta = 0
  double lambda_scale = 1.0;
  int folds = 5;
  int lambda_grid_size = 50;
  double lambda_grid_ratio = 1e-3;
  double alpha = 0.05;

  int max_iter = 10000;
  std::optional<double> tol_gradmap;  // unset: 1e-6 * sqrt(p)
  double tol_obj = 1e-16;
  int threads = 0;  // 0: NOISYGLM_THREADS or hardware concurrency

  static StudySpec defaults(StudyKind kind);
  void validate() const;
};

nlohmann::json to_json(const StudySpec& spec);
/// Unspecified keys take `StudySpec::defaults(study)`. Unknown keys throw.
StudySpec study_spec_from_json(const nlohmann::json& j);

/// Aggregated metric at one grid point.
struct StudyRow {
  std::size_t grid_index = 0;
  std::string grid_label;
  double grid_value = 0.0;
  std::string metric;
  double mean = 0.0;
  double std_err = 0.0;  // sd / sqrt(B); delta method for ratios
  double median = 0.0;
  // Replications contributing a value, and replications that failed
  // outright. A successful replication can still leave a metric missing
  // (no surrogate minimizer, coverage over an empty coordinate set), so
  // B + failed may fall short of the replication count.
  int B = 0;
  int failed = 0;
};

/// One row of the wide coverage table.
struct CoverageRow {
  std::string method;
  double coverage_all = 0.0;
  double coverage_nzero = 0.0;
  double coverage_zero = 0.0;
  double ci_length = 0.0;
};

struct StudyResult {
  StudySpec spec;
  std::vector<StudyRow> rows;
  std::vector<CoverageRow> coverage;  // coverage study only
  double wall_seconds = 0.0;
  int threads_used = 1;

  /// Tidy table: study, grid_index, grid_label, grid_value, metric, mean,
  /// stderr, median, B, failed.
  std::string to_csv() const;
  /// Wide coverage table: method, coverage_all, coverage_nzero,
  /// coverage_zero, ci_length.
  std::string coverage_csv() const;

  const StudyRow* find(const std::string& metric, std::size_t grid_index) const;
  /// Rows of one metric in grid order.
  std::vector<StudyRow> series(const std::string& metric) const;
};

/// Worker count: `requested` if positive, else hardware concurrency, capped
/// by the NOISYGLM_THREADS environment variable when set.
int resolve_threads(int requested);

/// Runs every (grid point, replication) pair, in parallel across
/// replications. Per-replication seeds derive from (seed, grid index,
/// replication) so the output does not depend on the worker count.
StudyResult run_study(const StudySpec& spec);

/// True when the grid-ordered means of `metric` are nondecreasing, allowing
/// at most one adjacent inversion no larger than the larger of the two
/// standard errors. Valid for efficiency_vs_gap and noise_rates results.
bool check_monotone_gap(const StudyResult& result, const std::string& metric = "gap2");

/// Spearman rank correlation with average ranks for ties.
double rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace noisyglm
