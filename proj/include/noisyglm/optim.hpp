#pragma once

#include <optional>
#include <string>
#include <vector>

#include "noisyglm/losses.hpp"
#include "noisyglm/types.hpp"

namespace noisyglm {

/// Solver configuration for
///   min_beta L(beta) + lambda * ||beta_P||_1   (s.t. ||beta||_2 <= r)
/// where P excludes `unpenalized` and the dataset's intercept column, and
/// the ball constraint applies to the likelihood loss only.
struct FitConfig {
  LossKind loss_kind = LossKind::surrogate;
  double lambda = 0.0;
  // Ball radius for the likelihood loss. Unset means
  // 100 * max(1, ||surrogate fit at the same lambda||_2).
  std::optional<double> radius;
  IndexSet unpenalized;
  std::optional<Vector> warm_start;  // zeros when unset
  int max_iter = 10000;
  // Relative objective decrease below which the solver reports a stall.
  double tol_obj = 1e-16;
  // Prox-gradient-map norm threshold; unset means 1e-8 * sqrt(p).
  std::optional<double> tol_gradmap;
  // The surrogate loss can be unbounded below. The solver stops with
  // Termination::diverged once the objective provably decreases without
  // bound along the current iterate's direction, or, without a ball
  // constraint, once an iterate's l2 norm exceeds this value.
  double divergence_norm = 1e8;
  double backtrack_shrink = 0.5;
  double step_init = 1.0;

  void validate() const;
};

enum class Termination { gradmap_tol, obj_tol, max_iter, diverged };
std::string to_string(Termination t);

struct FitResult {
  Vector beta;
  std::vector<double> objective_trace;  // penalized objective, one per iterate
  int iterations = 0;
  Termination termination = Termination::max_iter;
  IndexSet active_set;
  double gradmap_norm = 0.0;  // at the final accepted step
  double radius = 0.0;        // ball radius used (0 for the surrogate)
  double lambda = 0.0;

  bool converged() const noexcept {
    return termination == Termination::gradmap_tol || termination == Termination::obj_tol;
  }
};

/// Soft-thresholding; indices in `unpenalized` pass through unchanged.
Vector prox_l1(const Vector& v, double threshold, const IndexSet& unpenalized = {});

/// Euclidean projection onto {||x||_2 <= r}.
Vector project_l2_ball(const Vector& v, double r);

/// Proximal gradient with backtracking line search.
FitResult fit(const Dataset& data, const NoiseModel& nm, const FitConfig& cfg);

/// Smallest lambda at which every penalized coefficient is zero:
/// the sup-norm of the penalized part of the gradient at the
/// unpenalized-only optimum.
double lambda_max(const Dataset& data, const NoiseModel& nm, LossKind kind,
                  const IndexSet& unpenalized = {});

/// `count` log-spaced values from lmax down to ratio * lmax.
Vector lambda_grid(double lmax, int count = 50, double ratio = 1e-3);

struct CvResult {
  double lambda = 0.0;
  Vector cv_curve;  // mean held-out loss per grid value
  Vector cv_se;     // standard error across folds
  std::size_t index = 0;
};

/// K-fold cross-validation over a descending lambda grid with warm starts
/// along the path. Fold k holds out rows i with i % folds == k. Ties go to
/// the smallest lambda. A lambda whose training fit diverges gets an infinite
/// loss on that fold, as do the smaller lambdas after it.
CvResult cv_select_lambda(const Dataset& data, const NoiseModel& nm,
                          const FitConfig& base_cfg, int folds,
                          const Vector& grid);

}  // namespace noisyglm
