#pragma once

#include <optional>
#include <string>
#include <vector>

#include "noisyglm/glm_core.hpp"
#include "noisyglm/types.hpp"

namespace noisyglm {

enum class LossKind { likelihood, surrogate };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

/// Observations (x_i, z_i). Rows of X are observations.
struct Dataset {
  Matrix X;
  Vector z;
  std::optional<Vector> y;  // clean labels, simulation only
  std::optional<Eigen::Index> intercept_col;

  Dataset() = default;
  Dataset(Matrix X_, Vector z_, std::optional<Eigen::Index> intercept = {});

  Eigen::Index n() const noexcept { return X.rows(); }
  Eigen::Index p() const noexcept { return X.cols(); }

  /// Throws DimensionError / DomainError on empty, non-finite, or
  /// non-binary input.
  void validate() const;

  /// Rows selected by `rows`, in order.
  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

/// Per-observation second-derivative split: l'' = rho_I + rho_R.
/// For the surrogate loss rho_I = A''(t) and rho_R = 0.
struct HessianTerms {
  Vector rho_I;
  Vector rho_R;
};

struct LossEval {
  double value = 0.0;
  Vector gradient;
  std::optional<HessianTerms> hessian_terms;
};

/// (1/n) sum [A(h(t_i)) - z_i h(t_i)], t = X beta.
LossEval loss_lik(const Vector& beta, const Dataset& data, const NoiseModel& nm,
                  bool with_hessian = false);

/// (1/n) sum [A(t_i) - T(z_i) t_i].
LossEval loss_sur(const Vector& beta, const Dataset& data, const NoiseModel& nm,
                  bool with_hessian = false);

LossEval evaluate_loss(LossKind kind, const Vector& beta, const Dataset& data,
                       const NoiseModel& nm, bool with_hessian = false);

// Scalar maps on a precomputed linear predictor. The solver uses these to
// avoid repeating the X*beta product.
double loss_value_eta(LossKind kind, const Vector& eta, const Vector& z,
                      const NoiseModel& nm);
/// Value plus per-observation derivative dl/dt written into `deriv`.
double loss_value_deriv_eta(LossKind kind, const Vector& eta, const Vector& z,
                            const NoiseModel& nm, Vector& deriv);

/// Hessian split evaluated at eta (rho_R requires z).
HessianTerms hessian_terms_eta(LossKind kind, const Vector& eta,
                               const Vector& z, const NoiseModel& nm);

/// X' diag(w) X / n.
Matrix weighted_gram(const Matrix& X, const Vector& w);

/// Dense Hessian (1/n) sum (rho_I + rho_R) x x'.
Matrix dense_hessian(const LossEval& eval, const Matrix& X);

struct UnbiasednessResult {
  double gap = 0.0;        // |mean_r L_s(beta; z_r) - L_c(beta; y)|
  double mc_stderr = 0.0;  // standard error of the replicate mean
};

/// Compares the surrogate loss averaged over replicated noisy labels
/// (columns of `z_draws`) with the clean-label logistic loss. Requires
/// `data.y`.
UnbiasednessResult unbiasedness_check(const Vector& beta, const Dataset& data,
                                      const Matrix& z_draws,
                                      const NoiseModel& nm);

}  // namespace noisyglm
