#pragma once

#include <optional>
#include <string>
#include <vector>

#include "noisyglm/glm_core.hpp"
#include "noisyglm/losses.hpp"
#include "noisyglm/types.hpp"

namespace noisyglm {

/// Fixed-design information matrices of the likelihood and surrogate
/// estimators together with the efficiency diagnostics built from them.
struct InfoPair {
  Matrix I_lik;
  Matrix I_sur;
  Vector w_y;  // V(mu(t_i))
  Vector w_z;  // V(mu_z(t_i))
  double amse_lik = 0.0;  // tr(I_lik^{-1}) / n
  double amse_sur = 0.0;
  double rel_l2_diff = 0.0;  // ||I - I_lik^{-1/2} I_sur I_lik^{-1/2}||_2
  double gap = 0.0;          // gap(C(X), C(W_z^{-1} W_y X))
};

/// Throws RankDeficientError naming dependent columns if X lacks full
/// column rank.
InfoPair info_matrices(const Matrix& X, const Vector& beta, const NoiseModel& nm);

/// ||P_C(A) - P_C(B)||_2 for two full-column-rank matrices with the same
/// number of rows.
double subspace_gap(const Matrix& A, const Matrix& B);

struct Cor1Check {
  double lhs = 0.0;  // relative l2 difference
  double rhs = 0.0;  // c_n * gap^2
  double c_n = 0.0;
  double gap = 0.0;
  bool holds(double slack = 1e-8) const noexcept { return lhs <= rhs + slack; }
};

/// Evaluates both sides of rd <= kappa(X'X/n) kappa(W_y^2) kappa(W_z^2) gap^2.
Cor1Check cor1_bound_check(const Matrix& X, const Vector& beta0,
                           const NoiseModel& nm);

/// Columns of X that are linearly dependent on earlier pivots (empty when X
/// has full column rank).
IndexSet dependent_columns(const Matrix& X);

enum class PsiKind { psi_lik, psi_sur };

/// Estimating-equation function psi(t, z) with the Jacobian split
/// psi' = psi'_I + psi'_R. psi_lik is the likelihood score, psi_sur the
/// surrogate score.
struct PsiSpec {
  PsiKind kind = PsiKind::psi_sur;
  NoiseModel nm;

  double value(double t, double z) const noexcept;
  double jac_I(double t) const noexcept;
  double jac_R(double t, double z) const noexcept;

  static PsiSpec for_loss(LossKind kind, const NoiseModel& nm);
};

struct ThetaColumnStats {
  double tau2 = 0.0;
  double kkt_residual = 0.0;  // lasso KKT sup-norm of node-wise problem j
  double l1_norm = 0.0;       // ||Theta_j||_1
  double lambda = 0.0;
};

struct ThetaEstimate {
  Matrix theta;  // row j approximates row j of the inverse Jacobian
  std::vector<ThetaColumnStats> diag;
};

/// (1/n) sum psi'_I(x_i'beta) x_i x_i'.
Matrix psi_jacobian(const Matrix& X, const Vector& beta, const PsiSpec& psi);

/// Shared node-wise penalty 0.5 * sqrt(log p / n) * rms(sqrt(diag G)).
double default_nodewise_lambda(const Matrix& gram, Eigen::Index n);

/// Node-wise lasso approximate inverse of psi_jacobian(X, beta_hat, psi).
/// `lambdas` has length 1 (shared) or p; empty selects the default.
ThetaEstimate nodewise_theta(const Matrix& X, const Vector& beta_hat,
                             const PsiSpec& psi, const Vector& lambdas = {});

/// Exact inverse of psi_jacobian, for p < n.
Matrix inverse_jacobian_theta(const Matrix& X, const Vector& beta_hat,
                              const PsiSpec& psi);

struct DebiasReport {
  Vector beta_db;
  Vector se;  // sigma_hat_j / sqrt(n)
  Vector ci_low;
  Vector ci_high;
  std::vector<ThetaColumnStats> theta_diag;
};

/// One-step correction beta_hat - Theta psi_n(beta_hat) with plug-in
/// standard errors sqrt(Theta_j' [(1/n) sum psi^2 x x'] Theta_j / n).
DebiasReport debias(const Dataset& data, const Vector& beta_hat,
                    const PsiSpec& psi, const Matrix& theta, double alpha);

/// Wald intervals for an unpenalized estimator from the fixed-design
/// information matrix evaluated at beta_hat.
struct WaldReport {
  Vector se;
  Vector ci_low;
  Vector ci_high;
};
WaldReport wald_intervals(const Matrix& X, const Vector& beta_hat,
                          const NoiseModel& nm, LossKind kind, double alpha);

/// Area under the ROC curve of `scores` against observed 0/1 labels, with
/// ties counted one half. No correction for label noise.
double observed_auc(const Vector& scores, const Vector& z);

/// Standard normal quantile.
double normal_quantile(double p);

}  // namespace noisyglm
