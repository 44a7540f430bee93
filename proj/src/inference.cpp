#include "noisyglm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace noisyglm {

namespace {

void require_full_rank(const Matrix& X, const char* what) {
  IndexSet dep = dependent_columns(X);
  if (!dep.empty()) {
    std::ostringstream os;
    os << what << " is rank deficient; dependent columns:";
    for (auto j : dep) os << ' ' << j;
    throw RankDeficientError(os.str(), std::move(dep));
  }
}

// Variance weights V(mu(t_i)) and V(mu_z(t_i)).
void variance_weights(const Matrix& X, const Vector& beta, const NoiseModel& nm,
                      Vector& w_y, Vector& w_z) {
  const Vector t = X * beta;
  w_y.resize(t.size());
  w_z.resize(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const NoiseLinkTerms k = noise_link_terms(t[i], nm);
    w_y[i] = std::exp(-softplus(-t[i]) - softplus(t[i]));
    w_z[i] = std::exp(k.log_mean_z + k.log_1m_mean_z);
  }
}

Matrix spd_inverse(const Matrix& A, const char* what) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success)
    throw RankDeficientError(std::string(what) + " is not positive definite");
  return llt.solve(Matrix::Identity(A.rows(), A.cols()));
}

// a^2 * weighted_gram(X, w_y^2 / w_z)
Matrix lik_information(const Matrix& X, const Vector& w_y, const Vector& w_z,
                       const NoiseModel& nm) {
  const Vector w = w_y.cwiseProduct(w_y).cwiseQuotient(w_z);
  return nm.a() * nm.a() * weighted_gram(X, w);
}

Matrix sur_information(const Matrix& X, const Vector& w_y, const Vector& w_z,
                       const NoiseModel& nm) {
  const Matrix gy = weighted_gram(X, w_y);
  const Matrix gz = weighted_gram(X, w_z);
  Eigen::LLT<Matrix> llt(gz);
  if (llt.info() != Eigen::Success)
    throw RankDeficientError("X' W_z X is not positive definite");
  Matrix out = nm.a() * nm.a() * (gy * llt.solve(gy));
  return 0.5 * (out + out.transpose());
}

double directed_gap(const Matrix& qa, const Matrix& qb) {
  const Matrix resid = qb - qa * (qa.transpose() * qb);
  Eigen::JacobiSVD<Matrix> svd(resid);
  return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

Matrix thin_q(const Matrix& A) {
  Eigen::HouseholderQR<Matrix> qr(A);
  return qr.householderQ() * Matrix::Identity(A.rows(), A.cols());
}

double condition_number_spd(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return ev[ev.size() - 1] / ev[0];
}

}  // namespace

IndexSet dependent_columns(const Matrix& X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  IndexSet dep;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) dep.push_back(perm[k]);
  std::sort(dep.begin(), dep.end());
  return dep;
}

InfoPair info_matrices(const Matrix& X, const Vector& beta, const NoiseModel& nm) {
  if (beta.size() != X.cols()) throw DimensionError("beta length does not match X");
  require_full_rank(X, "design matrix");

  InfoPair out;
  variance_weights(X, beta, nm, out.w_y, out.w_z);
  out.I_lik = lik_information(X, out.w_y, out.w_z, nm);
  out.I_sur = sur_information(X, out.w_y, out.w_z, nm);

  const double n = static_cast<double>(X.rows());
  out.amse_lik = spd_inverse(out.I_lik, "likelihood information").trace() / n;
  out.amse_sur = spd_inverse(out.I_sur, "surrogate information").trace() / n;

  Eigen::SelfAdjointEigenSolver<Matrix> es(out.I_lik);
  const Vector inv_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
  const Matrix s = es.eigenvectors() * inv_sqrt.asDiagonal() *
                   es.eigenvectors().transpose();
  Matrix m = s * out.I_sur * s;
  m = Matrix::Identity(X.cols(), X.cols()) - 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> em(m, Eigen::EigenvaluesOnly);
  out.rel_l2_diff = em.eigenvalues().cwiseAbs().maxCoeff();

  const Vector r = out.w_y.cwiseQuotient(out.w_z);
  out.gap = subspace_gap(X, r.asDiagonal() * X);
  return out;
}

double subspace_gap(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows())
    throw DimensionError("subspace_gap: matrices must have the same row count");
  require_full_rank(A, "first argument");
  require_full_rank(B, "second argument");
  const Matrix qa = thin_q(A);
  const Matrix qb = thin_q(B);
  return std::max(directed_gap(qa, qb), directed_gap(qb, qa));
}

Cor1Check cor1_bound_check(const Matrix& X, const Vector& beta0,
                           const NoiseModel& nm) {
  const InfoPair info = info_matrices(X, beta0, nm);
  const double n = static_cast<double>(X.rows());
  const Matrix xtx = X.transpose() * X / n;
  const auto kappa_sq = [](const Vector& w) {
    const double k = w.maxCoeff() / w.minCoeff();
    return k * k;
  };
  Cor1Check out;
  out.gap = info.gap;
  out.lhs = info.rel_l2_diff;
  out.c_n = condition_number_spd(xtx) * kappa_sq(info.w_y) * kappa_sq(info.w_z);
  out.rhs = out.c_n * info.gap * info.gap;
  return out;
}

double PsiSpec::value(double t, double z) const noexcept {
  if (kind == PsiKind::psi_sur) return mean_y(t) - surrogate_target(z, nm);
  const NoiseLinkTerms k = noise_link_terms(t, nm);
  return (k.mean_z - z) * k.d.h1;
}

double PsiSpec::jac_I(double t) const noexcept {
  if (kind == PsiKind::psi_sur) return std::exp(-softplus(-t) - softplus(t));
  const NoiseLinkTerms k = noise_link_terms(t, nm);
  return std::exp(k.log_mean_z + k.log_1m_mean_z) * k.d.h1 * k.d.h1;
}

double PsiSpec::jac_R(double t, double z) const noexcept {
  if (kind == PsiKind::psi_sur) return 0.0;
  const NoiseLinkTerms k = noise_link_terms(t, nm);
  return (k.mean_z - z) * k.d.h2;
}

PsiSpec PsiSpec::for_loss(LossKind kind, const NoiseModel& nm) {
  return PsiSpec{kind == LossKind::likelihood ? PsiKind::psi_lik : PsiKind::psi_sur,
                 nm};
}

Matrix psi_jacobian(const Matrix& X, const Vector& beta, const PsiSpec& psi) {
  if (beta.size() != X.cols()) throw DimensionError("beta length does not match X");
  const Vector t = X * beta;
  Vector w(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) w[i] = psi.jac_I(t[i]);
  return weighted_gram(X, w);
}

double default_nodewise_lambda(const Matrix& gram, Eigen::Index n) {
  const double p = static_cast<double>(gram.rows());
  const double scale = std::sqrt(gram.diagonal().cwiseMax(0.0).mean());
  return 0.5 * std::sqrt(std::log(std::max(p, 2.0)) / static_cast<double>(n)) *
         scale;
}

ThetaEstimate nodewise_theta(const Matrix& X, const Vector& beta_hat,
                             const PsiSpec& psi, const Vector& lambdas) {
  const Eigen::Index p = X.cols();
  const Matrix G = psi_jacobian(X, beta_hat, psi);
  if (lambdas.size() != 0 && lambdas.size() != 1 && lambdas.size() != p)
    throw DimensionError("nodewise_theta: lambdas must have length 0, 1, or p");
  const double shared = lambdas.size() == 0 ? default_nodewise_lambda(G, X.rows())
                                            : lambdas[0];

  ThetaEstimate out;
  out.theta = Matrix::Zero(p, p);
  out.diag.resize(static_cast<std::size_t>(p));

  Vector gamma(p), r(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double lam = lambdas.size() == p ? lambdas[j] : shared;
    if (!(lam >= 0.0)) throw DomainError("node-wise lambda must be nonnegative");
    const double gjj = G(j, j);
    if (!(gjj > 0.0)) {
      std::ostringstream os;
      os << "column " << j << " has zero weighted variance";
      throw RankDeficientError(os.str(), {j});
    }

    // Coordinate descent on 0.5 g'G_{-j,-j}g - G_{-j,j}'g + lam ||g||_1,
    // keeping r = G g current.
    gamma.setZero();
    r.setZero();
    const double tol = 1e-12 * std::sqrt(gjj);
    for (int sweep = 0; sweep < 100000; ++sweep) {
      double max_delta = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k == j) continue;
        const double gkk = G(k, k);
        if (!(gkk > 0.0)) continue;
        const double zk = G(k, j) - (r[k] - gkk * gamma[k]);
        const double mag = std::abs(zk) - lam;
        const double next = mag > 0.0 ? std::copysign(mag, zk) / gkk : 0.0;
        const double delta = next - gamma[k];
        if (delta != 0.0) {
          r.noalias() += delta * G.col(k);
          gamma[k] = next;
          max_delta = std::max(max_delta, std::abs(delta) * std::sqrt(gkk));
        }
      }
      if (max_delta <= tol) break;
    }

    double kkt = 0.0;
    for (Eigen::Index k = 0; k < p; ++k)
      if (k != j) kkt = std::max(kkt, std::abs(G(k, j) - r[k]));
    const double l1 = gamma.lpNorm<1>();
    const double tau2 = gjj - 2.0 * r[j] + gamma.dot(r) + lam * l1;
    if (!(tau2 > 1e-14 * gjj)) {
      std::ostringstream os;
      os << "node-wise regression for column " << j
         << " left no residual variance (tau^2 = " << tau2 << ")";
      throw RankDeficientError(os.str(), {j});
    }

    out.theta.row(j) = -gamma.transpose() / tau2;
    out.theta(j, j) = 1.0 / tau2;
    auto& d = out.diag[static_cast<std::size_t>(j)];
    d.tau2 = tau2;
    d.kkt_residual = kkt;
    d.l1_norm = (1.0 + l1) / tau2;
    d.lambda = lam;
  }
  return out;
}

Matrix inverse_jacobian_theta(const Matrix& X, const Vector& beta_hat,
                              const PsiSpec& psi) {
  return spd_inverse(psi_jacobian(X, beta_hat, psi), "estimating-equation Jacobian");
}

DebiasReport debias(const Dataset& data, const Vector& beta_hat,
                    const PsiSpec& psi, const Matrix& theta, double alpha) {
  const Eigen::Index p = data.p();
  if (beta_hat.size() != p || theta.rows() != p || theta.cols() != p)
    throw DimensionError("debias: beta/theta dimensions do not match the design");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");

  const double n = static_cast<double>(data.n());
  const Vector t = data.X * beta_hat;
  Vector psi_i(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) psi_i[i] = psi.value(t[i], data.z[i]);
  const Vector psi_n = data.X.transpose() * psi_i / n;
  if (!psi_n.allFinite()) throw NumericalError("debias: non-finite estimating equation");

  DebiasReport out;
  out.beta_db = beta_hat - theta * psi_n;
  const Matrix S = weighted_gram(data.X, psi_i.cwiseProduct(psi_i));
  const Matrix TS = theta * S;
  out.se.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = TS.row(j).dot(theta.row(j));
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "debias: non-positive plug-in variance for coefficient " << j;
      throw RankDeficientError(os.str(), {j});
    }
    out.se[j] = std::sqrt(v / n);
  }
  const double q = normal_quantile(1.0 - alpha / 2.0);
  out.ci_low = out.beta_db - q * out.se;
  out.ci_high = out.beta_db + q * out.se;
  return out;
}

WaldReport wald_intervals(const Matrix& X, const Vector& beta_hat,
                          const NoiseModel& nm, LossKind kind, double alpha) {
  if (beta_hat.size() != X.cols()) throw DimensionError("beta length does not match X");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  Vector w_y, w_z;
  variance_weights(X, beta_hat, nm, w_y, w_z);
  const Matrix info = kind == LossKind::likelihood ? lik_information(X, w_y, w_z, nm)
                                                   : sur_information(X, w_y, w_z, nm);
  const Matrix cov = spd_inverse(info, "information matrix") /
                     static_cast<double>(X.rows());
  WaldReport out;
  out.se = cov.diagonal().cwiseSqrt();
  const double q = normal_quantile(1.0 - alpha / 2.0);
  out.ci_low = beta_hat - q * out.se;
  out.ci_high = beta_hat + q * out.se;
  return out;
}

double observed_auc(const Vector& scores, const Vector& z) {
  if (scores.size() != z.size()) throw DimensionError("observed_auc: length mismatch");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
  // Mann-Whitney statistic from mid-ranks.
  double rank_sum = 0.0, n1 = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) {
      const double zk = z[order[k]];
      if (zk != 0.0 && zk != 1.0) throw DomainError("observed_auc: labels must be 0 or 1");
      if (zk == 1.0) {
        rank_sum += mid;
        n1 += 1.0;
      }
    }
    i = j;
  }
  const double n0 = static_cast<double>(z.size()) - n1;
  if (n1 == 0.0 || n0 == 0.0) throw DomainError("observed_auc: both classes must be present");
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  // Acklam's rational approximation followed by one Halley step on erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

}  // namespace noisyglm
