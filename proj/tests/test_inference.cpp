#include <cmath>

#include "doctest.h"
#include "noisyglm/inference.hpp"
#include "noisyglm/optim.hpp"
#include "noisyglm/simgen.hpp"
#include "oracles.hpp"

using namespace noisyglm;

namespace {

Matrix mixture(Eigen::Index n, Eigen::Index p, double d, std::uint64_t seed) {
  DesignSpec ds;
  ds.n = n;
  ds.p = p;
  ds.d = d;
  ds.seed = seed;
  return gen_design(ds);
}

double min_eig(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("zero noise gives equal information matrices") {
  const Matrix X = mixture(300, 4, 0.5, 1);
  const Vector beta = Vector::Constant(4, 0.5);
  const InfoPair info = info_matrices(X, beta, NoiseModel{});
  CHECK((info.I_lik - info.I_sur).lpNorm<Eigen::Infinity>() < 1e-12);
  Vector w(300);
  const Vector t = X * beta;
  for (Eigen::Index i = 0; i < 300; ++i) w[i] = mean_y(t[i]) * (1 - mean_y(t[i]));
  CHECK((info.I_lik - weighted_gram(X, w)).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(info.rel_l2_diff < 1e-10);
  CHECK(info.gap < 1e-7);
  CHECK(info.amse_lik == doctest::Approx(info.amse_sur));
}

TEST_CASE("intercept-only design is sharp") {
  const Matrix X = Matrix::Ones(200, 1);
  for (auto [r0, r1] : {std::pair{0.1, 0.05}, std::pair{0.3, 0.0}, std::pair{0.2, 0.2}}) {
    const NoiseModel nm(r0, r1);
    const InfoPair info = info_matrices(X, Vector::Constant(1, 0.7), nm);
    CHECK(info.rel_l2_diff < 1e-12);
    CHECK(info.gap < 1e-7);
    const Cor1Check c = cor1_bound_check(X, Vector::Constant(1, 0.7), nm);
    CHECK(c.lhs < 1e-12);
    CHECK(c.gap < 1e-7);
  }
}

TEST_CASE("information ordering and the efficiency bound") {
  const NoiseModel nm(0.1, 0.05);
  const Vector beta = Vector::Constant(10, 1.0 / std::sqrt(10.0));
  for (int rep = 0; rep < 25; ++rep) {
    const Matrix X = mixture(1000, 10, 0.3 * (rep % 5), 100 + rep);
    const InfoPair info = info_matrices(X, beta, nm);
    CHECK(min_eig(info.I_lik) > 0.0);
    CHECK(min_eig(info.I_sur) > 0.0);
    CHECK(min_eig(info.I_lik - info.I_sur) >= -1e-8 * info.I_lik.trace());
    CHECK(info.rel_l2_diff >= 0.0);
    CHECK(info.rel_l2_diff <= 1.0 + 1e-8);
    CHECK(info.amse_lik <= info.amse_sur * (1 + 1e-12));
    const Cor1Check c = cor1_bound_check(X, beta, nm);
    CHECK(c.holds());
    CHECK(c.lhs == doctest::Approx(info.rel_l2_diff));
  }
}

TEST_CASE("zero noise bound check") {
  const Matrix X = mixture(100, 3, 0.2, 3);
  const Cor1Check c = cor1_bound_check(X, Vector::Ones(3), NoiseModel{});
  CHECK(c.lhs < 1e-10);
  CHECK(c.rhs < 1e-10);
}

TEST_CASE("subspace gap properties") {
  oracle::Draws rng(21);
  const Matrix A = rng.normal(40, 3);
  const Matrix M = rng.normal(3, 3) + 3.0 * Matrix::Identity(3, 3);
  CHECK(subspace_gap(A, A * M) < 1e-10);

  Matrix e1(2, 1), e2(2, 1);
  e1 << 1, 0;
  e2 << 0, 1;
  CHECK(subspace_gap(e1, e2) == doctest::Approx(1.0));

  for (int rep = 0; rep < 10; ++rep) {
    const Matrix X = rng.normal(30 + rep, 4);
    const Vector beta = rng.normal_vec(4);
    const NoiseModel nm(0.2, 0.1);
    Vector r(X.rows());
    const Vector t = X * beta;
    for (Eigen::Index i = 0; i < t.size(); ++i) r[i] = variance_ratio(t[i], nm);
    const Matrix B = r.asDiagonal() * X;
    const double gap = subspace_gap(X, B);
    CHECK(gap == doctest::Approx(oracle::dense_projector_gap(X, B)).epsilon(1e-8));
    CHECK(gap == doctest::Approx(subspace_gap(B, X)).epsilon(1e-12));
    CHECK(gap == doctest::Approx(info_matrices(X, beta, nm).gap).epsilon(1e-10));
  }
}

TEST_CASE("rank deficiency is reported with column indices") {
  oracle::Draws rng(22);
  Matrix X = rng.normal(50, 4);
  X.col(3) = X.col(0) + X.col(1);
  CHECK(dependent_columns(X).size() == 1);
  try {
    info_matrices(X, Vector::Zero(4), NoiseModel(0.1, 0.05));
    FAIL("expected RankDeficientError");
  } catch (const RankDeficientError& e) {
    CHECK(e.columns().size() == 1);
  }
  CHECK_THROWS_AS(subspace_gap(X, X), RankDeficientError);
  CHECK(dependent_columns(rng.normal(50, 4)).empty());
}

TEST_CASE("psi accessors") {
  const NoiseModel nm(0.1, 0.05);
  for (double t = -10; t <= 10; t += 0.5) {
    for (auto kind : {LossKind::likelihood, LossKind::surrogate}) {
      const PsiSpec psi = PsiSpec::for_loss(kind, nm);
      CHECK(psi.jac_I(t) >= 0.0);
      for (double z : {0.0, 1.0}) {
        // psi' = psi'_I + psi'_R
        const double d = oracle::fd([&](double u) { return psi.value(u, z); }, t);
        CHECK(psi.jac_I(t) + psi.jac_R(t, z) == doctest::Approx(d).epsilon(1e-6));
        if (kind == LossKind::surrogate) CHECK(psi.jac_R(t, z) == 0.0);
      }
    }
  }
}

TEST_CASE("estimating equation vanishes at the conditional mean") {
  oracle::Draws rng(23);
  const NoiseModel nm(0.2, 0.1);
  const Matrix X = rng.normal(100, 3);
  const Vector beta = rng.normal_vec(3);
  const PsiSpec psi = PsiSpec::for_loss(LossKind::likelihood, nm);
  const Vector t = X * beta;
  Vector s = Vector::Zero(3);
  for (Eigen::Index i = 0; i < 100; ++i) s += psi.value(t[i], mean_z(t[i], nm)) * X.row(i).transpose();
  CHECK(s.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("node-wise theta approaches the exact inverse as lambda shrinks") {
  oracle::Draws rng(24);
  const NoiseModel nm(0.1, 0.05);
  const Matrix X = rng.normal(2000, 5);
  const Vector beta = rng.normal_vec(5, 0.5);
  for (auto kind : {LossKind::likelihood, LossKind::surrogate}) {
    const PsiSpec psi = PsiSpec::for_loss(kind, nm);
    const ThetaEstimate th = nodewise_theta(X, beta, psi, Vector::Constant(1, 1e-9));
    const Matrix exact = inverse_jacobian_theta(X, beta, psi);
    CHECK((th.theta - exact).lpNorm<Eigen::Infinity>() < 1e-3);
  }
}

TEST_CASE("node-wise KKT conditions") {
  oracle::Draws rng(25);
  const NoiseModel nm(0.1, 0.05);
  const Matrix X = rng.normal(100, 150);
  Vector beta = Vector::Zero(150);
  beta.head(5).setConstant(0.5);
  const PsiSpec psi = PsiSpec::for_loss(LossKind::likelihood, nm);
  const ThetaEstimate th = nodewise_theta(X, beta, psi);
  const Matrix G = psi_jacobian(X, beta, psi);
  for (Eigen::Index j = 0; j < 150; ++j) {
    const auto& d = th.diag[static_cast<std::size_t>(j)];
    CHECK(d.tau2 > 0.0);
    CHECK(th.theta(j, j) == doctest::Approx(1.0 / d.tau2));
    CHECK(d.kkt_residual <= d.lambda * (1 + 1e-8));
    const double l1 = th.theta.row(j).lpNorm<1>();
    CHECK(d.l1_norm == doctest::Approx(l1));
    Vector e = Vector::Zero(150);
    e[j] = 1.0;
    const double resid = (e - G * th.theta.row(j).transpose()).lpNorm<Eigen::Infinity>();
    CHECK(resid <= d.lambda * l1 + 1e-8);
  }
}

TEST_CASE("node-wise fails on a zero-variance column") {
  oracle::Draws rng(26);
  Matrix X = rng.normal(50, 4);
  X.col(2).setZero();
  CHECK_THROWS_AS(nodewise_theta(X, Vector::Zero(4), PsiSpec::for_loss(LossKind::surrogate, NoiseModel{})),
                  RankDeficientError);
  CHECK_THROWS_AS(nodewise_theta(X, Vector::Zero(4), PsiSpec{}, Vector::Zero(3)), DimensionError);
}

TEST_CASE("debiasing an unpenalized fit is the identity") {
  oracle::Draws rng(27);
  const NoiseModel nm(0.1, 0.05);
  Dataset d;
  d.X = rng.normal(800, 4);
  d.z = rng.noisy_labels(d.X, Vector::Constant(4, 0.5), nm.rho0(), nm.rho1());
  for (auto kind : {LossKind::likelihood, LossKind::surrogate}) {
    FitConfig cfg;
    cfg.loss_kind = kind;
    const FitResult r = fit(d, nm, cfg);
    const PsiSpec psi = PsiSpec::for_loss(kind, nm);
    const Matrix theta = inverse_jacobian_theta(d.X, r.beta, psi);
    const DebiasReport rep = debias(d, r.beta, psi, theta, 0.05);
    // psi_n is the loss gradient, which vanishes up to the solver tolerance.
    const Vector g = evaluate_loss(kind, r.beta, d, nm).gradient;
    CHECK(g.norm() < 1e-6);
    CHECK((rep.beta_db - (r.beta - theta * g)).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((rep.beta_db - r.beta).lpNorm<Eigen::Infinity>() < 1e-5);
    CHECK(rep.se.minCoeff() > 0.0);
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(rep.ci_low[j] <= rep.beta_db[j]);
      CHECK(rep.beta_db[j] <= rep.ci_high[j]);
      CHECK((rep.ci_high[j] - rep.beta_db[j]) == doctest::Approx(1.959963984540054 * rep.se[j]));
    }
  }
  CHECK_THROWS_AS(debias(d, Vector::Zero(4), PsiSpec{}, Matrix::Identity(4, 4), 1.5), DomainError);
  CHECK_THROWS_AS(debias(d, Vector::Zero(3), PsiSpec{}, Matrix::Identity(4, 4), 0.05), DimensionError);
}

TEST_CASE("zero-noise standard errors agree across psi kinds") {
  oracle::Draws rng(28);
  Dataset d;
  d.X = rng.normal(20000, 3);
  d.z = rng.logistic_labels(d.X, Vector::Constant(3, 0.4));
  FitConfig cfg;
  const FitResult r = fit(d, NoiseModel{}, cfg);
  const auto se = [&](LossKind kind) {
    const PsiSpec psi = PsiSpec::for_loss(kind, NoiseModel{});
    return debias(d, r.beta, psi, inverse_jacobian_theta(d.X, r.beta, psi), 0.05).se;
  };
  const Vector a = se(LossKind::likelihood), b = se(LossKind::surrogate);
  CHECK(((a - b).array() / b.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("wald intervals") {
  oracle::Draws rng(29);
  const NoiseModel nm(0.1, 0.05);
  const Matrix X = rng.normal(500, 3);
  const Vector beta = Vector::Constant(3, 0.3);
  const WaldReport lik = wald_intervals(X, beta, nm, LossKind::likelihood, 0.05);
  const WaldReport sur = wald_intervals(X, beta, nm, LossKind::surrogate, 0.05);
  const InfoPair info = info_matrices(X, beta, nm);
  const Matrix inv = info.I_lik.inverse();
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(lik.se[j] == doctest::Approx(std::sqrt(inv(j, j) / 500.0)));
    CHECK(lik.se[j] <= sur.se[j] * (1 + 1e-12));
  }
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_quantile(0.001) == doctest::Approx(-3.090232306167814).epsilon(1e-12));
  CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-9));
  for (double p : {0.01, 0.2, 0.7, 0.99})
    CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1 - p)).epsilon(1e-10));
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
}

TEST_CASE("observed-label AUC matches the pairwise count") {
  oracle::Draws rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index n = 60;
    Vector s = rng.normal_vec(n);
    // Rounding creates ties, which count one half.
    for (Eigen::Index i = 0; i < n; ++i) s[i] = std::round(2.0 * s[i]) / 2.0;
    const Vector z = rng.bernoulli(Vector::Constant(n, 0.4));
    double wins = 0, pairs = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (z[i] == 1.0 && z[j] == 0.0) {
          ++pairs;
          wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    CHECK(observed_auc(s, z) == doctest::Approx(wins / pairs).epsilon(1e-13));
  }
  Vector s(4), z(4);
  s << 0.1, 0.2, 0.3, 0.4;
  z << 0, 0, 1, 1;
  CHECK(observed_auc(s, z) == 1.0);
  CHECK(observed_auc(-s, z) == 0.0);
  CHECK_THROWS_AS(observed_auc(s, Vector::Zero(4)), DomainError);
  CHECK_THROWS_AS(observed_auc(s, Vector::Zero(3)), DimensionError);
}
