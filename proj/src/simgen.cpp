#include "noisyglm/simgen.hpp"

#include <cmath>
#include <numbers>

namespace noisyglm {

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ b);
}

std::string to_string(DesignKind k) {
  return k == DesignKind::gaussian ? "gaussian" : "gaussian_mixture";
}

DesignKind design_kind_from_string(const std::string& s) {
  if (s == "gaussian") return DesignKind::gaussian;
  if (s == "gaussian_mixture" || s == "mixture") return DesignKind::gaussian_mixture;
  throw DomainError("unknown design kind '" + s + "'");
}

void DesignSpec::validate() const {
  if (n < 1 || p < 1) throw DomainError("design needs n >= 1 and p >= 1");
  if (!(cov.rho > -1.0 && cov.rho < 1.0))
    throw DomainError("AR(1) correlation must lie in (-1, 1)");
  if (!(cov.scale > 0.0)) throw DomainError("covariance scale must be positive");
  if (!std::isfinite(d)) throw DomainError("mixture offset must be finite");
}

Matrix ar1_covariance(Eigen::Index p, const Ar1Cov& cov) {
  Matrix s(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      s(i, j) = cov.scale * std::pow(cov.rho, static_cast<double>(std::abs(i - j)));
  return s;
}

Matrix gen_design(const DesignSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double rho = spec.cov.rho;
  const double innov = std::sqrt(1.0 - rho * rho);
  const double sd = std::sqrt(spec.cov.scale);
  const bool mixture = spec.kind == DesignKind::gaussian_mixture;

  Matrix X(spec.n, spec.p);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    double center = 0.0;
    if (mixture) center = rng.uniform() < 0.5 ? spec.d : -spec.d;
    double prev = rng.normal();
    X(i, 0) = sd * prev + center;
    for (Eigen::Index j = 1; j < spec.p; ++j) {
      prev = rho * prev + innov * rng.normal();
      X(i, j) = sd * prev + center;
    }
  }
  return X;
}

Vector gen_labels(const Matrix& X, const Vector& beta0, std::uint64_t seed) {
  if (beta0.size() != X.cols()) throw DimensionError("beta0 length does not match X");
  const Vector t = X * beta0;
  Rng rng(seed);
  Vector y(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    y[i] = rng.uniform() < mean_y(t[i]) ? 1.0 : 0.0;
  return y;
}

Vector flip_labels(const Vector& y, const NoiseModel& nm, std::uint64_t seed) {
  Rng rng(seed);
  Vector z(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double u = rng.uniform();
    if (y[i] == 1.0) {
      z[i] = u < nm.rho1() ? 0.0 : 1.0;
    } else if (y[i] == 0.0) {
      z[i] = u < nm.rho0() ? 1.0 : 0.0;
    } else {
      throw DomainError("flip_labels: labels must be 0 or 1");
    }
  }
  return z;
}

void PuSpec::validate() const {
  if (!(pi > 0.0 && pi < 1.0)) throw DomainError("PU prevalence must lie in (0, 1)");
  if (!(n_labeled > 0.0) || !(n_unlabeled > 0.0))
    throw DomainError("PU sample counts must be positive");
}

NoiseModel pu_noise_rates(const PuSpec& spec) {
  spec.validate();
  const double pos_unl = spec.pi * spec.n_unlabeled;
  return NoiseModel(0.0, pos_unl / (spec.n_labeled + pos_unl));
}

double case_control_gamma(const PuSpec& spec) {
  spec.validate();
  return std::log1p(spec.n_labeled / (spec.pi * spec.n_unlabeled));
}

Matrix scale_covariance_for_signal(const Matrix& sigma, const Vector& beta0,
                                   double target_var) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != beta0.size())
    throw DimensionError("covariance and beta0 dimensions disagree");
  if (!(target_var > 0.0)) throw DomainError("target variance must be positive");
  const double v = beta0.dot(sigma * beta0);
  if (!(v > 0.0)) throw DomainError("beta0 must be nonzero");
  return (target_var / v) * sigma;
}

Ar1Cov scale_covariance_for_signal(const Ar1Cov& cov, const Vector& beta0,
                                   double target_var) {
  if (!(target_var > 0.0)) throw DomainError("target variance must be positive");
  // Quadratic form over the nonzero coefficients only.
  IndexSet nz;
  for (Eigen::Index j = 0; j < beta0.size(); ++j)
    if (beta0[j] != 0.0) nz.push_back(j);
  double v = 0.0;
  for (auto i : nz)
    for (auto j : nz)
      v += beta0[i] * beta0[j] * std::pow(cov.rho, static_cast<double>(std::abs(i - j)));
  v *= cov.scale;
  if (!(v > 0.0)) throw DomainError("beta0 must be nonzero");
  return Ar1Cov{cov.rho, cov.scale * target_var / v};
}

}  // namespace noisyglm
