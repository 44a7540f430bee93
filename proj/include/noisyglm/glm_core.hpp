#pragma once

// Label-noise GLM family: logistic mean, the affine noisy-label mean, its
// link, the map h from linear predictor to natural parameter, and the
// variance-ratio curve.
//
// Everything here is a pure function of its arguments.

#include "noisyglm/types.hpp"

namespace noisyglm {

/// Known class-conditional flip probabilities.
///
/// rho0 = P(z=1 | y=0), rho1 = P(z=0 | y=1). The observed-label mean is the
/// affine map a*mu + b with a = 1 - rho0 - rho1 and b = rho0. Construction
/// rejects rho0 + rho1 >= 1 (a <= 0) so downstream code never re-validates.
class NoiseModel {
 public:
  NoiseModel() : NoiseModel(0.0, 0.0) {}
  NoiseModel(double rho0, double rho1);

  double rho0() const noexcept { return rho0_; }
  double rho1() const noexcept { return rho1_; }
  double a() const noexcept { return a_; }
  double b() const noexcept { return rho0_; }
  bool noiseless() const noexcept { return rho0_ == 0.0 && rho1_ == 0.0; }

  // Cached logs; -inf when the corresponding rate is zero.
  double log_a() const noexcept { return log_a_; }
  double log_rho0() const noexcept { return log_rho0_; }
  double log_rho1() const noexcept { return log_rho1_; }

 private:
  double rho0_;
  double rho1_;
  double a_;
  double log_a_;
  double log_rho0_;
  double log_rho1_;
};

/// h and its first three derivatives at a linear predictor.
struct DerivativeBundle {
  double h = 0.0;
  double h1 = 0.0;
  double h2 = 0.0;
  double h3 = 0.0;
};

/// Everything the losses need at one linear predictor t, computed in log
/// space so saturated t stays finite.
struct NoiseLinkTerms {
  double mu = 0.0;           // mu(t)
  double mean_z = 0.0;       // a*mu(t) + b
  double log_mean_z = 0.0;   // log(a*mu + b)
  double log_1m_mean_z = 0.0;  // log(1 - a*mu - b)
  DerivativeBundle d;
};

/// log(1 + e^t) without overflow.
double softplus(double t) noexcept;

/// mu(t) = 1 / (1 + e^{-t}).
double mean_y(double t) noexcept;

/// a*mu(t) + b; lies in [b, a+b].
double mean_z(double t, const NoiseModel& nm) noexcept;

/// Inverse of mean_z: logit((mu_z - b) / a). Throws DomainError unless
/// b < mu_z < a + b.
double link_ln(double mu_z, const NoiseModel& nm);

/// h(t) = logit(a*mu(t) + b) with closed-form h', h'', h'''.
DerivativeBundle h_ln(double t, const NoiseModel& nm) noexcept;

NoiseLinkTerms noise_link_terms(double t, const NoiseModel& nm) noexcept;

/// T(z) = (z - b) / a, so that E[T(z) | x] = mu(x'beta).
double surrogate_target(double z, const NoiseModel& nm) noexcept;

/// r(t) = V(mu(t)) / V(mu_z(t)) with V(u) = u(1-u).
double variance_ratio(double t, const NoiseModel& nm) noexcept;

}  // namespace noisyglm
