#include "noisyglm/glm_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace noisyglm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// log(e^x + e^y), tolerating -inf in either argument.
double log_add_exp(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double hi = std::max(x, y);
  return hi + std::log1p(std::exp(-std::abs(x - y)));
}

}  // namespace

NoiseModel::NoiseModel(double rho0, double rho1) : rho0_(rho0), rho1_(rho1) {
  if (!std::isfinite(rho0) || !std::isfinite(rho1) || rho0 < 0.0 ||
      rho1 < 0.0 || rho0 + rho1 >= 1.0) {
    std::ostringstream os;
    os << "invalid noise rates (rho0=" << rho0 << ", rho1=" << rho1
       << "): need rho0, rho1 >= 0 and rho0 + rho1 < 1";
    throw DomainError(os.str());
  }
  a_ = 1.0 - rho0 - rho1;
  log_a_ = std::log(a_);
  log_rho0_ = safe_log(rho0);
  log_rho1_ = safe_log(rho1);
}

double softplus(double t) noexcept {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

double mean_y(double t) noexcept {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double mean_z(double t, const NoiseModel& nm) noexcept {
  return nm.a() * mean_y(t) + nm.b();
}

double link_ln(double mu_z, const NoiseModel& nm) {
  const double lo = nm.b();
  const double hi = nm.a() + nm.b();
  if (!(mu_z > lo && mu_z < hi)) {
    std::ostringstream os;
    os << "link_ln: mean " << mu_z << " outside (" << lo << ", " << hi << ")";
    throw DomainError(os.str());
  }
  constexpr double kEps = 1e-12;
  const double u = std::clamp((mu_z - lo) / nm.a(), kEps, 1.0 - kEps);
  return std::log(u) - std::log1p(-u);
}

NoiseLinkTerms noise_link_terms(double t, const NoiseModel& nm) noexcept {
  NoiseLinkTerms out;
  const double log_mu = -softplus(-t);
  const double log_1m_mu = -softplus(t);
  out.mu = std::exp(log_mu);
  const double var_y = std::exp(log_mu + log_1m_mu);

  out.log_mean_z = log_add_exp(nm.log_a() + log_mu, nm.log_rho0());
  out.log_1m_mean_z = log_add_exp(nm.log_a() + log_1m_mu, nm.log_rho1());
  out.mean_z = std::exp(out.log_mean_z);

  DerivativeBundle& d = out.d;
  d.h = out.log_mean_z - out.log_1m_mean_z;
  d.h1 = std::exp(nm.log_a() + log_mu + log_1m_mu - out.log_mean_z -
                  out.log_1m_mean_z);
  const double s_y = 1.0 - 2.0 * out.mu;
  const double s_z = 1.0 - 2.0 * out.mean_z;
  d.h2 = d.h1 * s_y - d.h1 * d.h1 * s_z;
  d.h3 = d.h2 * (s_y - 2.0 * d.h1 * s_z) -
         2.0 * var_y * d.h1 * (1.0 - nm.a() * d.h1);
  return out;
}

DerivativeBundle h_ln(double t, const NoiseModel& nm) noexcept {
  return noise_link_terms(t, nm).d;
}

double surrogate_target(double z, const NoiseModel& nm) noexcept {
  return (z - nm.b()) / nm.a();
}

double variance_ratio(double t, const NoiseModel& nm) noexcept {
  // r = h'/a, evaluated in log space.
  const double log_mu = -softplus(-t);
  const double log_1m_mu = -softplus(t);
  const double log_mz = log_add_exp(nm.log_a() + log_mu, nm.log_rho0());
  const double log_1m_mz = log_add_exp(nm.log_a() + log_1m_mu, nm.log_rho1());
  return std::exp(log_mu + log_1m_mu - log_mz - log_1m_mz);
}

}  // namespace noisyglm
