#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "noisyglm/glm_core.hpp"
#include "noisyglm/types.hpp"

namespace noisyglm {

/// Seeded generator with a fixed, platform-independent output stream:
/// mt19937_64 words, 53-bit uniforms, and Box-Muller normals. The standard
/// library distributions are avoided because their algorithms are
/// implementation-defined.
class Rng {
 public:
  static constexpr const char* algorithm = "mt19937_64/boxmuller/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double normal() noexcept;

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Independent stream seed for (master, a, b) via splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

enum class DesignKind { gaussian_mixture, gaussian };
std::string to_string(DesignKind k);
DesignKind design_kind_from_string(const std::string& s);

/// Sigma_ij = scale * rho^|i-j|.
struct Ar1Cov {
  double rho = 0.2;
  double scale = 1.0;
};

struct DesignSpec {
  DesignKind kind = DesignKind::gaussian_mixture;
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  double d = 0.0;  // mixture centers are +-(d, ..., d)
  Ar1Cov cov;
  std::uint64_t seed = 0;

  void validate() const;
};

Matrix ar1_covariance(Eigen::Index p, const Ar1Cov& cov);

/// Rows i.i.d. from 0.5 N(mu, Sigma) + 0.5 N(-mu, Sigma) (or N(0, Sigma)
/// for the plain Gaussian kind), using the Cholesky factor of the AR(1)
/// covariance applied as its two-term recursion.
Matrix gen_design(const DesignSpec& spec);

/// y_i ~ Bernoulli(mu(x_i' beta0)).
Vector gen_labels(const Matrix& X, const Vector& beta0, std::uint64_t seed);

/// Flips 1 -> 0 with probability rho1 and 0 -> 1 with probability rho0.
Vector flip_labels(const Vector& y, const NoiseModel& nm, std::uint64_t seed);

/// Positive-unlabeled sampling description.
struct PuSpec {
  double pi = 0.0;  // P(y=1 | z=0), prevalence of positives among unlabeled
  double n_labeled = 0.0;
  double n_unlabeled = 0.0;

  void validate() const;
};

/// NoiseModel(0, pi n_u / (n_l + pi n_u)).
NoiseModel pu_noise_rates(const PuSpec& spec);

/// Intercept shift log(1 + n_l / (pi n_u)) between the case-control and
/// prospective parameterizations.
double case_control_gamma(const PuSpec& spec);

/// Rescales `cov` so that beta0' Sigma beta0 equals target_var.
Ar1Cov scale_covariance_for_signal(const Ar1Cov& cov, const Vector& beta0,
                                   double target_var);
Matrix scale_covariance_for_signal(const Matrix& sigma, const Vector& beta0,
                                   double target_var);

}  // namespace noisyglm
