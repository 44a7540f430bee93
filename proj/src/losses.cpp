#include "noisyglm/losses.hpp"

#include <cmath>
#include <sstream>

namespace noisyglm {

std::string to_string(LossKind kind) {
  return kind == LossKind::likelihood ? "lik" : "sur";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "lik" || s == "likelihood") return LossKind::likelihood;
  if (s == "sur" || s == "surrogate") return LossKind::surrogate;
  throw DomainError("unknown loss kind '" + s + "' (expected lik or sur)");
}

Dataset::Dataset(Matrix X_, Vector z_, std::optional<Eigen::Index> intercept)
    : X(std::move(X_)), z(std::move(z_)), intercept_col(intercept) {
  validate();
}

void Dataset::validate() const {
  if (X.rows() < 1 || X.cols() < 1) throw DimensionError("empty design matrix");
  if (z.size() != X.rows()) {
    std::ostringstream os;
    os << "label length " << z.size() << " does not match " << X.rows()
       << " rows";
    throw DimensionError(os.str());
  }
  if (!X.allFinite()) throw DomainError("design matrix has non-finite entries");
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] != 0.0 && z[i] != 1.0) {
      std::ostringstream os;
      os << "label at row " << i << " is " << z[i] << ", expected 0 or 1";
      throw DomainError(os.str());
    }
  }
  if (y && y->size() != X.rows())
    throw DimensionError("clean label length does not match design");
  if (intercept_col && (*intercept_col < 0 || *intercept_col >= X.cols()))
    throw DimensionError("intercept column out of range");
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.z.resize(static_cast<Eigen::Index>(rows.size()));
  if (y) out.y = Vector(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.X.row(i) = X.row(rows[k]);
    out.z[i] = z[rows[k]];
    if (y) (*out.y)[i] = (*y)[rows[k]];
  }
  out.intercept_col = intercept_col;
  return out;
}

namespace {

void check_beta(const Vector& beta, const Dataset& data) {
  if (beta.size() != data.p()) {
    std::ostringstream os;
    os << "coefficient length " << beta.size() << " does not match " << data.p()
       << " columns";
    throw DimensionError(os.str());
  }
}

}  // namespace

double loss_value_deriv_eta(LossKind kind, const Vector& eta, const Vector& z,
                            const NoiseModel& nm, Vector& deriv) {
  const Eigen::Index n = eta.size();
  deriv.resize(n);
  double sum = 0.0;
  if (kind == LossKind::likelihood) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const NoiseLinkTerms k = noise_link_terms(eta[i], nm);
      // A(h) - z h = -[z log m + (1-z) log(1-m)]
      sum -= z[i] * k.log_mean_z + (1.0 - z[i]) * k.log_1m_mean_z;
      deriv[i] = (k.mean_z - z[i]) * k.d.h1;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = eta[i];
      sum += softplus(t) - surrogate_target(z[i], nm) * t;
      deriv[i] = mean_y(t) - surrogate_target(z[i], nm);
    }
  }
  return sum / static_cast<double>(n);
}

double loss_value_eta(LossKind kind, const Vector& eta, const Vector& z,
                      const NoiseModel& nm) {
  const Eigen::Index n = eta.size();
  double sum = 0.0;
  if (kind == LossKind::likelihood) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const NoiseLinkTerms k = noise_link_terms(eta[i], nm);
      sum -= z[i] * k.log_mean_z + (1.0 - z[i]) * k.log_1m_mean_z;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      sum += softplus(eta[i]) - surrogate_target(z[i], nm) * eta[i];
  }
  return sum / static_cast<double>(n);
}

HessianTerms hessian_terms_eta(LossKind kind, const Vector& eta,
                               const Vector& z, const NoiseModel& nm) {
  const Eigen::Index n = eta.size();
  HessianTerms ht{Vector(n), Vector::Zero(n)};
  if (kind == LossKind::likelihood) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const NoiseLinkTerms k = noise_link_terms(eta[i], nm);
      // A''(h) = m(1-m)
      ht.rho_I[i] = std::exp(k.log_mean_z + k.log_1m_mean_z) * k.d.h1 * k.d.h1;
      ht.rho_R[i] = (k.mean_z - z[i]) * k.d.h2;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = mean_y(eta[i]);
      ht.rho_I[i] = m * (1.0 - m);
    }
  }
  return ht;
}

LossEval evaluate_loss(LossKind kind, const Vector& beta, const Dataset& data,
                       const NoiseModel& nm, bool with_hessian) {
  check_beta(beta, data);
  const Vector eta = data.X * beta;
  Vector deriv;
  LossEval out;
  out.value = loss_value_deriv_eta(kind, eta, data.z, nm, deriv);
  out.gradient = data.X.transpose() * deriv / static_cast<double>(data.n());
  if (with_hessian) out.hessian_terms = hessian_terms_eta(kind, eta, data.z, nm);
  return out;
}

LossEval loss_lik(const Vector& beta, const Dataset& data, const NoiseModel& nm,
                  bool with_hessian) {
  return evaluate_loss(LossKind::likelihood, beta, data, nm, with_hessian);
}

LossEval loss_sur(const Vector& beta, const Dataset& data, const NoiseModel& nm,
                  bool with_hessian) {
  return evaluate_loss(LossKind::surrogate, beta, data, nm, with_hessian);
}

Matrix weighted_gram(const Matrix& X, const Vector& w) {
  if (w.size() != X.rows()) throw DimensionError("weight length mismatch");
  Matrix g = X.transpose() * w.asDiagonal() * X;
  g /= static_cast<double>(X.rows());
  return 0.5 * (g + g.transpose());
}

Matrix dense_hessian(const LossEval& eval, const Matrix& X) {
  if (!eval.hessian_terms)
    throw Error("dense_hessian: loss was evaluated without hessian terms");
  return weighted_gram(X, eval.hessian_terms->rho_I + eval.hessian_terms->rho_R);
}

UnbiasednessResult unbiasedness_check(const Vector& beta, const Dataset& data,
                                      const Matrix& z_draws,
                                      const NoiseModel& nm) {
  if (!data.y) throw Error("unbiasedness_check requires clean labels y");
  check_beta(beta, data);
  if (z_draws.rows() != data.n() || z_draws.cols() < 1)
    throw DimensionError("z_draws must be n x R with R >= 1");

  const Vector eta = data.X * beta;
  const double clean = loss_value_eta(LossKind::surrogate, eta, *data.y,
                                      NoiseModel{});
  const Eigen::Index reps = z_draws.cols();
  Vector values(reps);
  for (Eigen::Index r = 0; r < reps; ++r)
    values[r] = loss_value_eta(LossKind::surrogate, eta, z_draws.col(r), nm);

  UnbiasednessResult out;
  const double mean = values.mean();
  out.gap = std::abs(mean - clean);
  if (reps > 1) {
    const double var = (values.array() - mean).square().sum() /
                       static_cast<double>(reps - 1);
    out.mc_stderr = std::sqrt(var / static_cast<double>(reps));
  }
  return out;
}

}  // namespace noisyglm
