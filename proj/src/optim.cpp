#include "noisyglm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace noisyglm {

void FitConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw DomainError("lambda must be finite and nonnegative");
  if (radius) {
    if (loss_kind != LossKind::likelihood)
      throw DomainError("radius constraint applies to the likelihood loss only");
    if (!(*radius > 0.0)) throw DomainError("radius must be positive");
  }
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");
  if (!(tol_obj > 0.0)) throw DomainError("tol_obj must be positive");
  if (tol_gradmap && !(*tol_gradmap > 0.0))
    throw DomainError("tol_gradmap must be positive");
  if (!(backtrack_shrink > 0.0 && backtrack_shrink < 1.0))
    throw DomainError("backtrack_shrink must lie in (0, 1)");
  if (!(step_init > 0.0)) throw DomainError("step_init must be positive");
  if (!(divergence_norm > 0.0)) throw DomainError("divergence_norm must be positive");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::gradmap_tol: return "gradmap_tol";
    case Termination::obj_tol: return "obj_tol";
    case Termination::max_iter: return "max_iter";
    case Termination::diverged: return "diverged";
  }
  return "unknown";
}

Vector prox_l1(const Vector& v, double threshold, const IndexSet& unpenalized) {
  if (threshold < 0.0) throw DomainError("prox_l1: negative threshold");
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v[i]) - threshold;
    out[i] = mag > 0.0 ? std::copysign(mag, v[i]) : 0.0;
  }
  for (auto j : unpenalized)
    if (j >= 0 && j < v.size()) out[j] = v[j];
  return out;
}

Vector project_l2_ball(const Vector& v, double r) {
  if (!(r > 0.0)) throw DomainError("project_l2_ball: radius must be positive");
  const double norm = v.norm();
  if (norm <= r) return v;
  return (r / norm) * v;
}

namespace {

struct Problem {
  const Dataset& data;
  const NoiseModel& nm;
  LossKind kind;
  double lambda;
  std::vector<char> penalized;  // per column
  double radius;                // <= 0 means unconstrained

  double penalty(const Vector& beta) const {
    if (lambda == 0.0) return 0.0;
    double s = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (penalized[static_cast<std::size_t>(j)]) s += std::abs(beta[j]);
    return lambda * s;
  }

  // Prox of t*lambda*||.||_1 plus the ball indicator: soft-threshold then
  // rescale onto the ball.
  Vector prox(const Vector& v, double t) const {
    Vector out = v;
    const double thr = t * lambda;
    if (thr > 0.0) {
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (!penalized[static_cast<std::size_t>(j)]) continue;
        const double mag = std::abs(v[j]) - thr;
        out[j] = mag > 0.0 ? std::copysign(mag, v[j]) : 0.0;
      }
    }
    if (radius > 0.0) {
      const double norm = out.norm();
      if (norm > radius) out *= radius / norm;
    }
    return out;
  }

  // True when the penalized surrogate objective decreases without bound
  // along beta / ||beta||: its asymptotic slope
  //   mean(max(0, e_i) - T(z_i) e_i) + lambda ||u_P||_1,  e = X u,
  // is negative.
  bool surrogate_unbounded_along(const Vector& beta, const Vector& eta) const {
    const double norm = beta.norm();
    if (kind != LossKind::surrogate || radius > 0.0 || norm == 0.0) return false;
    double slope = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double e = eta[i] / norm;
      slope += std::max(0.0, e) - surrogate_target(data.z[i], nm) * e;
      scale += std::abs(e);
    }
    const double m = static_cast<double>(eta.size());
    return slope / m + penalty(beta) / norm < -1e-10 * (1.0 + scale / m);
  }
};

// X * beta, skipping zero coefficients when beta is sparse.
Vector linear_predictor(const Matrix& X, const Vector& beta) {
  Eigen::Index nnz = 0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) nnz += beta[j] != 0.0;
  if (3 * nnz >= beta.size()) return X * beta;
  Vector eta = Vector::Zero(X.rows());
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) eta.noalias() += beta[j] * X.col(j);
  return eta;
}

IndexSet unpenalized_columns(const Dataset& data, const IndexSet& extra) {
  IndexSet cols = extra;
  if (data.intercept_col) cols.push_back(*data.intercept_col);
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  for (auto j : cols)
    if (j < 0 || j >= data.p())
      throw DimensionError("unpenalized column index out of range");
  return cols;
}

}  // namespace

FitResult fit(const Dataset& data, const NoiseModel& nm, const FitConfig& cfg) {
  cfg.validate();
  const Eigen::Index p = data.p();
  const double n = static_cast<double>(data.n());
  if (cfg.warm_start && cfg.warm_start->size() != p)
    throw DimensionError("warm start length does not match design columns");

  const IndexSet unpen = unpenalized_columns(data, cfg.unpenalized);
  Problem prob{data, nm, cfg.loss_kind, cfg.lambda,
               std::vector<char>(static_cast<std::size_t>(p), 1), 0.0};
  for (auto j : unpen) prob.penalized[static_cast<std::size_t>(j)] = 0;

  if (cfg.loss_kind == LossKind::likelihood) {
    if (cfg.radius) {
      prob.radius = *cfg.radius;
    } else {
      FitConfig sur = cfg;
      sur.loss_kind = LossKind::surrogate;
      sur.warm_start.reset();
      const FitResult s = fit(data, nm, sur);
      prob.radius = 100.0 * std::max(1.0, s.beta.norm());
    }
  }
  const double tol_gm =
      cfg.tol_gradmap.value_or(1e-8 * std::sqrt(static_cast<double>(p)));

  Vector beta = cfg.warm_start.value_or(Vector::Zero(p));
  if (prob.radius > 0.0 && beta.norm() > prob.radius)
    beta *= prob.radius / beta.norm();

  Vector eta = linear_predictor(data.X, beta);
  Vector deriv;
  double f = loss_value_deriv_eta(cfg.loss_kind, eta, data.z, nm, deriv);
  if (!std::isfinite(f))
    throw NumericalError("non-finite objective at the initial point");
  Vector grad = data.X.transpose() * deriv / n;
  double obj = f + prob.penalty(beta);

  FitResult res;
  res.radius = prob.radius;
  res.lambda = cfg.lambda;
  res.objective_trace.push_back(obj);
  double t = cfg.step_init;

  Vector cand, eta_c, deriv_c, diff, grad_prev;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    // Barzilai-Borwein trial step from the last accepted move; the
    // sufficient-decrease test below keeps the descent monotone.
    if (iter > 1) {
      const double sy = diff.dot(grad - grad_prev);
      if (sy > 0.0) t = std::clamp(diff.squaredNorm() / sy, 1e-12, 1e12);
    }
    double f_c = 0.0;
    while (true) {
      cand = prob.prox(beta - t * grad, t);
      diff = cand - beta;
      eta_c = linear_predictor(data.X, cand);
      f_c = loss_value_deriv_eta(cfg.loss_kind, eta_c, data.z, nm, deriv_c);
      const double model = f + grad.dot(diff) + diff.squaredNorm() / (2.0 * t);
      if (std::isfinite(f_c) && f_c <= model + 1e-14 * (1.0 + std::abs(f)))
        break;
      t *= cfg.backtrack_shrink;
      if (t < 1e-300) throw NumericalError("line search failed: step underflow");
    }

    const double gm = diff.norm() / t;
    const double obj_c = f_c + prob.penalty(cand);
    const double decrease = obj - obj_c;

    beta.swap(cand);
    eta.swap(eta_c);
    deriv.swap(deriv_c);
    f = f_c;
    obj = obj_c;
    grad_prev.swap(grad);
    grad.noalias() = data.X.transpose() * deriv / n;
    res.objective_trace.push_back(obj);
    res.iterations = iter;
    res.gradmap_norm = gm;

    if (gm <= tol_gm) {
      res.termination = Termination::gradmap_tol;
      break;
    }
    if (decrease <= cfg.tol_obj * (1.0 + std::abs(obj))) {
      res.termination = Termination::obj_tol;
      break;
    }
    if ((prob.radius == 0.0 && beta.norm() > cfg.divergence_norm) ||
        prob.surrogate_unbounded_along(beta, eta)) {
      res.termination = Termination::diverged;
      break;
    }
    res.termination = Termination::max_iter;
  }

  res.beta = beta;
  for (Eigen::Index j = 0; j < p; ++j)
    if (beta[j] != 0.0) res.active_set.push_back(j);
  return res;
}

double lambda_max(const Dataset& data, const NoiseModel& nm, LossKind kind,
                  const IndexSet& unpenalized) {
  const IndexSet unpen = unpenalized_columns(data, unpenalized);
  const Eigen::Index p = data.p();
  Vector beta = Vector::Zero(p);
  if (!unpen.empty()) {
    Dataset sub;
    sub.X.resize(data.n(), static_cast<Eigen::Index>(unpen.size()));
    for (std::size_t k = 0; k < unpen.size(); ++k)
      sub.X.col(static_cast<Eigen::Index>(k)) = data.X.col(unpen[k]);
    sub.z = data.z;
    FitConfig cfg;
    cfg.loss_kind = kind;
    const FitResult r = fit(sub, nm, cfg);
    for (std::size_t k = 0; k < unpen.size(); ++k)
      beta[unpen[k]] = r.beta[static_cast<Eigen::Index>(k)];
  }
  const Vector g = evaluate_loss(kind, beta, data, nm).gradient;
  double lmax = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (std::binary_search(unpen.begin(), unpen.end(), j)) continue;
    lmax = std::max(lmax, std::abs(g[j]));
  }
  return lmax;
}

Vector lambda_grid(double lmax, int count, double ratio) {
  if (!(lmax > 0.0) || count < 1 || !(ratio > 0.0 && ratio <= 1.0))
    throw DomainError("lambda_grid: need lmax > 0, count >= 1, ratio in (0,1]");
  Vector grid(count);
  if (count == 1) {
    grid[0] = lmax;
    return grid;
  }
  const double step = std::log(ratio) / static_cast<double>(count - 1);
  for (int k = 0; k < count; ++k) grid[k] = lmax * std::exp(step * k);
  return grid;
}

CvResult cv_select_lambda(const Dataset& data, const NoiseModel& nm,
                          const FitConfig& base_cfg, int folds,
                          const Vector& grid) {
  if (folds < 2) throw DomainError("cv_select_lambda: folds must be >= 2");
  if (grid.size() == 0) throw DomainError("cv_select_lambda: empty lambda grid");
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > 0.0)) throw DomainError("lambda grid must be positive");
    if (k > 0 && grid[k] > grid[k - 1])
      throw DomainError("lambda grid must be sorted in descending order");
  }
  if (data.n() < folds) throw DomainError("fewer observations than folds");

  FitConfig cfg = base_cfg;
  if (cfg.loss_kind == LossKind::likelihood && !cfg.radius) {
    FitConfig sur = base_cfg;
    sur.loss_kind = LossKind::surrogate;
    sur.lambda = grid[grid.size() - 1];
    sur.warm_start.reset();
    cfg.radius = 100.0 * std::max(1.0, fit(data, nm, sur).beta.norm());
  }

  const Eigen::Index G = grid.size();
  Matrix fold_loss(G, folds);
  for (int k = 0; k < folds; ++k) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < data.n(); ++i)
      (i % folds == k ? test : train).push_back(i);
    const Dataset tr = data.subset(train);
    const Dataset te = data.subset(test);

    FitConfig fc = cfg;
    for (Eigen::Index g = 0; g < G; ++g) {
      fc.lambda = grid[g];
      const FitResult r = fit(tr, nm, fc);
      if (r.termination == Termination::diverged) {
        // No minimizer here, nor at any smaller lambda on this fold.
        fold_loss.col(k).tail(G - g).setConstant(std::numeric_limits<double>::infinity());
        break;
      }
      fc.warm_start = r.beta;
      const Vector eta = te.X * r.beta;
      fold_loss(g, k) = loss_value_eta(cfg.loss_kind, eta, te.z, nm);
    }
  }

  CvResult out;
  out.cv_curve = fold_loss.rowwise().mean();
  out.cv_se.resize(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const double m = out.cv_curve[g];
    if (!std::isfinite(m)) {
      out.cv_se[g] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double var = (fold_loss.row(g).array() - m).square().sum() /
                       static_cast<double>(folds - 1);
    out.cv_se[g] = std::sqrt(var / folds);
  }
  std::size_t best = 0;
  for (Eigen::Index g = 1; g < G; ++g)
    if (out.cv_curve[g] <= out.cv_curve[static_cast<Eigen::Index>(best)])
      best = static_cast<std::size_t>(g);
  out.index = best;
  out.lambda = grid[static_cast<Eigen::Index>(best)];
  return out;
}

}  // namespace noisyglm
