#pragma once

// Discretized Girsanov log-likelihood of the drift parameter, its gradient,
// and the approximate MLE: closed form for drift linear in the parameter,
// damped Newton on the penalized loss in general. The diffusion parameter
// enters only through the plugged-in estimate vartheta_hat.

#include <cmath>
#include <string>
#include <vector>

#include "sdecal/matrix_ops.hpp"
#include "sdecal/sde_core.hpp"

namespace sdecal {

/// Penalty gamma^eps(mu) = eps^(alpha+1/2) * ||mu||_p^p. At p = 1 the
/// subgradient at a zero coordinate is taken as 0.
struct PenaltySpec {
  double alpha = 1.0;
  double p = 2.0;
  bool enabled = true;

  static PenaltySpec none() {
    PenaltySpec s;
    s.enabled = false;
    return s;
  }

  void validate() const {
    if (enabled && !(alpha > 0.0)) throw std::invalid_argument("PenaltySpec: alpha must be > 0");
    if (enabled && !(p >= 1.0)) throw std::invalid_argument("PenaltySpec: p must be >= 1");
  }

  double value(double epsilon, const VectorXd& mu) const {
    if (!enabled) return 0.0;
    const double w = std::pow(epsilon, alpha + 0.5);
    double s = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) s += std::pow(std::abs(mu[i]), p);
    return w * s;
  }

  VectorXd gradient(double epsilon, const VectorXd& mu) const {
    VectorXd g = VectorXd::Zero(mu.size());
    if (!enabled) return g;
    const double w = std::pow(epsilon, alpha + 0.5);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const double m = mu[i];
      if (m == 0.0) continue;  // covers the p = 1 subgradient choice
      g[i] = w * p * std::pow(std::abs(m), p - 1.0) * (m > 0 ? 1.0 : -1.0);
    }
    return g;
  }
};

struct DriftFit {
  VectorXd mu_hat;
  double gradient_norm_at_solution = 0.0;
  int iterations = 0;
  bool converged = false;
  double loglik_at_solution = 0.0;
  std::string reason;  // empty, "MaxIterExceeded", or "Degenerate"
};

/// Action of a^{-1}(vartheta, .) by factor-and-solve. When the model declares
/// a state-independent diffusion the inverse is formed once and applied by
/// multiplication; this is also what the streaming experiment kernels mirror.
class DiffusionSolver {
 public:
  DiffusionSolver(const ModelSpec& model, const MatrixXd& vartheta)
      : model_(&model), vartheta_(vartheta) {}

  /// a^{-1}(vartheta, x) * rhs for a matrix (or vector) rhs.
  MatrixXd apply(const VectorXd& x, const MatrixXd& rhs) {
    if (model_->constant_diffusion) {
      if (!have_const_) {
        const MatrixXd ainv = inverse_at(x);
        const_inverse_ = ainv;
        have_const_ = true;
      }
      return const_inverse_ * rhs;
    }
    Eigen::LDLT<MatrixXd> ldlt(eval_a(*model_, vartheta_, x));
    check(ldlt);
    return ldlt.solve(rhs);
  }

  /// Explicit a^{-1} at x (constant models: the cached inverse).
  MatrixXd inverse_at(const VectorXd& x) {
    if (model_->constant_diffusion && have_const_) return const_inverse_;
    const MatrixXd a = eval_a(*model_, vartheta_, x);
    Eigen::LDLT<MatrixXd> ldlt(a);
    check(ldlt);
    MatrixXd ainv = ldlt.solve(MatrixXd::Identity(a.rows(), a.cols()));
    if (model_->constant_diffusion) {
      const_inverse_ = ainv;
      have_const_ = true;
    }
    return ainv;
  }

 private:
  static void check(const Eigen::LDLT<MatrixXd>& ldlt) {
    // LDLT::rcond() reports 1 on exactly singular input, so gauge the
    // conditioning from the pivoted diagonal instead.
    const VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    const double dmin = d.minCoeff();
    if (ldlt.info() != Eigen::Success || !(dmin > 1e-12 * dmax))
      throw_error("SingularDiffusion", "a(vartheta, x) solve is ill-conditioned");
  }

  const ModelSpec* model_;
  MatrixXd vartheta_;
  MatrixXd const_inverse_;
  bool have_const_ = false;
};

namespace detail {

inline void check_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw std::invalid_argument("delta must lie in (0, 1]");
}

/// Central-difference Jacobian of b(., x) when the model has no callable.
inline MatrixXd fd_drift_jacobian(const ModelSpec& model, const VectorXd& mu, const VectorXd& x) {
  MatrixXd j(model.dim_state, mu.size());
  VectorXd mu_p = mu, mu_m = mu;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const double h = 1e-7 * (1.0 + std::abs(mu[k]));
    mu_p[k] = mu[k] + h;
    mu_m[k] = mu[k] - h;
    j.col(k) = (model.drift(mu_p, x) - model.drift(mu_m, x)) / (2.0 * h);
    mu_p[k] = mu[k];
    mu_m[k] = mu[k];
  }
  return j;
}

}  // namespace detail

/// l^{m,delta}_D(mu | vartheta, data)
///   = sum_i a^{-1}b . (x_i - x_{i-1}) - (delta/2) sum_i b^T a^{-1} b,
/// everything evaluated at left endpoints.
inline double discretized_loglik(const DiscreteRecord& record, const ModelSpec& model,
                                 const VectorXd& mu, const MatrixXd& vartheta, double delta) {
  detail::check_delta(delta);
  DiffusionSolver solver(model, vartheta);
  double drift_term = 0.0, energy_term = 0.0;
  VectorXd dx(record.dim());
  for (Eigen::Index i = 0; i < record.increments(); ++i) {
    const VectorXd xl = record.state(i);
    dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
    const VectorXd b = model.drift(mu, xl);
    const VectorXd ainv_b = solver.apply(xl, b);
    drift_term += ainv_b.dot(dx);
    energy_term += b.dot(ainv_b);
  }
  const double value = drift_term - 0.5 * delta * energy_term;
  if (!std::isfinite(value))
    throw_error("NonFiniteOutput", "discretized_loglik produced a non-finite value");
  return value;
}

/// grad_mu l = sum_i Db^T a^{-1} (x_i - x_{i-1}) - delta sum_i Db^T a^{-1} b.
inline VectorXd loglik_gradient(const DiscreteRecord& record, const ModelSpec& model,
                                const VectorXd& mu, const MatrixXd& vartheta, double delta) {
  detail::check_delta(delta);
  DiffusionSolver solver(model, vartheta);
  VectorXd g = VectorXd::Zero(mu.size());
  VectorXd dx(record.dim());
  for (Eigen::Index i = 0; i < record.increments(); ++i) {
    const VectorXd xl = record.state(i);
    dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
    const VectorXd b = model.drift(mu, xl);
    const MatrixXd j = model.has_jacobian() ? model.drift_jacobian(mu, xl)
                                            : detail::fd_drift_jacobian(model, mu, xl);
    const VectorXd ainv_dx = solver.apply(xl, dx);
    const VectorXd ainv_b = solver.apply(xl, b);
    g.noalias() += j.transpose() * ainv_dx;
    g.noalias() -= delta * (j.transpose() * ainv_b);
  }
  if (!g.allFinite())
    throw_error("NonFiniteOutput", "loglik_gradient produced a non-finite value");
  return g;
}

namespace detail {

struct LinearNormalEq {
  MatrixXd gram_sum;  // sum_i B0^T a^{-1} B0 (before the gap factor)
  VectorXd driver;    // sum_i B0^T a^{-1} dx
};

inline LinearNormalEq accumulate_linear(const DiscreteRecord& record, const ModelSpec& model,
                                        const MatrixXd& vartheta_hat) {
  if (!model.b0)
    throw std::invalid_argument("amle_linear: model has no linear-drift B0 callable");
  const Eigen::Index n0 = model.dim_drift_param;
  DiffusionSolver solver(model, vartheta_hat);
  LinearNormalEq eq;
  eq.gram_sum = MatrixXd::Zero(n0, n0);
  eq.driver = VectorXd::Zero(n0);
  VectorXd dx(record.dim());
  if (model.constant_diffusion) {
    const MatrixXd ainv = solver.inverse_at(record.state(0));
    for (Eigen::Index i = 0; i < record.increments(); ++i) {
      const VectorXd xl = record.state(i);
      dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
      const MatrixXd b = model.b0(xl);
      const MatrixXd ainv_b = ainv * b;
      eq.gram_sum.noalias() += b.transpose() * ainv_b;
      eq.driver.noalias() += ainv_b.transpose() * dx;
    }
  } else {
    for (Eigen::Index i = 0; i < record.increments(); ++i) {
      const VectorXd xl = record.state(i);
      dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
      const MatrixXd b = model.b0(xl);
      const MatrixXd ainv_b = solver.apply(xl, b);
      eq.gram_sum.noalias() += b.transpose() * ainv_b;
      eq.driver.noalias() += ainv_b.transpose() * dx;
    }
  }
  return eq;
}

/// Solve gap*gram_sum * mu = driver and package the fit.
inline DriftFit finish_linear_fit(const LinearNormalEq& eq, double gap) {
  const MatrixXd gram = gap * eq.gram_sum;
  Eigen::PartialPivLU<MatrixXd> lu(gram);
  if (!(lu.rcond() > 1e-12))
    throw_error("SingularGram", "drift Gram matrix has condition estimate > 1e12");
  DriftFit fit;
  fit.mu_hat = lu.solve(eq.driver);
  fit.converged = true;
  fit.iterations = 0;
  const VectorXd grad = eq.driver - gram * fit.mu_hat;  // grad of l at mu_hat, delta = gap
  fit.gradient_norm_at_solution = grad.norm();
  fit.loglik_at_solution =
      fit.mu_hat.dot(eq.driver) - 0.5 * gap * fit.mu_hat.dot(eq.gram_sum * fit.mu_hat);
  return fit;
}

/// Assemble and solve the Kron normal equations from the constant-diffusion
/// sufficient statistics bb = sum beta0 beta0^T and w_raw = sum dx beta0^T;
/// the plugged-in diffusion enters once here through a^{-1}.
inline DriftFit finish_kron_const(const MatrixXd& bb, const MatrixXd& w_raw, const MatrixXd& ainv,
                                  double gap) {
  LinearNormalEq eq;
  eq.gram_sum = kron(bb, ainv);
  eq.driver = vec(MatrixXd(ainv * w_raw));
  return finish_linear_fit(eq, gap);
}

}  // namespace detail

/// Closed-form AMLE for b(mu,x) = B0(x)*mu:
///   mu_hat = (gap * sum B0^T a^{-1} B0)^{-1} * sum B0^T a^{-1} dx.
inline DriftFit amle_linear(const DiscreteRecord& record, const ModelSpec& model,
                            const MatrixXd& vartheta_hat) {
  return detail::finish_linear_fit(detail::accumulate_linear(record, model, vartheta_hat),
                                   record.gap());
}

/// Kronecker variant for b(mu,x) = A*beta0(x), mu = vec(A). With a constant
/// diffusion the normal equations assemble from the exact sufficient
/// statistics sum beta0 beta0^T and a^{-1} * sum dx beta0^T; otherwise the
/// general per-step Kronecker accumulation is used.
inline DriftFit amle_kron(const DiscreteRecord& record, const ModelSpec& model,
                          const MatrixXd& vartheta_hat) {
  if (model.structure != DriftStructure::LinearDriftKron || !model.beta0)
    throw std::invalid_argument("amle_kron: model is not of Kronecker linear-drift form");
  const Eigen::Index d = model.dim_state;
  const Eigen::Index m0 = model.dim_beta;
  DiffusionSolver solver(model, vartheta_hat);
  detail::LinearNormalEq eq;
  VectorXd dx(d);
  if (model.constant_diffusion) {
    const MatrixXd ainv = solver.inverse_at(record.state(0));
    MatrixXd bb = MatrixXd::Zero(m0, m0);
    MatrixXd w_raw = MatrixXd::Zero(d, m0);
    for (Eigen::Index i = 0; i < record.increments(); ++i) {
      const VectorXd xl = record.state(i);
      dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
      const VectorXd beta = model.beta0(xl);
      bb.noalias() += beta * beta.transpose();
      w_raw.noalias() += dx * beta.transpose();
    }
    return detail::finish_kron_const(bb, w_raw, ainv, record.gap());
  } else {
    eq.gram_sum = MatrixXd::Zero(d * m0, d * m0);
    eq.driver = VectorXd::Zero(d * m0);
    for (Eigen::Index i = 0; i < record.increments(); ++i) {
      const VectorXd xl = record.state(i);
      dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
      const VectorXd beta = model.beta0(xl);
      const MatrixXd ainv = solver.inverse_at(xl);
      eq.gram_sum.noalias() += kron(MatrixXd(beta * beta.transpose()), ainv);
      eq.driver.noalias() += kron(MatrixXd(beta), MatrixXd(ainv * dx));
    }
  }
  return detail::finish_linear_fit(eq, record.gap());
}

/// Damped Newton on the penalized loss
///   f(mu) = -epsilon * l(mu | vartheta_hat, data) + gamma^epsilon(mu),
/// with a finite-difference Hessian of the gradient. Falls back to steepest
/// descent with backtracking whenever the Hessian is not positive definite.
inline DriftFit amle_newton(const DiscreteRecord& record, const ModelSpec& model,
                            const MatrixXd& vartheta_hat, const PenaltySpec& penalty,
                            double epsilon, const VectorXd& init, double tol = 1e-9,
                            int max_iter = 50) {
  penalty.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("amle_newton: tol must be positive");
  const double delta = record.gap();
  const Eigen::Index n0 = init.size();

  auto loss = [&](const VectorXd& mu) {
    return -epsilon * discretized_loglik(record, model, mu, vartheta_hat, delta) +
           penalty.value(epsilon, mu);
  };
  auto grad = [&](const VectorXd& mu) -> VectorXd {
    return -epsilon * loglik_gradient(record, model, mu, vartheta_hat, delta) +
           penalty.gradient(epsilon, mu);
  };

  DriftFit fit;
  VectorXd mu = init;
  double f = loss(mu);
  VectorXd g = grad(mu);
  int it = 0;
  bool degenerate = false;  // flatness of the most recent Hessian
  for (; it < max_iter; ++it) {
    if (g.norm() <= tol) {
      fit.converged = true;
      break;
    }
    // Hessian by central differences of the gradient.
    MatrixXd hess(n0, n0);
    VectorXd mu_p = mu, mu_m = mu;
    for (Eigen::Index k = 0; k < n0; ++k) {
      const double h = 1e-5 * (1.0 + std::abs(mu[k]));
      mu_p[k] = mu[k] + h;
      mu_m[k] = mu[k] - h;
      hess.col(k) = (grad(mu_p) - grad(mu_m)) / (2.0 * h);
      mu_p[k] = mu[k];
      mu_m[k] = mu[k];
    }
    hess = sym(hess);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(hess, Eigen::EigenvaluesOnly);
    const double eig_min = es.eigenvalues().minCoeff();
    const double eig_max = es.eigenvalues().cwiseAbs().maxCoeff();
    VectorXd step;
    degenerate = false;
    if (eig_min > 1e-10 * std::max(1.0, eig_max)) {
      step = Eigen::LDLT<MatrixXd>(hess).solve(-g);
    } else if (eig_min > -1e-10 * std::max(1.0, eig_max)) {
      // Flat directions: minimum-norm Newton step, flag the degeneracy.
      degenerate = true;
      step = hess.completeOrthogonalDecomposition().solve(-g);
    } else {
      step = -g;  // not p.d.: descent direction fallback
    }
    double t = 1.0;
    const double slope = g.dot(step);
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const VectorXd trial = mu + t * step;
      const double ft = loss(trial);
      if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
        mu = trial;
        f = ft;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;  // no decrease along the direction
    g = grad(mu);
  }
  if (!fit.converged && g.norm() <= tol) fit.converged = true;
  fit.mu_hat = mu;
  fit.iterations = it;
  fit.gradient_norm_at_solution = g.norm();
  fit.loglik_at_solution = discretized_loglik(record, model, mu, vartheta_hat, delta);
  if (degenerate) {
    fit.converged = false;
    fit.reason = "Degenerate";
  } else if (!fit.converged) {
    fit.reason = "MaxIterExceeded";
  }
  return fit;
}

}  // namespace sdecal
