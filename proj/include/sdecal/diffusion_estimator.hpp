#pragma once

// Quadratic-variation based estimation of the diffusion parameter for the
// two closed-form parameterizations:
//   Form 1: a(vartheta,x) = a0(x)*vartheta      -> matrix solve
//   Form 2: sigma(vartheta,x) = sigma0(x)*kappa -> vectorized Kronecker solve
// The normalizer is the exact left-endpoint sum gap * sum_i f(x_{i-1}), the
// discretization the step function of the observation grid prescribes.

#include <string>

#include "sdecal/matrix_ops.hpp"
#include "sdecal/sde_core.hpp"

namespace sdecal {

struct QuadraticVariation {
  MatrixXd matrix;  // sum of increment outer products, d x d
  double gap = 0.0;
  long long count = 0;  // m
};

/// [X]^D = sum_i (x_{i+1} - x_i)(x_{i+1} - x_i)^T.
inline QuadraticVariation discretized_qv(const DiscreteRecord& record) {
  const Eigen::Index d = record.dim();
  QuadraticVariation qv;
  qv.matrix = MatrixXd::Zero(d, d);
  qv.gap = record.gap();
  qv.count = record.increments();
  VectorXd dx(d);
  for (Eigen::Index i = 0; i < record.increments(); ++i) {
    dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
    qv.matrix.noalias() += dx * dx.transpose();
  }
  return qv;
}

struct DiffusionFit {
  MatrixXd theta_raw;  // estimator as defined (a matrix product, not symmetric)
  MatrixXd theta_sym;  // (theta_raw + theta_raw^T)/2
  QuadraticVariation qv;
};

namespace detail {

inline MatrixXd checked_solve(const MatrixXd& lhs, const MatrixXd& rhs, const char* err) {
  return solve_linear(lhs, rhs, err);
}

}  // namespace detail

/// Form 1: vartheta_hat = (gap * sum_i a0(x_{i-1}))^{-1} [X]^D.
/// With constant_a0 the sum collapses to m * a0(x_0).
inline DiffusionFit estimate_form1(const DiscreteRecord& record, const MatrixFieldFn& a0,
                                   bool constant_a0 = false) {
  const Eigen::Index d = record.dim();
  DiffusionFit fit;
  fit.qv.matrix = MatrixXd::Zero(d, d);
  fit.qv.gap = record.gap();
  fit.qv.count = record.increments();
  MatrixXd s_sum = MatrixXd::Zero(d, d);
  VectorXd dx(d);
  for (Eigen::Index i = 0; i < record.increments(); ++i) {
    dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
    fit.qv.matrix.noalias() += dx * dx.transpose();
    if (!constant_a0) s_sum += a0(record.state(i));
  }
  if (constant_a0) s_sum = static_cast<double>(record.increments()) * a0(record.state(0));
  const MatrixXd s = record.gap() * s_sum;
  fit.theta_raw = detail::checked_solve(s, fit.qv.matrix, "SingularIntegral");
  fit.theta_sym = sym(fit.theta_raw);
  return fit;
}

/// Form 2: vec(vartheta_hat) = (gap * sum_i sigma0 (x) sigma0)^{-1} vec([X]^D).
inline DiffusionFit estimate_form2(const DiscreteRecord& record, const MatrixFieldFn& sigma0,
                                   bool constant_sigma0 = false) {
  const Eigen::Index d = record.dim();
  DiffusionFit fit;
  fit.qv.matrix = MatrixXd::Zero(d, d);
  fit.qv.gap = record.gap();
  fit.qv.count = record.increments();
  MatrixXd k_sum = MatrixXd::Zero(d * d, d * d);
  VectorXd dx(d);
  for (Eigen::Index i = 0; i < record.increments(); ++i) {
    dx = (record.states().row(i + 1) - record.states().row(i)).transpose();
    fit.qv.matrix.noalias() += dx * dx.transpose();
    if (!constant_sigma0) {
      const MatrixXd s0 = sigma0(record.state(i));
      k_sum += kron(s0, s0);
    }
  }
  if (constant_sigma0) {
    const MatrixXd s0 = sigma0(record.state(0));
    k_sum = static_cast<double>(record.increments()) * kron(s0, s0);
  }
  const MatrixXd k = record.gap() * k_sum;
  const VectorXd theta_vec = detail::checked_solve(k, vec(fit.qv.matrix), "SingularIntegral");
  fit.theta_raw = unvec(theta_vec, d, d);
  fit.theta_sym = sym(fit.theta_raw);
  return fit;
}

/// Dispatch on the model's declared diffusion form.
inline DiffusionFit estimate_diffusion(const DiscreteRecord& record, const ModelSpec& model) {
  switch (model.diffusion_form) {
    case DiffusionForm::Form1:
      return estimate_form1(record, model.a0, model.constant_diffusion);
    case DiffusionForm::Form2:
      return estimate_form2(record, model.sigma0, model.constant_diffusion);
    default:
      throw std::invalid_argument("estimate_diffusion: model declares no closed-form diffusion");
  }
}

}  // namespace sdecal
