#pragma once

// Ready-made model specifications used by the CLI and the experiment suites:
// scalar and multidimensional OU calibration, a nonlinear-in-state linear
// drift demo, and state-dependent Form 1 / Form 2 diffusion demos.

#include <string>

#include "sdecal/sde_core.hpp"

namespace sdecal {

struct BuiltinModel {
  std::string name;
  ModelSpec model;
  Parameter theta0;
  VectorXd x0;
};

/// dX = -mu X dt + sqrt(vartheta) dW. Kron form with beta0(x) = -x, so the
/// drift parameter is mu itself; diffusion is Form 1 with a0 = 1.
inline BuiltinModel make_ou1d(double mu0 = 1.0, double vartheta0 = 2.0) {
  BuiltinModel b;
  b.name = "ou1d";
  b.model.dim_state = 1;
  set_kron_drift(b.model, [](const VectorXd& x) -> VectorXd { return -x; }, 1);
  b.model.beta0_kind = Beta0Kind::NegX;
  set_form1_diffusion(
      b.model, [](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(1, 1); },
      /*constant=*/true);
  b.model.ou = OuTag{[](const VectorXd& mu) {
    return std::make_pair(VectorXd::Zero(1).eval(), MatrixXd(mu.asDiagonal()));
  }};
  b.theta0.mu = VectorXd::Constant(1, mu0);
  b.theta0.vartheta = MatrixXd::Constant(1, 1, vartheta0);
  b.x0 = VectorXd::Zero(1);
  return b;
}

/// dX = (g - H X) dt + kappa dW with vartheta = kappa kappa^T. Kron form with
/// beta0(x) = (1, x) and A = [g, -H], so mu = vec([g, -H]); diffusion is
/// Form 2 with sigma0 = I.
inline BuiltinModel make_ou_nd(const VectorXd& g, const MatrixXd& h, const MatrixXd& vartheta) {
  const Eigen::Index d = g.size();
  if (h.rows() != d || h.cols() != d || vartheta.rows() != d || vartheta.cols() != d)
    throw std::invalid_argument("make_ou_nd: dimension mismatch");
  BuiltinModel b;
  b.name = "ou-nd";
  b.model.dim_state = static_cast<int>(d);
  set_kron_drift(
      b.model,
      [d](const VectorXd& x) -> VectorXd {
        VectorXd beta(d + 1);
        beta[0] = 1.0;
        beta.tail(d) = x;
        return beta;
      },
      static_cast<int>(d + 1));
  b.model.beta0_kind = Beta0Kind::OneX;
  set_form2_diffusion(
      b.model, [d](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(d, d); },
      /*constant=*/true);
  b.model.ou = OuTag{[d](const VectorXd& mu) {
    const Eigen::Map<const MatrixXd> a(mu.data(), d, d + 1);
    return std::make_pair(VectorXd(a.col(0)), MatrixXd(-a.rightCols(d)));
  }};
  MatrixXd a0mat(d, d + 1);
  a0mat.col(0) = g;
  a0mat.rightCols(d) = -h;
  b.theta0.mu = vec(a0mat);
  b.theta0.vartheta = vartheta;
  b.x0 = solve_linear(h, g, "UnstableH");
  return b;
}

/// d = 1 drift b(mu, x) = -mu_1 x - mu_2 x^3 (linear in mu, cubic in x) with
/// unit Form 1 diffusion; exercises the non-OU Euler path and Newton solver.
inline BuiltinModel make_linear_drift_demo(double mu1 = 1.0, double mu2 = 0.5,
                                           double vartheta0 = 1.0) {
  BuiltinModel b;
  b.name = "linear-drift-demo";
  b.model.dim_state = 1;
  b.model.dim_drift_param = 2;
  set_linear_drift(b.model, [](const VectorXd& x) -> MatrixXd {
    MatrixXd m(1, 2);
    m(0, 0) = -x[0];
    m(0, 1) = -x[0] * x[0] * x[0];
    return m;
  });
  set_form1_diffusion(
      b.model, [](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(1, 1); },
      /*constant=*/true);
  b.theta0.mu = (VectorXd(2) << mu1, mu2).finished();
  b.theta0.vartheta = MatrixXd::Constant(1, 1, vartheta0);
  b.x0 = VectorXd::Zero(1);
  return b;
}

/// d = 2, componentwise mean reversion with state-dependent scalar Form 1
/// diffusion a0(x) = (1 + |x|^2/(1+|x|^2)) I, which commutes with any
/// vartheta.
inline BuiltinModel make_form1_demo() {
  BuiltinModel b;
  b.name = "form1-demo";
  b.model.dim_state = 2;
  b.model.dim_drift_param = 2;
  set_linear_drift(b.model, [](const VectorXd& x) -> MatrixXd {
    MatrixXd m = MatrixXd::Zero(2, 2);
    m(0, 0) = -x[0];
    m(1, 1) = -x[1];
    return m;
  });
  set_form1_diffusion(b.model, [](const VectorXd& x) -> MatrixXd {
    const double q = x.squaredNorm();
    return (1.0 + q / (1.0 + q)) * MatrixXd::Identity(2, 2);
  });
  b.theta0.mu = VectorXd::Ones(2);
  b.theta0.vartheta = (MatrixXd(2, 2) << 1.0, 0.3, 0.3, 1.5).finished();
  b.x0 = VectorXd::Zero(2);
  return b;
}

/// d = 2, same drift family with known diagonal sigma0(x) and Form 2
/// parameterization sigma = sigma0(x) kappa.
inline BuiltinModel make_form2_demo() {
  BuiltinModel b;
  b.name = "form2-demo";
  b.model.dim_state = 2;
  b.model.dim_drift_param = 2;
  set_linear_drift(b.model, [](const VectorXd& x) -> MatrixXd {
    MatrixXd m = MatrixXd::Zero(2, 2);
    m(0, 0) = -x[0];
    m(1, 1) = -x[1];
    return m;
  });
  set_form2_diffusion(b.model, [](const VectorXd& x) -> MatrixXd {
    MatrixXd s = MatrixXd::Zero(2, 2);
    s(0, 0) = 1.0 + x[0] * x[0] / (1.0 + x[0] * x[0]);
    s(1, 1) = 1.0 + 0.5 * x[1] * x[1] / (1.0 + x[1] * x[1]);
    return s;
  });
  b.theta0.mu = VectorXd::Ones(2);
  b.theta0.vartheta = (MatrixXd(2, 2) << 1.0, 0.2, 0.2, 0.8).finished();
  b.x0 = VectorXd::Zero(2);
  return b;
}

}  // namespace sdecal
