#pragma once

// Theoretical limit objects the Monte Carlo experiments compare against:
// stationary-law samples, the drift CLT covariance
//   Sigma = integral of Db^T a^{-1} Db against the stationary law
// (exact block-Kronecker assembly for the OU family), and the diffusion
// CLT limit law built from C = (1/2) avg(a (x) a) and the form-specific
// normalizer P.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sdecal/drift_estimator.hpp"
#include "sdecal/matrix_ops.hpp"
#include "sdecal/rng.hpp"
#include "sdecal/sde_core.hpp"
#include "sdecal/simulate.hpp"

namespace sdecal {

enum class StationarySource { ErgodicAverage, ExactOU };

struct StationarySample {
  MatrixXd points;  // N x d
  StationarySource source = StationarySource::ErgodicAverage;
  double burnin_fraction = 0.2;
  int stride = 1;  // thinning stride actually used (ergodic source)
};

namespace detail {

inline double lag1_autocorr(const std::vector<double>& v) {
  const std::size_t n = v.size();
  if (n < 3) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = v[i] - mean;
    den += c * c;
    if (i + 1 < n) num += c * (v[i + 1] - mean);
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace detail

/// Draws approximating the stationary law at theta0. OU-tagged models sample
/// N(H^{-1}g, F) exactly; otherwise one long Euler path is thinned after a
/// 20% burn-in, doubling the stride until the lag-1 autocorrelation of
/// ||x||^2 drops below 0.2.
inline StationarySample stationary_draws(const ModelSpec& model, const Parameter& theta0,
                                         long long n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("stationary_draws: n must be >= 1");
  const int d = model.dim_state;
  StationarySample out;
  if (model.ou) {
    const auto [g, h] = model.ou->from_mu(theta0.mu);
    const MatrixXd f = solve_lyapunov(h, theta0.vartheta);
    const MatrixXd l = psd_sqrt(f);
    const VectorXd mean = solve_linear(h, g, "UnstableH");
    NormalSource normals(seed, /*stream=*/0x73746174ULL);
    out.points.resize(n, d);
    VectorXd z(d);
    for (long long i = 0; i < n; ++i) {
      for (int c = 0; c < d; ++c) z[c] = normals();
      out.points.row(i) = (mean + l * z).transpose();
    }
    out.source = StationarySource::ExactOU;
    out.burnin_fraction = 0.0;
    return out;
  }

  const double obs_gap = 0.1;
  const double burnin = 0.2;
  const int max_stride = 64;
  for (int stride = 1; stride <= max_stride; stride *= 2) {
    const long long keep = n * stride;
    const long long total = static_cast<long long>(std::ceil(keep / (1.0 - burnin))) + 1;
    ScalingRegime regime;
    regime.epsilon = 1.0;  // informal regime: span = total*gap, epsilon unused here
    regime.gap = obs_gap;
    regime.m = total;
    regime.span = obs_gap * static_cast<double>(total);
    SimConfig cfg;
    cfg.x0 = VectorXd::Zero(d);
    cfg.regime = regime;
    cfg.substeps = 8;
    cfg.seed = seed;
    cfg.stream = 0x65726764ULL;
    const DiscreteRecord path = euler_maruyama(model, theta0, cfg);
    const long long start = total - keep + 1;
    out.points.resize(n, d);
    std::vector<double> vstat(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
      out.points.row(i) = path.states().row(start + i * stride);
      vstat[static_cast<std::size_t>(i)] = out.points.row(i).squaredNorm();
    }
    out.source = StationarySource::ErgodicAverage;
    out.burnin_fraction = burnin;
    out.stride = stride;
    if (detail::lag1_autocorr(vstat) < 0.2 || stride == max_stride) break;
  }
  return out;
}

struct DriftCltCovariance {
  MatrixXd sigma;      // Sigma_theta0
  MatrixXd sigma_inv;  // the CLT covariance
  MatrixXd se;         // entrywise Monte Carlo standard error of sigma
};

/// Monte Carlo average of Db^T(mu0,x) a^{-1}(vartheta0,x) Db(mu0,x) over the
/// sample.
inline DriftCltCovariance drift_clt_covariance(const ModelSpec& model, const Parameter& theta0,
                                               const StationarySample& sample) {
  if (!model.has_jacobian())
    throw std::invalid_argument("drift_clt_covariance: model has no drift jacobian");
  const Eigen::Index n0 = model.dim_drift_param;
  const Eigen::Index n = sample.points.rows();
  DiffusionSolver solver(model, theta0.vartheta);
  MatrixXd mean = MatrixXd::Zero(n0, n0);
  MatrixXd msq = MatrixXd::Zero(n0, n0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x = sample.points.row(i).transpose();
    const MatrixXd j = model.drift_jacobian(theta0.mu, x);
    const MatrixXd term = j.transpose() * solver.apply(x, j);
    mean += term;
    msq += term.cwiseProduct(term);
  }
  const double dn = static_cast<double>(n);
  mean /= dn;
  msq /= dn;
  DriftCltCovariance out;
  out.sigma = sym(mean);
  out.se = ((msq - mean.cwiseProduct(mean)).cwiseMax(0.0) / dn).cwiseSqrt();
  out.sigma_inv =
      solve_linear(out.sigma, MatrixXd::Identity(n0, n0), "SingularSigma");
  return out;
}

/// Exact Sigma for the OU family with mu = vec([g, -H]) and beta0 = (1, x):
///   Sigma = [[1, mbar^T], [mbar, mbar mbar^T + F]] (x) vartheta^{-1},
/// mbar = H^{-1} g, H F + F H^T = vartheta.
inline MatrixXd ou_drift_clt_covariance(const VectorXd& g, const MatrixXd& h,
                                        const MatrixXd& vartheta) {
  const Eigen::Index d = h.rows();
  const MatrixXd f = solve_lyapunov(h, vartheta);  // checks stability
  const VectorXd mbar = solve_linear(h, g, "UnstableH");
  MatrixXd block(d + 1, d + 1);
  block(0, 0) = 1.0;
  block.block(0, 1, 1, d) = mbar.transpose();
  block.block(1, 0, d, 1) = mbar;
  block.block(1, 1, d, d) = mbar * mbar.transpose() + f;
  const MatrixXd vinv = solve_linear(vartheta, MatrixXd::Identity(d, d), "SingularSigma");
  return kron(block, sym(vinv));
}

/// Limit law of the standardized diffusion estimator: with
/// vec(zeta) ~ C^{1/2} N(0, I), C = (1/2) avg(a (x) a), the limit is
/// 2 P^{-1} (zeta)_sym where P = avg(a0) for Form 1 acting by matrix product,
/// or P = avg(sigma0 (x) sigma0) for Form 2 acting on vec.
struct DiffusionLimitLaw {
  DiffusionForm form = DiffusionForm::Form1;
  MatrixXd c;               // d^2 x d^2
  MatrixXd c_sqrt;
  MatrixXd p;               // d x d (Form 1) or d^2 x d^2 (Form 2)
  MatrixXd p_inv;
  MatrixXd vec_covariance;  // covariance of vec(limit)

  /// One draw of the d x d limit matrix.
  MatrixXd sample_limit(NormalSource& normals) const {
    const auto d = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(c.rows()))));
    VectorXd z(c.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normals();
    const MatrixXd zeta_sym = sym(unvec(c_sqrt * z, d, d));
    if (form == DiffusionForm::Form1) return 2.0 * (p_inv * zeta_sym);
    return unvec(VectorXd(2.0 * (p_inv * vec(zeta_sym))), d, d);
  }
};

inline DiffusionLimitLaw diffusion_clt_covariance(DiffusionForm form, const MatrixFieldFn& field,
                                                  const MatrixXd& vartheta0,
                                                  const StationarySample& sample) {
  if (form != DiffusionForm::Form1 && form != DiffusionForm::Form2)
    throw std::invalid_argument("diffusion_clt_covariance: form must be Form1 or Form2");
  const Eigen::Index d = vartheta0.rows();
  const Eigen::Index n = sample.points.rows();
  DiffusionLimitLaw law;
  law.form = form;
  law.c = MatrixXd::Zero(d * d, d * d);
  law.p = MatrixXd::Zero(form == DiffusionForm::Form1 ? d : d * d,
                         form == DiffusionForm::Form1 ? d : d * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x = sample.points.row(i).transpose();
    const MatrixXd f = field(x);
    MatrixXd a;
    if (form == DiffusionForm::Form1) {
      a = sym(f * vartheta0);
      law.p += f;
    } else {
      a = sym(f * vartheta0 * f.transpose());
      law.p += kron(f, f);
    }
    law.c += kron(a, a);
  }
  const double dn = static_cast<double>(n);
  law.c = sym(law.c / (2.0 * dn));
  law.p /= dn;
  law.c_sqrt = psd_sqrt(law.c);
  law.p_inv =
      solve_linear(law.p, MatrixXd::Identity(law.p.rows(), law.p.cols()), "SingularIntegral");
  const MatrixXd symmetrizer =
      0.5 * (MatrixXd::Identity(d * d, d * d) + commutation_matrix(d, d));
  MatrixXd push;  // vec(limit) = push * vec(zeta)
  if (form == DiffusionForm::Form1)
    push = 2.0 * kron(MatrixXd::Identity(d, d), law.p_inv) * symmetrizer;
  else
    push = 2.0 * law.p_inv * symmetrizer;
  law.vec_covariance = sym(push * law.c * push.transpose());
  return law;
}

}  // namespace sdecal
