#pragma once

// Path generation for the SDE under the original clock (span 1/epsilon, gap
//: observation gap) and under the scaled clock (span 1, gap epsilon*gap,
// drift scaled by 1/epsilon, diffusion by 1/sqrt(epsilon)). Matched
// (seed, stream) pairs consume identical Brownian increments in both clocks,
// making the two records distributionally (and numerically, up to rounding)
// interchangeable. An exact Ornstein-Uhlenbeck transition sampler provides a
// discretization-free oracle.

#include <cmath>
#include <cstdint>

#include <unsupported/Eigen/MatrixFunctions>

#include "sdecal/matrix_ops.hpp"
#include "sdecal/rng.hpp"
#include "sdecal/sde_core.hpp"

namespace sdecal {

enum class Clock { Original, Scaled };

struct SimConfig {
  VectorXd x0;
  ScalingRegime regime;
  int substeps = 16;  // internal Euler steps per observation gap
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  Clock clock = Clock::Original;
};

constexpr double kBlowupNorm = 1e12;

/// Euler-Maruyama record of the m+1 observation points. Internal step is
/// gap/substeps; Brownian increments for global substep s and component c
/// come from normal index s*d + c of (seed, stream).
inline DiscreteRecord euler_maruyama(const ModelSpec& model, const Parameter& theta,
                                     const SimConfig& cfg) {
  const int d = model.dim_state;
  if (cfg.x0.size() != d) throw std::invalid_argument("euler_maruyama: x0 dimension mismatch");
  if (cfg.substeps < 1) throw std::invalid_argument("euler_maruyama: substeps must be >= 1");
  const long long m = cfg.regime.m;
  const int k_sub = cfg.substeps;

  const bool scaled = cfg.clock == Clock::Scaled;
  const double eps = cfg.regime.epsilon;
  const double obs_gap = scaled ? eps * cfg.regime.gap : cfg.regime.gap;
  const double h = obs_gap / k_sub;
  const double drift_scale = scaled ? h / eps : h;
  const double noise_scale = (scaled ? 1.0 / std::sqrt(eps) : 1.0) * std::sqrt(h);

  NormalSource normals(cfg.seed, cfg.stream);
  MatrixXd states(m + 1, d);
  VectorXd x = cfg.x0;
  VectorXd z(d);
  states.row(0) = x.transpose();
  for (long long i = 0; i < m; ++i) {
    for (int k = 0; k < k_sub; ++k) {
      for (int c = 0; c < d; ++c) z[c] = normals();
      x += model.drift(theta.mu, x) * drift_scale +
           model.diffusion(theta.vartheta, x) * (noise_scale * z);
      if (!(x.norm() <= kBlowupNorm))
        throw_error("Blowup", "state norm exceeded 1e12 at observation " + std::to_string(i));
    }
    states.row(i + 1) = x.transpose();
  }
  return DiscreteRecord(0.0, obs_gap, std::move(states));
}

/// One-gap Gaussian transition of dX = (g - H X)dt + kappa dW with
/// vartheta = kappa*kappa^T:
///   X(t+gap) | X(t) ~ N(E X(t) + c, V),  E = exp(-H*gap),
///   c = (I - E) H^{-1} g,  V = F - E F E^T,  H F + F H^T = vartheta.
struct OuTransition {
  MatrixXd propagator;   // E
  VectorXd offset;       // c
  MatrixXd noise_sqrt;   // psd_sqrt(V)
  MatrixXd stationary;   // F
  double gap = 0.0;

  static OuTransition compute(const VectorXd& g, const MatrixXd& h, const MatrixXd& vartheta,
                              double gap) {
    const Eigen::Index d = h.rows();
    if (g.size() != d || vartheta.rows() != d || vartheta.cols() != d)
      throw std::invalid_argument("OuTransition: dimension mismatch");
    OuTransition tr;
    tr.gap = gap;
    tr.stationary = solve_lyapunov(h, vartheta);  // throws UnstableH when needed
    tr.propagator = (-h * gap).exp();
    const MatrixXd v =
        sym(tr.stationary - tr.propagator * tr.stationary * tr.propagator.transpose());
    tr.noise_sqrt = psd_sqrt(v);
    const VectorXd mean = solve_linear(h, g, "UnstableH");
    tr.offset = mean - tr.propagator * mean;
    return tr;
  }

  VectorXd step(const VectorXd& x, const VectorXd& z) const {
    return offset + propagator * x + noise_sqrt * z;
  }
};

/// Exact OU record: every observation is drawn from the exact Gaussian
/// transition, so the only randomness budget is normal index i*d + c for
/// observation step i. Matched seeds give the same states on both clocks.
inline DiscreteRecord exact_ou(const VectorXd& g, const MatrixXd& h, const MatrixXd& vartheta,
                               const SimConfig& cfg) {
  const Eigen::Index d = h.rows();
  if (cfg.x0.size() != d) throw std::invalid_argument("exact_ou: x0 dimension mismatch");
  const OuTransition tr = OuTransition::compute(g, h, vartheta, cfg.regime.gap);
  const bool scaled = cfg.clock == Clock::Scaled;
  const double obs_gap = scaled ? cfg.regime.epsilon * cfg.regime.gap : cfg.regime.gap;

  NormalSource normals(cfg.seed, cfg.stream);
  const long long m = cfg.regime.m;
  MatrixXd states(m + 1, d);
  VectorXd x = cfg.x0;
  VectorXd z(d);
  states.row(0) = x.transpose();
  for (long long i = 0; i < m; ++i) {
    for (Eigen::Index c = 0; c < d; ++c) z[c] = normals();
    x = tr.step(x, z);
    states.row(i + 1) = x.transpose();
  }
  return DiscreteRecord(0.0, obs_gap, std::move(states));
}

}  // namespace sdecal
