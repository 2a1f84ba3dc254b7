#include "sdecal/simulate.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "sdecal/builtin_models.hpp"
#include "sdecal/stats.hpp"

using namespace sdecal;

namespace {

ModelSpec deterministic_decay() {
  ModelSpec m;
  m.dim_state = 1;
  m.dim_drift_param = 1;
  m.drift = [](const VectorXd&, const VectorXd& x) { return VectorXd(-x); };
  m.diffusion = [](const MatrixXd&, const VectorXd&) { return MatrixXd(MatrixXd::Zero(1, 1)); };
  return m;
}

Parameter unit_parameter() {
  Parameter p;
  p.mu = VectorXd::Ones(1);
  p.vartheta = MatrixXd::Identity(1, 1);
  return p;
}

}  // namespace

TEST(Euler, NoDynamicsGivesConstantRecord) {
  ModelSpec m;
  m.dim_state = 2;
  m.drift = [](const VectorXd&, const VectorXd& x) { return VectorXd(VectorXd::Zero(x.size())); };
  m.diffusion = [](const MatrixXd&, const VectorXd&) { return MatrixXd(MatrixXd::Zero(2, 2)); };
  SimConfig cfg;
  cfg.x0 = (VectorXd(2) << 1.5, -2.0).finished();
  cfg.regime = ScalingRegime::from_gap(0.1, 0.5);
  Parameter theta;
  theta.mu = VectorXd::Zero(1);
  theta.vartheta = MatrixXd::Identity(2, 2);
  const DiscreteRecord rec = euler_maruyama(m, theta, cfg);
  for (Eigen::Index i = 0; i <= rec.increments(); ++i)
    EXPECT_EQ((rec.state(i) - cfg.x0).norm(), 0.0);
}

TEST(Euler, FirstOrderOnDeterministicDecay) {
  const ModelSpec m = deterministic_decay();
  const Parameter theta = unit_parameter();
  auto terminal_error = [&](int substeps) {
    SimConfig cfg;
    cfg.x0 = VectorXd::Ones(1);
    cfg.regime = ScalingRegime::from_gap(1.0, 0.125);
    cfg.substeps = substeps;
    const DiscreteRecord rec = euler_maruyama(m, theta, cfg);
    return std::abs(rec.state(rec.increments())[0] - std::exp(-1.0));
  };
  const double e1 = terminal_error(8);
  const double e2 = terminal_error(16);
  const double e4 = terminal_error(32);
  EXPECT_NEAR(e1 / e2, 2.0, 0.25);
  EXPECT_NEAR(e2 / e4, 2.0, 0.25);
}

TEST(Euler, CoupledToExactOuAtMatchedNoise) {
  // With substeps = 1 the Euler scheme and the exact transition consume the
  // same normal per observation, so the two records are pathwise coupled and
  // the RMS of the maximal deviation must shrink with the gap at least at
  // order 1/2 (for this additive-noise model it is in fact order 1).
  const BuiltinModel ou = make_ou1d(1.0, 2.0);
  const VectorXd g = VectorXd::Zero(1);
  const MatrixXd h = MatrixXd::Identity(1, 1);
  auto rms_max_dev = [&](double gap) {
    const int seeds = 200;
    double acc = 0.0;
    for (int s = 0; s < seeds; ++s) {
      SimConfig cfg;
      cfg.x0 = VectorXd::Zero(1);
      cfg.regime = ScalingRegime::from_gap(0.125, gap);
      cfg.substeps = 1;
      cfg.seed = 42;
      cfg.stream = static_cast<std::uint64_t>(s);
      const DiscreteRecord euler = euler_maruyama(ou.model, ou.theta0, cfg);
      const DiscreteRecord exact = exact_ou(g, h, ou.theta0.vartheta, cfg);
      double dev = 0.0;
      for (Eigen::Index i = 0; i <= euler.increments(); ++i)
        dev = std::max(dev, std::abs(euler.state(i)[0] - exact.state(i)[0]));
      acc += dev * dev;
    }
    return std::sqrt(acc / seeds);
  };
  const double e_coarse = rms_max_dev(0.2);
  const double e_mid = rms_max_dev(0.1);
  const double e_fine = rms_max_dev(0.05);
  EXPECT_GT(e_coarse, e_mid);
  EXPECT_GT(e_mid, e_fine);
  const double rate = std::log2(e_coarse / e_fine) / 2.0;
  EXPECT_GE(rate, 0.5);
}

TEST(ExactOu, ScalarFormulas) {
  // h = 1, kappa^2 = 2: F = 1, propagator e^{-gap}, noise variance 1 - e^{-2 gap}.
  const double gap = 0.7;
  const OuTransition tr = OuTransition::compute(VectorXd::Zero(1), MatrixXd::Identity(1, 1),
                                                MatrixXd::Constant(1, 1, 2.0), gap);
  EXPECT_NEAR(tr.stationary(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(tr.propagator(0, 0), std::exp(-gap), 1e-12);
  EXPECT_NEAR(tr.noise_sqrt(0, 0), std::sqrt(1.0 - std::exp(-2.0 * gap)), 1e-12);
  EXPECT_EQ(tr.offset(0), 0.0);
}

TEST(ExactOu, MatchedSeedDeterminism) {
  SimConfig cfg;
  cfg.x0 = (VectorXd(2) << 0.3, -0.1).finished();
  cfg.regime = ScalingRegime::from_gap(0.25, 0.5);
  cfg.seed = 11;
  cfg.stream = 3;
  const MatrixXd h = (MatrixXd(2, 2) << 1.0, 0.2, 0.0, 0.8).finished();
  const MatrixXd vt = (MatrixXd(2, 2) << 1.0, 0.1, 0.1, 0.5).finished();
  const VectorXd g = (VectorXd(2) << 0.4, 0.0).finished();
  const DiscreteRecord a = exact_ou(g, h, vt, cfg);
  const DiscreteRecord b = exact_ou(g, h, vt, cfg);
  EXPECT_EQ((a.states() - b.states()).norm(), 0.0);
}

TEST(ExactOu, TerminalMarginalMatchesLyapunov) {
  // g = 0, H = I, long span: X(t_m) ~ N(0, F) with F = vartheta/2.
  const MatrixXd vt = (MatrixXd(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  const MatrixXd f = 0.5 * vt;
  const int reps = 10000;
  MatrixXd draws(reps, 2);
  for (int r = 0; r < reps; ++r) {
    SimConfig cfg;
    cfg.x0 = VectorXd::Zero(2);
    cfg.regime = ScalingRegime::from_gap(1.0 / 15.0, 3.0);  // span 15, m = 5
    cfg.seed = 77;
    cfg.stream = static_cast<std::uint64_t>(r);
    const DiscreteRecord rec = exact_ou(VectorXd::Zero(2), MatrixXd::Identity(2, 2), vt, cfg);
    draws.row(r) = rec.state(rec.increments()).transpose();
  }
  const MomentSummary mom = sample_moments(draws);
  EXPECT_LT(frobenius_rel_err(mom.cov, f), 0.05);
}

TEST(Clocks, ExactOuScaledMatchesOriginal) {
  const double eps = 0.1;
  SimConfig cfg;
  cfg.x0 = VectorXd::Constant(1, 0.5);
  cfg.regime = ScalingRegime::from_gap_exponent(eps, 1.0);
  cfg.seed = 5;
  cfg.stream = 9;
  cfg.clock = Clock::Original;
  const DiscreteRecord orig = exact_ou(VectorXd::Zero(1), MatrixXd::Identity(1, 1),
                                       MatrixXd::Constant(1, 1, 2.0), cfg);
  cfg.clock = Clock::Scaled;
  const DiscreteRecord scaled = exact_ou(VectorXd::Zero(1), MatrixXd::Identity(1, 1),
                                         MatrixXd::Constant(1, 1, 2.0), cfg);
  EXPECT_EQ((orig.states() - scaled.states()).norm(), 0.0);
  EXPECT_NEAR(scaled.gap(), eps * orig.gap(), 1e-18);
  EXPECT_NEAR(scaled.time(scaled.increments()), eps * orig.time(orig.increments()), 1e-12);
}

TEST(Clocks, EulerScaledMatchesOriginalPathwise) {
  const BuiltinModel demo = make_linear_drift_demo();
  SimConfig cfg;
  cfg.x0 = VectorXd::Constant(1, 0.3);
  cfg.regime = ScalingRegime::from_gap_exponent(0.2, 1.0);
  cfg.substeps = 4;
  cfg.seed = 21;
  cfg.clock = Clock::Original;
  const DiscreteRecord orig = euler_maruyama(demo.model, demo.theta0, cfg);
  cfg.clock = Clock::Scaled;
  const DiscreteRecord scaled = euler_maruyama(demo.model, demo.theta0, cfg);
  // Same Brownian increments, same update algebra up to the 1/eps scaling
  // round-off: states agree to near machine precision.
  EXPECT_LT((orig.states() - scaled.states()).norm(), 1e-11 * (1.0 + orig.states().norm()));
}

TEST(Clocks, DistributionalEquivalenceOfTerminalMoments) {
  // Independent-seed two-sample check of the scaling equivalence: terminal
  // first and second moments agree within 4 combined standard errors.
  const BuiltinModel ou = make_ou1d(1.0, 2.0);
  const VectorXd g = VectorXd::Zero(1);
  const MatrixXd h = MatrixXd::Identity(1, 1);
  const int n = 2000;
  VectorXd term_orig(n), term_scaled(n);
  for (int s = 0; s < n; ++s) {
    SimConfig cfg;
    cfg.x0 = VectorXd::Constant(1, 1.0);
    cfg.regime = ScalingRegime::from_gap_exponent(0.25, 1.0);
    cfg.seed = 1000;
    cfg.stream = static_cast<std::uint64_t>(s);
    cfg.clock = Clock::Original;
    term_orig[s] = exact_ou(g, h, ou.theta0.vartheta, cfg).state(cfg.regime.m)[0];
    cfg.seed = 2000;  // independent noise for the scaled-clock sample
    cfg.clock = Clock::Scaled;
    term_scaled[s] = exact_ou(g, h, ou.theta0.vartheta, cfg).state(cfg.regime.m)[0];
  }
  auto mean_var = [](const VectorXd& v) {
    const double m = v.mean();
    const double var = (v.array() - m).square().sum() / (v.size() - 1);
    return std::make_pair(m, var);
  };
  const auto [m1, v1] = mean_var(term_orig);
  const auto [m2, v2] = mean_var(term_scaled);
  const double se_mean = std::sqrt(v1 / n + v2 / n);
  EXPECT_LT(std::abs(m1 - m2), 4 * se_mean);
  const double se_var = std::sqrt(2.0 * v1 * v1 / (n - 1) + 2.0 * v2 * v2 / (n - 1));
  EXPECT_LT(std::abs(v1 - v2), 4 * se_var);
}

TEST(Euler, BlowupGuard) {
  ModelSpec m;
  m.dim_state = 1;
  m.drift = [](const VectorXd&, const VectorXd& x) {
    return VectorXd(VectorXd::Constant(1, x[0] * x[0] * x[0]));
  };
  m.diffusion = [](const MatrixXd&, const VectorXd&) { return MatrixXd(MatrixXd::Zero(1, 1)); };
  SimConfig cfg;
  cfg.x0 = VectorXd::Constant(1, 10.0);
  cfg.regime = ScalingRegime::from_gap(0.125, 0.5);
  cfg.substeps = 1;
  Parameter theta;
  theta.mu = VectorXd::Zero(1);
  theta.vartheta = MatrixXd::Identity(1, 1);
  try {
    euler_maruyama(m, theta, cfg);
    FAIL() << "expected Blowup";
  } catch (const Error& e) {
    EXPECT_EQ(e.name(), "Blowup");
  }
}

TEST(ExactOu, RejectsUnstableH) {
  SimConfig cfg;
  cfg.x0 = VectorXd::Zero(1);
  cfg.regime = ScalingRegime::from_gap(0.5, 0.5);
  try {
    exact_ou(VectorXd::Zero(1), MatrixXd::Constant(1, 1, -0.5), MatrixXd::Identity(1, 1), cfg);
    FAIL() << "expected UnstableH";
  } catch (const Error& e) {
    EXPECT_EQ(e.name(), "UnstableH");
  }
}
