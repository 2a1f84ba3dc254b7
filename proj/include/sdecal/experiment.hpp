#pragma once

// Monte Carlo harness turning the limit theorems into desk-scale checks:
// consistency sweeps (estimation error decay along a decreasing epsilon
// grid) and CLT runs (empirical covariance of standardized estimates against
// the theoretical limit covariance, plus a Mahalanobis/chi-square KS check).
//
// Replication r of grid point e draws its noise from stream (e << 32) | r of
// plan.seed_base, and per-replication results are reduced in replication
// order, so reports are bit-identical regardless of the worker-thread count.
//
// OU-tagged models with Kron drift structure and constant diffusion run in a
// streaming fast path that never materializes the observation record; it
// accumulates exactly the sufficient statistics the record-based estimators
// consume, sharing their finalization code.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sdecal/asymptotics.hpp"
#include "sdecal/detail/sha1.hpp"
#include "sdecal/diffusion_estimator.hpp"
#include "sdecal/drift_estimator.hpp"
#include "sdecal/simulate.hpp"
#include "sdecal/stats.hpp"

namespace sdecal {

enum class EstimatorKind { DriftLinear, DriftNewton, DiffForm1, DiffForm2 };
enum class ExperimentKind { Consistency, Clt };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::DriftLinear: return "drift-linear";
    case EstimatorKind::DriftNewton: return "drift-newton";
    case EstimatorKind::DiffForm1: return "diff-form1";
    case EstimatorKind::DiffForm2: return "diff-form2";
  }
  return "?";
}

inline bool is_drift(EstimatorKind k) {
  return k == EstimatorKind::DriftLinear || k == EstimatorKind::DriftNewton;
}

struct ExperimentPlan {
  std::string label;  // model name for the logged config
  ModelSpec model;
  Parameter theta0;
  VectorXd x0;

  std::vector<double> epsilon_grid;  // strictly decreasing
  double gap_exponent = 1.5;
  int replications = 100;
  EstimatorKind estimator = EstimatorKind::DriftLinear;
  std::uint64_t seed_base = 1;

  bool use_exact_ou = true;
  bool oracle_vartheta = false;          // ablation: plug in the true vartheta
  bool allow_regime_violation = false;   // negative-control override
  int substeps = 16;                     // Euler fallback
  int threads = 0;                       // 0 = hardware concurrency

  PenaltySpec penalty = PenaltySpec::none();
  double newton_tol = 1e-8;
  int newton_max_iter = 50;

  std::optional<MatrixXd> theory_cov_override;  // CLT comparison target
  long long stationary_n = 200000;              // MC size for limit integrals

  void validate(ExperimentKind kind) const {
    theta0.validate();
    if (epsilon_grid.empty()) throw ConfigError("epsilon_grid: must be nonempty");
    for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
      if (!(epsilon_grid[i] > 0.0 && epsilon_grid[i] <= 1.0))
        throw ConfigError("epsilon_grid: entries must lie in (0,1]");
      if (i > 0 && !(epsilon_grid[i] < epsilon_grid[i - 1]))
        throw ConfigError("epsilon_grid: must be strictly decreasing");
    }
    if (replications < 2) throw ConfigError("replications: need at least 2");
    if (!allow_regime_violation) {
      const double need = (kind == ExperimentKind::Clt) ? 1.0 : 0.0;
      if (!(gap_exponent > need))
        throw ConfigError(
            "gap_exponent: " + std::string(kind == ExperimentKind::Clt
                                               ? "CLT runs need gap/epsilon -> 0 (gamma > 1)"
                                               : "consistency needs gap -> 0 (gamma > 0)") +
            "; pass allow_regime_violation for negative controls");
    }
    penalty.validate();
  }
};

struct RepOutcome {
  VectorXd estimate;
  std::string failure;  // empty when ok
  bool ok = false;
};

struct EpsilonRow {
  double epsilon = 0.0;
  double gap = 0.0;
  long long m = 0;
  int n_ok = 0;
  int n_failed = 0;
  VectorXd bias;         // mean(estimate) - target
  double bias_norm = 0.0;
  double bias_se = 0.0;  // sqrt(tr(cov)/n): scale of the mean's MC error
  double rmse = 0.0;
  double rmse_se = 0.0;
  // CLT runs only:
  MatrixXd emp_cov;
  double cov_frob_rel_err = -1.0;
  double ks_stat = -1.0;
  double ks_crit_1pct = -1.0;
  int ks_dof = 0;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::Consistency;
  std::string config_json;
  std::string config_hash;
  std::vector<EpsilonRow> rows;
  std::vector<std::vector<RepOutcome>> outcomes;  // [eps][replication]
  MatrixXd theory_cov;          // CLT runs
  nlohmann::json limit_law;     // diffusion CLT runs: {form, C, P, vec_covariance}
  bool valid = true;            // false when any grid point exceeds 1% failures
  bool decay_ok = false;
  double decay_z = 0.0;
  double wall_seconds = 0.0;  // never serialized into report.json

  void write(const std::string& dir) const;
};

namespace detail {

struct OuStreamStats {
  MatrixXd qv;     // d x d
  MatrixXd bb;     // m0 x m0 (drift only)
  MatrixXd w_raw;  // d x m0  (drift only)
};

struct NegXFill {
  template <class X, class B>
  void operator()(const X& x, B& beta) const {
    beta = -x;
  }
};

struct OneXFill {
  template <class X, class B>
  void operator()(const X& x, B& beta) const {
    beta[0] = 1.0;
    beta.template tail<X::RowsAtCompileTime>() = x;
  }
};

template <int D, int M0, bool WantDrift, class BetaFill>
OuStreamStats stream_ou_kron(const OuTransition& tr, const VectorXd& x0, long long m,
                             std::uint64_t key, std::uint64_t stream, BetaFill beta_fill) {
  using VecD = Eigen::Matrix<double, D, 1>;
  using MatDD = Eigen::Matrix<double, D, D>;
  using VecM = Eigen::Matrix<double, M0, 1>;
  using MatMM = Eigen::Matrix<double, M0, M0>;
  using MatDM = Eigen::Matrix<double, D, M0>;

  const VecD c = tr.offset;
  const MatDD prop = tr.propagator;
  const MatDD noise = tr.noise_sqrt;
  VecD x = x0;
  MatDD qv = MatDD::Zero();
  MatMM bb = MatMM::Zero();
  MatDM wr = MatDM::Zero();

  constexpr long long kBuf = 8192;
  constexpr long long kSteps = kBuf / D;
  double zbuf[kBuf];
  VecD z, xn, dx;
  VecM beta;
  long long done = 0;
  std::uint64_t nidx = 0;
  while (done < m) {
    const long long steps = std::min<long long>(kSteps, m - done);
    fill_normals(key, stream, nidx, static_cast<std::size_t>(steps * D), zbuf);
    nidx += static_cast<std::uint64_t>(steps * D);
    const double* zp = zbuf;
    for (long long s = 0; s < steps; ++s, zp += D) {
      for (int k = 0; k < D; ++k) z[k] = zp[k];
      xn = c + prop * x + noise * z;
      dx = xn - x;
      qv.noalias() += dx * dx.transpose();
      if constexpr (WantDrift) {
        beta_fill(x, beta);
        bb.noalias() += beta * beta.transpose();
        wr.noalias() += dx * beta.transpose();
      }
      x = xn;
    }
    done += steps;
  }
  OuStreamStats out;
  out.qv = qv;
  out.bb = bb;
  out.w_raw = wr;
  return out;
}

template <bool WantDrift>
OuStreamStats stream_ou_kron_dynamic(const OuTransition& tr, const VectorXd& x0, long long m,
                                     std::uint64_t key, std::uint64_t stream,
                                     const VectorFieldFn& beta0, int m0) {
  const Eigen::Index d = x0.size();
  VectorXd x = x0;
  MatrixXd qv = MatrixXd::Zero(d, d);
  MatrixXd bb = MatrixXd::Zero(m0, m0);
  MatrixXd wr = MatrixXd::Zero(d, m0);
  const long long bufsteps = 8192 / d;
  std::vector<double> zbuf(static_cast<std::size_t>(bufsteps * d));
  VectorXd z(d), xn(d), dx(d);
  long long done = 0;
  std::uint64_t nidx = 0;
  while (done < m) {
    const long long steps = std::min<long long>(bufsteps, m - done);
    fill_normals(key, stream, nidx, static_cast<std::size_t>(steps * d), zbuf.data());
    nidx += static_cast<std::uint64_t>(steps * d);
    const double* zp = zbuf.data();
    for (long long s = 0; s < steps; ++s, zp += d) {
      for (Eigen::Index k = 0; k < d; ++k) z[k] = zp[k];
      xn = tr.offset + tr.propagator * x + tr.noise_sqrt * z;
      dx = xn - x;
      qv.noalias() += dx * dx.transpose();
      if constexpr (WantDrift) {
        const VectorXd beta = beta0(x);
        bb.noalias() += beta * beta.transpose();
        wr.noalias() += dx * beta.transpose();
      }
      x = xn;
    }
    done += steps;
  }
  OuStreamStats out;
  out.qv = qv;
  out.bb = bb;
  out.w_raw = wr;
  return out;
}

inline OuStreamStats stream_ou_dispatch(const ModelSpec& model, const OuTransition& tr,
                                        const VectorXd& x0, long long m, std::uint64_t key,
                                        std::uint64_t stream, bool want_drift) {
  const int d = model.dim_state;
  if (want_drift) {
    if (model.beta0_kind == Beta0Kind::NegX && d == 1)
      return stream_ou_kron<1, 1, true>(tr, x0, m, key, stream, NegXFill{});
    if (model.beta0_kind == Beta0Kind::OneX) {
      if (d == 1) return stream_ou_kron<1, 2, true>(tr, x0, m, key, stream, OneXFill{});
      if (d == 2) return stream_ou_kron<2, 3, true>(tr, x0, m, key, stream, OneXFill{});
      if (d == 3) return stream_ou_kron<3, 4, true>(tr, x0, m, key, stream, OneXFill{});
    }
    return stream_ou_kron_dynamic<true>(tr, x0, m, key, stream, model.beta0, model.dim_beta);
  }
  if (d == 1) return stream_ou_kron<1, 1, false>(tr, x0, m, key, stream, NegXFill{});
  if (d == 2) return stream_ou_kron<2, 1, false>(tr, x0, m, key, stream, NegXFill{});
  if (d == 3) return stream_ou_kron<3, 1, false>(tr, x0, m, key, stream, NegXFill{});
  return stream_ou_kron_dynamic<false>(tr, x0, m, key, stream, model.beta0, 1);
}

/// Mirror of estimate_form1/estimate_form2 for constant fields and
/// pre-accumulated quadratic variation.
inline DiffusionFit finish_diffusion_const(const ModelSpec& model, const VectorXd& x0,
                                           const MatrixXd& qv, double gap, long long m) {
  DiffusionFit fit;
  fit.qv.matrix = qv;
  fit.qv.gap = gap;
  fit.qv.count = m;
  if (model.diffusion_form == DiffusionForm::Form1) {
    const MatrixXd s_sum = static_cast<double>(m) * model.a0(x0);
    fit.theta_raw = checked_solve(MatrixXd(gap * s_sum), qv, "SingularIntegral");
  } else if (model.diffusion_form == DiffusionForm::Form2) {
    const MatrixXd s0 = model.sigma0(x0);
    const MatrixXd k_sum = static_cast<double>(m) * kron(s0, s0);
    const VectorXd theta_vec =
        checked_solve(MatrixXd(gap * k_sum), vec(qv), "SingularIntegral");
    fit.theta_raw = unvec(theta_vec, qv.rows(), qv.cols());
  } else {
    throw std::invalid_argument("finish_diffusion_const: no closed-form diffusion");
  }
  fit.theta_sym = sym(fit.theta_raw);
  return fit;
}

inline void parallel_for(long long n, int threads, const std::function<void(long long)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads <= 1 || n <= 1) {
    for (long long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long long> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const long long i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int use = static_cast<int>(std::min<long long>(threads, n));
  pool.reserve(static_cast<std::size_t>(use));
  for (int t = 0; t < use; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json vector_to_json(const VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline nlohmann::json plan_to_json(const ExperimentPlan& plan, ExperimentKind kind) {
  nlohmann::json j;
  j["kind"] = (kind == ExperimentKind::Clt) ? "clt" : "consistency";
  j["model"] = plan.label;
  j["estimator"] = to_string(plan.estimator);
  j["epsilon_grid"] = plan.epsilon_grid;
  j["gap_exponent"] = plan.gap_exponent;
  j["replications"] = plan.replications;
  j["seed_base"] = plan.seed_base;
  j["use_exact_ou"] = plan.use_exact_ou;
  j["oracle_vartheta"] = plan.oracle_vartheta;
  j["allow_regime_violation"] = plan.allow_regime_violation;
  j["substeps"] = plan.substeps;
  j["stationary_n"] = plan.stationary_n;
  j["penalty"] = {{"enabled", plan.penalty.enabled},
                  {"alpha", plan.penalty.alpha},
                  {"p", plan.penalty.p}};
  j["newton_tol"] = plan.newton_tol;
  j["newton_max_iter"] = plan.newton_max_iter;
  j["theta0"] = {{"mu", vector_to_json(plan.theta0.mu)},
                 {"vartheta", matrix_to_json(plan.theta0.vartheta)}};
  j["x0"] = vector_to_json(plan.x0);
  if (plan.theory_cov_override)
    j["theory_cov_override"] = matrix_to_json(*plan.theory_cov_override);
  else
    j["theory_cov_override"] = nullptr;
  return j;
}

inline RepOutcome run_one(const ExperimentPlan& plan, const ScalingRegime& regime,
                          const std::optional<OuTransition>& transition, std::uint32_t eps_index,
                          std::uint32_t rep) {
  RepOutcome out;
  const std::uint64_t stream = make_stream(eps_index, rep);
  try {
    if (transition) {
      const bool want_drift = is_drift(plan.estimator);
      const OuStreamStats stats = stream_ou_dispatch(plan.model, *transition, plan.x0, regime.m,
                                                     plan.seed_base, stream, want_drift);
      if (!want_drift) {
        const DiffusionFit fit =
            finish_diffusion_const(plan.model, plan.x0, stats.qv, regime.gap, regime.m);
        out.estimate = vec(fit.theta_sym);
      } else {
        MatrixXd vartheta_plug;
        if (plan.oracle_vartheta) {
          vartheta_plug = plan.theta0.vartheta;
        } else {
          vartheta_plug =
              finish_diffusion_const(plan.model, plan.x0, stats.qv, regime.gap, regime.m)
                  .theta_sym;
        }
        DiffusionSolver solver(plan.model, vartheta_plug);
        const MatrixXd ainv = solver.inverse_at(plan.x0);
        const DriftFit fit = finish_kron_const(stats.bb, stats.w_raw, ainv, regime.gap);
        out.estimate = fit.mu_hat;
      }
      out.ok = true;
      return out;
    }

    SimConfig cfg;
    cfg.x0 = plan.x0;
    cfg.regime = regime;
    cfg.substeps = plan.substeps;
    cfg.seed = plan.seed_base;
    cfg.stream = stream;
    DiscreteRecord record = [&]() {
      if (plan.use_exact_ou && plan.model.ou) {
        const auto [g, h] = plan.model.ou->from_mu(plan.theta0.mu);
        return exact_ou(g, h, plan.theta0.vartheta, cfg);
      }
      return euler_maruyama(plan.model, plan.theta0, cfg);
    }();

    switch (plan.estimator) {
      case EstimatorKind::DiffForm1:
        out.estimate = vec(estimate_form1(record, plan.model.a0, plan.model.constant_diffusion)
                               .theta_sym);
        break;
      case EstimatorKind::DiffForm2:
        out.estimate = vec(estimate_form2(record, plan.model.sigma0, plan.model.constant_diffusion)
                               .theta_sym);
        break;
      case EstimatorKind::DriftLinear:
      case EstimatorKind::DriftNewton: {
        const MatrixXd vartheta_plug = plan.oracle_vartheta
                                           ? plan.theta0.vartheta
                                           : estimate_diffusion(record, plan.model).theta_sym;
        if (plan.estimator == EstimatorKind::DriftLinear) {
          const DriftFit fit = (plan.model.structure == DriftStructure::LinearDriftKron)
                                   ? amle_kron(record, plan.model, vartheta_plug)
                                   : amle_linear(record, plan.model, vartheta_plug);
          out.estimate = fit.mu_hat;
        } else {
          const DriftFit fit = amle_newton(record, plan.model, vartheta_plug, plan.penalty,
                                           regime.epsilon,
                                           VectorXd::Zero(plan.model.dim_drift_param),
                                           plan.newton_tol, plan.newton_max_iter);
          if (!fit.converged) {
            out.failure = fit.reason.empty() ? "NotConverged" : fit.reason;
            return out;
          }
          out.estimate = fit.mu_hat;
        }
        break;
      }
    }
    out.ok = true;
  } catch (const Error& e) {
    out.failure = e.name();
    out.ok = false;
  }
  return out;
}

}  // namespace detail

namespace detail {

inline ExperimentReport run_impl(const ExperimentPlan& plan, ExperimentKind kind) {
  plan.validate(kind);
  const auto t_start = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.kind = kind;
  const nlohmann::json config = plan_to_json(plan, kind);
  report.config_json = config.dump(2);
  report.config_hash = sha1_hex(report.config_json);

  const bool drift = is_drift(plan.estimator);
  const VectorXd target = drift ? plan.theta0.mu : vec(plan.theta0.vartheta);

  if (kind == ExperimentKind::Clt) {
    if (drift) {
      if (plan.theory_cov_override) {
        report.theory_cov = *plan.theory_cov_override;
      } else {
        const StationarySample sample = stationary_draws(
            plan.model, plan.theta0, plan.stationary_n, plan.seed_base ^ 0x7468656F72ULL);
        report.theory_cov = drift_clt_covariance(plan.model, plan.theta0, sample).sigma_inv;
      }
    } else {
      StationarySample sample;
      if (plan.model.constant_diffusion) {
        sample.points = plan.x0.transpose();  // field is state-independent: one point is exact
      } else {
        sample = stationary_draws(plan.model, plan.theta0, plan.stationary_n,
                                  plan.seed_base ^ 0x7468656F72ULL);
      }
      const bool form1 = plan.model.diffusion_form == DiffusionForm::Form1;
      const DiffusionLimitLaw law =
          diffusion_clt_covariance(plan.model.diffusion_form,
                                   form1 ? plan.model.a0 : plan.model.sigma0,
                                   plan.theta0.vartheta, sample);
      report.limit_law = {{"form", form1 ? "form1" : "form2"},
                          {"C", matrix_to_json(law.c)},
                          {"P", matrix_to_json(law.p)},
                          {"vec_covariance", matrix_to_json(law.vec_covariance)}};
      report.theory_cov =
          plan.theory_cov_override ? *plan.theory_cov_override : law.vec_covariance;
    }
  }

  const bool streamable = plan.use_exact_ou && plan.model.ou.has_value() &&
                          plan.model.structure == DriftStructure::LinearDriftKron &&
                          plan.model.constant_diffusion &&
                          plan.estimator != EstimatorKind::DriftNewton;

  for (std::size_t e = 0; e < plan.epsilon_grid.size(); ++e) {
    const double eps = plan.epsilon_grid[e];
    const ScalingRegime regime = ScalingRegime::from_gap_exponent(eps, plan.gap_exponent);
    std::optional<OuTransition> transition;
    if (streamable) {
      const auto [g, h] = plan.model.ou->from_mu(plan.theta0.mu);
      transition = OuTransition::compute(g, h, plan.theta0.vartheta, regime.gap);
    }
    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(plan.replications));
    parallel_for(plan.replications, plan.threads, [&](long long r) {
      outcomes[static_cast<std::size_t>(r)] =
          run_one(plan, regime, transition, static_cast<std::uint32_t>(e),
                  static_cast<std::uint32_t>(r));
    });

    EpsilonRow row;
    row.epsilon = eps;
    row.gap = regime.gap;
    row.m = regime.m;
    const Eigen::Index k = target.size();
    std::vector<double> sq_errors;
    MatrixXd ok_estimates(plan.replications, k);
    Eigen::Index n_ok = 0;
    for (const RepOutcome& o : outcomes) {
      if (!o.ok) {
        ++row.n_failed;
        continue;
      }
      ok_estimates.row(n_ok++) = o.estimate.transpose();
      sq_errors.push_back((o.estimate - target).squaredNorm());
    }
    row.n_ok = static_cast<int>(n_ok);
    if (row.n_failed > 0.01 * plan.replications) report.valid = false;
    if (n_ok > 0) {
      const MomentSummary mom = sample_moments(ok_estimates.topRows(n_ok));
      row.bias = mom.mean - target;
      row.bias_norm = row.bias.norm();
      row.bias_se = std::sqrt(mom.cov.trace() / static_cast<double>(n_ok));
      const RmseSummary rs = rmse_summary(sq_errors);
      row.rmse = rs.rmse;
      row.rmse_se = rs.se;
      if (kind == ExperimentKind::Clt) {
        const double scale = drift ? 1.0 / std::sqrt(eps)
                                   : 1.0 / std::sqrt(eps * regime.gap);
        MatrixXd standardized(n_ok, k);
        for (Eigen::Index i = 0; i < n_ok; ++i)
          standardized.row(i) = scale * (ok_estimates.row(i) - target.transpose());
        row.emp_cov = sample_moments(standardized).cov;
        row.cov_frob_rel_err = frobenius_rel_err(row.emp_cov, report.theory_cov);
        // For diffusion estimates the vectorized symmetric matrix has
        // duplicated off-diagonals, so its d^2 x d^2 covariance is singular;
        // the Mahalanobis/chi-square check runs on the distinct
        // lower-triangle coordinates.
        MatrixXd ks_rows = standardized;
        MatrixXd ks_cov = report.theory_cov;
        if (!drift) {
          const auto d = static_cast<Eigen::Index>(
              std::lround(std::sqrt(static_cast<double>(k))));
          std::vector<Eigen::Index> lower;
          for (Eigen::Index col = 0; col < d; ++col)
            for (Eigen::Index r2 = col; r2 < d; ++r2) lower.push_back(r2 + col * d);
          const auto kd = static_cast<Eigen::Index>(lower.size());
          ks_rows.resize(n_ok, kd);
          ks_cov.resize(kd, kd);
          for (Eigen::Index a = 0; a < kd; ++a) {
            ks_rows.col(a) = standardized.col(lower[a]);
            for (Eigen::Index b = 0; b < kd; ++b)
              ks_cov(a, b) = report.theory_cov(lower[a], lower[b]);
          }
        }
        row.ks_dof = static_cast<int>(ks_rows.cols());
        row.ks_stat = ks_statistic_chi2(mahalanobis_sq(ks_rows, ks_cov), row.ks_dof);
        row.ks_crit_1pct = ks_critical_1pct(n_ok);
      }
    }
    report.rows.push_back(std::move(row));
    report.outcomes.push_back(std::move(outcomes));
  }

  if (report.rows.size() >= 2) {
    const EpsilonRow& first = report.rows.front();
    const EpsilonRow& last = report.rows.back();
    const double se = std::sqrt(first.rmse_se * first.rmse_se + last.rmse_se * last.rmse_se);
    report.decay_z = (first.rmse - last.rmse) / std::max(se, 1e-300);
    report.decay_ok = first.rmse > last.rmse;
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace detail

/// Simulate-estimate sweeps along the epsilon grid; reports estimation-error
/// decay statistics per grid point.
inline ExperimentReport run_consistency(const ExperimentPlan& plan) {
  return detail::run_impl(plan, ExperimentKind::Consistency);
}

/// CLT verification: standardized estimates (drift: eps^{-1/2}(mu_hat-mu0);
/// diffusion: (eps*gap)^{-1/2}(vartheta_hat-vartheta0), vectorized) compared
/// to the theoretical limit covariance, plus the Mahalanobis/chi-square KS
/// statistic.
inline ExperimentReport run_clt(const ExperimentPlan& plan) {
  return detail::run_impl(plan, ExperimentKind::Clt);
}

inline void ExperimentReport::write(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };

  {
    nlohmann::json j;
    j["kind"] = (kind == ExperimentKind::Clt) ? "clt" : "consistency";
    j["config"] = nlohmann::json::parse(config_json);
    j["config_hash"] = config_hash;
    j["valid"] = valid;
    j["decay"] = {{"ok", decay_ok}, {"z", decay_z}};
    if (kind == ExperimentKind::Clt) {
      j["theory_cov"] = detail::matrix_to_json(theory_cov);
      if (!limit_law.is_null()) j["limit_law"] = limit_law;
    }
    nlohmann::json rows_json = nlohmann::json::array();
    for (const EpsilonRow& row : rows) {
      nlohmann::json r;
      r["epsilon"] = row.epsilon;
      r["gap"] = row.gap;
      r["m"] = row.m;
      r["n_ok"] = row.n_ok;
      r["n_failed"] = row.n_failed;
      r["bias"] = detail::vector_to_json(row.bias);
      r["bias_norm"] = row.bias_norm;
      r["bias_se"] = row.bias_se;
      r["rmse"] = row.rmse;
      r["rmse_se"] = row.rmse_se;
      if (kind == ExperimentKind::Clt) {
        r["emp_cov"] = detail::matrix_to_json(row.emp_cov);
        r["cov_frob_rel_err"] = row.cov_frob_rel_err;
        r["ks_stat"] = row.ks_stat;
        r["ks_crit_1pct"] = row.ks_crit_1pct;
        r["ks_dof"] = row.ks_dof;
      }
      rows_json.push_back(r);
    }
    j["rows"] = rows_json;
    std::map<std::string, int> failure_counts;
    for (const auto& eps_outcomes : outcomes)
      for (const RepOutcome& o : eps_outcomes)
        if (!o.ok) ++failure_counts[o.failure];
    j["failure_counts"] = failure_counts;
    std::ofstream os(fs::path(dir) / "report.json");
    os << j.dump(2) << "\n";
  }

  {
    std::ofstream os(fs::path(dir) / "summary.csv");
    os << "epsilon,gap,m,bias,rmse,cov_frob_err,ks_stat,failures\n";
    for (const EpsilonRow& row : rows) {
      os << fmt(row.epsilon) << "," << fmt(row.gap) << "," << row.m << "," << fmt(row.bias_norm)
         << "," << fmt(row.rmse) << ",";
      if (kind == ExperimentKind::Clt) os << fmt(row.cov_frob_rel_err);
      os << ",";
      if (kind == ExperimentKind::Clt) os << fmt(row.ks_stat);
      os << "," << row.n_failed << "\n";
    }
  }

  {
    std::ofstream os(fs::path(dir) / "raw_estimates.csv");
    Eigen::Index k = 0;
    for (const auto& eo : outcomes) {
      for (const RepOutcome& o : eo)
        if (o.ok) {
          k = o.estimate.size();
          break;
        }
      if (k > 0) break;
    }
    os << "eps_index,epsilon,replication,ok,failure";
    for (Eigen::Index j = 0; j < k; ++j) os << ",e" << (j + 1);
    os << "\n";
    for (std::size_t e = 0; e < outcomes.size(); ++e) {
      for (std::size_t r = 0; r < outcomes[e].size(); ++r) {
        const RepOutcome& o = outcomes[e][r];
        os << e << "," << fmt(rows[e].epsilon) << "," << r << "," << (o.ok ? 1 : 0) << ","
           << o.failure;
        for (Eigen::Index j = 0; j < k; ++j) {
          os << ",";
          if (o.ok) os << fmt(o.estimate[j]);
        }
        os << "\n";
      }
    }
  }

  {
    std::ofstream os(fs::path(dir) / "run_log.txt");
    os << "wall_seconds " << wall_seconds << "\n";
  }
}

}  // namespace sdecal
