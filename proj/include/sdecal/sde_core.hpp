#pragma once

// Core vocabulary for parametric SDE calibration: the parameter pair
// theta = (mu, vartheta), model specifications dX = b(mu,X)dt + sigma(vartheta,X)dW,
// uniformly spaced observation records, and the (epsilon, gap, span) scaling
// regime tying observation frequency to time horizon.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdecal/errors.hpp"
#include "sdecal/matrix_ops.hpp"
#include "sdecal/rng.hpp"

namespace sdecal {

/// theta = (mu, vartheta): drift vector and symmetric p.d. diffusion matrix.
struct Parameter {
  VectorXd mu;
  MatrixXd vartheta;

  void validate() const {
    if (!mu.allFinite()) throw std::invalid_argument("Parameter: mu has non-finite entries");
    if (vartheta.rows() != vartheta.cols())
      throw std::invalid_argument("Parameter: vartheta not square");
    const double scale = std::max(vartheta.norm(), 1e-300);
    if ((vartheta - vartheta.transpose()).norm() > 1e-12 * scale)
      throw_error("NotSymmetric", "Parameter: vartheta is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(vartheta), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw_error("NotPositiveDefinite", "Parameter: vartheta must be positive definite");
  }
};

enum class DriftStructure { General, LinearDrift, LinearDriftKron };
enum class DiffusionForm { General, Form1, Form2 };

/// Fast-path identification of built-in Kron regressors beta0; Custom means
/// "call the std::function field".
enum class Beta0Kind { Custom, NegX, OneX };

using DriftFn = std::function<VectorXd(const VectorXd& mu, const VectorXd& x)>;
using DiffusionFn = std::function<MatrixXd(const MatrixXd& vartheta, const VectorXd& x)>;
using DriftJacobianFn = std::function<MatrixXd(const VectorXd& mu, const VectorXd& x)>;
using MatrixFieldFn = std::function<MatrixXd(const VectorXd& x)>;
using VectorFieldFn = std::function<VectorXd(const VectorXd& x)>;

/// Marks a model whose law at drift parameter mu is the OU process
/// dX = (g - H X)dt + kappa dW, and recovers (g, H) from mu.
struct OuTag {
  std::function<std::pair<VectorXd, MatrixXd>(const VectorXd& mu)> from_mu;
};

struct ModelSpec {
  int dim_state = 0;       // d
  int dim_drift_param = 0; // n0

  DriftFn drift;
  DiffusionFn diffusion;
  DriftJacobianFn drift_jacobian;  // may be empty; estimators fall back to differences

  DriftStructure structure = DriftStructure::General;
  MatrixFieldFn b0;                // LinearDrift / LinearDriftKron: d x n0
  VectorFieldFn beta0;             // LinearDriftKron: m0-vector
  int dim_beta = 0;                // m0
  Beta0Kind beta0_kind = Beta0Kind::Custom;

  DiffusionForm diffusion_form = DiffusionForm::General;
  MatrixFieldFn a0;        // Form1: a(vartheta,x) = a0(x)*vartheta
  MatrixFieldFn sigma0;    // Form2: sigma(vartheta,x) = sigma0(x)*kappa
  bool constant_diffusion = false;  // a(vartheta, .) does not depend on the state

  std::optional<OuTag> ou;

  bool has_jacobian() const { return static_cast<bool>(drift_jacobian); }
};

/// a(vartheta, x) = sigma*sigma^T, symmetrized to remove rounding skew.
inline MatrixXd eval_a(const ModelSpec& model, const MatrixXd& vartheta, const VectorXd& x) {
  const MatrixXd s = model.diffusion(vartheta, x);
  MatrixXd a = sym(s * s.transpose());
  if (!a.allFinite())
    throw_error("NonFiniteOutput", "diffusion callable produced NaN/Inf at sampled state");
  return a;
}

/// Attach the derived drift/jacobian callables of b(mu,x) = B0(x)*mu.
inline void set_linear_drift(ModelSpec& model, MatrixFieldFn b0_fn) {
  model.structure = DriftStructure::LinearDrift;
  model.b0 = std::move(b0_fn);
  const MatrixFieldFn& b0 = model.b0;
  model.drift = [b0](const VectorXd& mu, const VectorXd& x) -> VectorXd { return b0(x) * mu; };
  model.drift_jacobian = [b0](const VectorXd&, const VectorXd& x) -> MatrixXd { return b0(x); };
}

/// Attach the derived callables of b(mu,x) = A*beta0(x) with mu = vec(A),
/// equivalently B0(x) = beta0(x)^T (x) I_d.
inline void set_kron_drift(ModelSpec& model, VectorFieldFn beta0_fn, int dim_beta) {
  model.structure = DriftStructure::LinearDriftKron;
  model.beta0 = std::move(beta0_fn);
  model.dim_beta = dim_beta;
  model.dim_drift_param = model.dim_state * dim_beta;
  const VectorFieldFn& beta0 = model.beta0;
  const int d = model.dim_state;
  model.drift = [beta0, d](const VectorXd& mu, const VectorXd& x) -> VectorXd {
    const Eigen::Map<const MatrixXd> a(mu.data(), d, mu.size() / d);
    return a * beta0(x);
  };
  model.b0 = [beta0, d](const VectorXd& x) -> MatrixXd {
    return kron(beta0(x).transpose(), MatrixXd::Identity(d, d));
  };
  const MatrixFieldFn& b0 = model.b0;
  model.drift_jacobian = [b0](const VectorXd&, const VectorXd& x) -> MatrixXd { return b0(x); };
}

/// sigma(vartheta, x) = psd_sqrt(a0(x)*vartheta). The product must be
/// symmetric for the form to make sense; psd_sqrt enforces that.
inline void set_form1_diffusion(ModelSpec& model, MatrixFieldFn a0_fn, bool constant = false) {
  model.diffusion_form = DiffusionForm::Form1;
  model.a0 = std::move(a0_fn);
  model.constant_diffusion = constant;
  const MatrixFieldFn& a0 = model.a0;
  model.diffusion = [a0](const MatrixXd& vartheta, const VectorXd& x) -> MatrixXd {
    return psd_sqrt(MatrixXd(a0(x) * vartheta));
  };
}

/// sigma(vartheta, x) = sigma0(x)*kappa with kappa = psd_sqrt(vartheta);
/// any kappa with kappa*kappa^T = vartheta gives the same law.
inline void set_form2_diffusion(ModelSpec& model, MatrixFieldFn sigma0_fn, bool constant = false) {
  model.diffusion_form = DiffusionForm::Form2;
  model.sigma0 = std::move(sigma0_fn);
  model.constant_diffusion = constant;
  const MatrixFieldFn& sigma0 = model.sigma0;
  model.diffusion = [sigma0](const MatrixXd& vartheta, const VectorXd& x) -> MatrixXd {
    return sigma0(x) * psd_sqrt(vartheta);
  };
}

struct DissipativityShell {
  double radius = 0.0;
  double max_inner = 0.0;   // worst <x, b(mu,x)> on the sphere
  double max_scaled = 0.0;  // max_inner / radius^q0
  bool flagged = false;     // true when max_inner >= 0
};

struct DissipativityReport {
  std::vector<DissipativityShell> shells;
  double q0 = 2.0;
  bool any_flagged = false;
};

/// Samples spheres of the given radii and reports the worst-case drift/state
/// inner product per shell; a nonnegative maximum flags the shell as lacking
/// the inward pull that the ergodicity diagnostic looks for. In one
/// dimension the two sphere points are enumerated exactly.
inline DissipativityReport check_drift_dissipativity(const ModelSpec& model, const VectorXd& mu,
                                                     const VectorXd& radius_grid,
                                                     int sample_count, std::uint64_t seed,
                                                     double q0 = 2.0) {
  if (radius_grid.size() == 0)
    throw std::invalid_argument("check_drift_dissipativity: empty radius grid");
  for (Eigen::Index i = 0; i < radius_grid.size(); ++i) {
    if (radius_grid[i] <= 0.0 || (i > 0 && radius_grid[i] <= radius_grid[i - 1]))
      throw std::invalid_argument("check_drift_dissipativity: radii must be increasing, positive");
  }
  DissipativityReport report;
  report.q0 = q0;
  const int d = model.dim_state;
  NormalSource normals(seed, /*stream=*/0x64697373ULL);
  for (Eigen::Index ri = 0; ri < radius_grid.size(); ++ri) {
    const double r = radius_grid[ri];
    double worst = -std::numeric_limits<double>::infinity();
    auto probe = [&](const VectorXd& x) {
      const double ip = x.dot(model.drift(mu, x));
      if (ip > worst) worst = ip;
    };
    if (d == 1) {
      probe(VectorXd::Constant(1, r));
      probe(VectorXd::Constant(1, -r));
    } else {
      for (int k = 0; k < sample_count; ++k) {
        VectorXd z(d);
        for (int c = 0; c < d; ++c) z[c] = normals();
        const double nrm = z.norm();
        if (nrm == 0.0) continue;
        probe(VectorXd(z * (r / nrm)));
      }
    }
    DissipativityShell shell;
    shell.radius = r;
    shell.max_inner = worst;
    shell.max_scaled = worst / std::pow(r, q0);
    shell.flagged = worst >= 0.0;
    report.any_flagged = report.any_flagged || shell.flagged;
    report.shells.push_back(shell);
  }
  return report;
}

/// Observation-frequency regime: span T = 1/epsilon, uniform gap,
/// m = (gap*epsilon)^{-1} observations past t0.
struct ScalingRegime {
  double epsilon = 0.0;
  double gap = 0.0;
  double span = 0.0;
  long long m = 0;
  std::optional<double> gap_exponent;

  /// gap = epsilon^gamma, rounded so that m*gap*epsilon = 1.
  static ScalingRegime from_gap_exponent(double epsilon, double gamma) {
    if (!(epsilon > 0.0 && epsilon <= 1.0))
      throw ConfigError("epsilon: must lie in (0,1], got " + std::to_string(epsilon));
    const double target_m = std::pow(epsilon, -(1.0 + gamma));
    const long long m = std::llround(target_m);
    if (m < 1) throw ConfigError("gap_exponent: regime yields m < 1");
    ScalingRegime r;
    r.epsilon = epsilon;
    r.m = m;
    r.gap = 1.0 / (static_cast<double>(m) * epsilon);
    r.span = 1.0 / epsilon;
    r.gap_exponent = gamma;
    return r;
  }

  /// Explicit gap; requires 1/(gap*epsilon) to be an integer up to 1e-9.
  static ScalingRegime from_gap(double epsilon, double gap) {
    if (!(epsilon > 0.0 && epsilon <= 1.0))
      throw ConfigError("epsilon: must lie in (0,1], got " + std::to_string(epsilon));
    if (!(gap > 0.0)) throw ConfigError("gap: must be positive");
    const long long m = std::llround(1.0 / (gap * epsilon));
    if (m < 1) throw ConfigError("gap: larger than the span 1/epsilon");
    ScalingRegime r;
    r.epsilon = epsilon;
    r.m = m;
    r.gap = gap;
    r.span = 1.0 / epsilon;
    if (std::abs(static_cast<double>(m) * gap * epsilon - 1.0) > 1e-9)
      throw ConfigError("gap: span/gap is not an integer observation count");
    return r;
  }

  void validate() const {
    if (std::abs(static_cast<double>(m) * gap * epsilon - 1.0) > 1e-9)
      throw ConfigError("ScalingRegime: m*gap*epsilon deviates from 1");
  }
};

/// Uniformly spaced observations X(t_0), ..., X(t_m) with t_i = t0 + i*gap.
class DiscreteRecord {
 public:
  DiscreteRecord(double t0, double gap, MatrixXd states)
      : t0_(t0), gap_(gap), states_(std::move(states)) {
    if (states_.rows() < 2) throw std::invalid_argument("DiscreteRecord: need at least 2 rows");
    if (!(gap_ > 0.0)) throw std::invalid_argument("DiscreteRecord: gap must be positive");
  }

  Eigen::Index dim() const { return states_.cols(); }
  Eigen::Index increments() const { return states_.rows() - 1; }  // m
  double gap() const { return gap_; }
  double t0() const { return t0_; }
  double span() const { return static_cast<double>(increments()) * gap_; }
  double time(Eigen::Index i) const { return t0_ + static_cast<double>(i) * gap_; }
  const MatrixXd& states() const { return states_; }
  VectorXd state(Eigen::Index i) const { return states_.row(i).transpose(); }

  VectorXd times() const {
    VectorXd t(states_.rows());
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = time(i);
    return t;
  }

  void write_csv(std::ostream& os) const {
    os << "t";
    for (Eigen::Index j = 0; j < dim(); ++j) os << ",x" << (j + 1);
    os << "\n";
    char buf[32];
    for (Eigen::Index i = 0; i < states_.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", time(i));
      os << buf;
      for (Eigen::Index j = 0; j < dim(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", states_(i, j));
        os << "," << buf;
      }
      os << "\n";
    }
  }

  void write_csv_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("output: cannot open '" + path + "' for writing");
    write_csv(os);
  }

  static DiscreteRecord from_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("input: empty CSV");
    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    Eigen::Index ncols = -1;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> vals;
      while (std::getline(ss, cell, ',')) {
        try {
          vals.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ConfigError("input: non-numeric cell at line " + std::to_string(lineno));
        }
      }
      if (vals.size() < 2) throw ConfigError("input: too few columns at line " + std::to_string(lineno));
      if (ncols < 0) ncols = static_cast<Eigen::Index>(vals.size()) - 1;
      if (static_cast<Eigen::Index>(vals.size()) - 1 != ncols)
        throw ConfigError("input: ragged row at line " + std::to_string(lineno));
      times.push_back(vals[0]);
      vals.erase(vals.begin());
      rows.push_back(std::move(vals));
      if (!std::isfinite(times.back()))
        throw ConfigError("input: non-finite time at line " + std::to_string(lineno));
    }
    if (rows.size() < 2) throw ConfigError("input: need at least 2 observations");
    const auto m = static_cast<Eigen::Index>(rows.size()) - 1;
    const double gap = (times.back() - times.front()) / static_cast<double>(m);
    if (!(gap > 0.0)) throw ConfigError("input: times must be increasing");
    for (Eigen::Index i = 1; i <= m; ++i) {
      const double step = times[i] - times[i - 1];
      if (std::abs(step - gap) > 1e-12 * gap)
        throw ConfigError(
            "input: observation times violate the uniform-gap invariant "
            "|t_i - t_{i-1} - gap| <= 1e-12*gap at row " +
            std::to_string(i + 1));
    }
    MatrixXd states(m + 1, ncols);
    for (Eigen::Index i = 0; i <= m; ++i)
      for (Eigen::Index j = 0; j < ncols; ++j) {
        states(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (!std::isfinite(states(i, j)))
          throw ConfigError("input: non-finite state at row " + std::to_string(i + 2));
      }
    return DiscreteRecord(times.front(), gap, std::move(states));
  }

  static DiscreteRecord from_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("input: cannot open '" + path + "'");
    return from_csv(is);
  }

 private:
  double t0_;
  double gap_;
  MatrixXd states_;
};

}  // namespace sdecal
