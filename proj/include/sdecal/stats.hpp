#pragma once

// Small statistics helpers for the Monte Carlo harness: sample moments with
// standard errors, Mahalanobis distances, and a one-sample Kolmogorov-Smirnov
// comparison against the chi-square law.

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "sdecal/matrix_ops.hpp"

namespace sdecal {

struct MomentSummary {
  VectorXd mean;
  MatrixXd cov;  // with 1/(n-1) normalization
  long long n = 0;
};

/// Column-wise moments of rows(i) = one sample vector.
inline MomentSummary sample_moments(const MatrixXd& rows) {
  MomentSummary s;
  s.n = rows.rows();
  s.mean = rows.colwise().mean().transpose();
  const MatrixXd centered = rows.rowwise() - s.mean.transpose();
  const double denom = (s.n > 1) ? static_cast<double>(s.n - 1) : 1.0;
  s.cov = (centered.transpose() * centered) / denom;
  return s;
}

inline double frobenius_rel_err(const MatrixXd& estimate, const MatrixXd& reference) {
  return (estimate - reference).norm() / std::max(reference.norm(), 1e-300);
}

/// Squared Mahalanobis distances y^T cov^{-1} y per row.
inline std::vector<double> mahalanobis_sq(const MatrixXd& rows, const MatrixXd& cov) {
  Eigen::LDLT<MatrixXd> ldlt(cov);
  std::vector<double> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const VectorXd y = rows.row(i).transpose();
    out[static_cast<std::size_t>(i)] = y.dot(ldlt.solve(y));
  }
  return out;
}

/// One-sample KS statistic of the values against chi-square(dof).
inline double ks_statistic_chi2(std::vector<double> values, int dof) {
  std::sort(values.begin(), values.end());
  const boost::math::chi_squared dist(dof);
  const auto n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double f = boost::math::cdf(dist, std::max(values[i], 0.0));
    const double hi = (static_cast<double>(i) + 1.0) / n - f;
    const double lo = f - static_cast<double>(i) / n;
    d = std::max(d, std::max(hi, lo));
  }
  return d;
}

/// Asymptotic 1% critical value for the one-sample KS statistic with
/// Stephens' finite-sample correction factor.
inline double ks_critical_1pct(long long n) {
  const double rn = std::sqrt(static_cast<double>(n));
  return 1.6276 / (rn + 0.12 + 0.11 / rn);
}

/// RMSE of per-replication error norms plus its delta-method standard error.
struct RmseSummary {
  double rmse = 0.0;
  double se = 0.0;
};

inline RmseSummary rmse_summary(const std::vector<double>& sq_errors) {
  RmseSummary s;
  const auto n = static_cast<double>(sq_errors.size());
  if (sq_errors.empty()) return s;
  double mean = 0.0;
  for (double v : sq_errors) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : sq_errors) var += (v - mean) * (v - mean);
  var /= std::max(n - 1.0, 1.0);
  s.rmse = std::sqrt(mean);
  s.se = (s.rmse > 0.0) ? std::sqrt(var / n) / (2.0 * s.rmse) : 0.0;
  return s;
}

}  // namespace sdecal
