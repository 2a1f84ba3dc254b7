#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "sdecal/errors.hpp"

namespace sdecal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline bool is_symmetric(const MatrixXd& a, double rel_tol = 1e-8) {
  const double scale = std::max(a.norm(), 1e-300);
  return (a - a.transpose()).norm() <= rel_tol * scale;
}

/// (A + A^T)/2.
inline MatrixXd sym(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Column-stacking vectorization.
inline VectorXd vec(const MatrixXd& a) {
  return Eigen::Map<const VectorXd>(a.data(), a.size());
}

/// Inverse of vec: reshape a length rows*cols vector into a rows x cols matrix.
inline MatrixXd unvec(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols)
    throw std::invalid_argument("unvec: size mismatch");
  return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

/// Kronecker product A (x) B; satisfies vec(B*X*A^T) = (A (x) B) vec(X).
inline MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

/// Commutation matrix K_{m,n}: K * vec(A) = vec(A^T) for m x n matrices A.
inline MatrixXd commutation_matrix(Eigen::Index m, Eigen::Index n) {
  MatrixXd k = MatrixXd::Zero(m * n, m * n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(j + i * n, i + j * m) = 1.0;
  return k;
}

/// Symmetric matrix that is numerically p.s.d. (eigenvalues >= -1e-10*||A||).
struct PsdMatrix {
  MatrixXd data;

  explicit PsdMatrix(MatrixXd a) : data(std::move(a)) {
    if (data.rows() != data.cols())
      throw std::invalid_argument("PsdMatrix: not square");
    if (!is_symmetric(data))
      throw_error("NotSymmetric", "PsdMatrix requires a symmetric matrix");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(data), Eigen::EigenvaluesOnly);
    const double floor = -1e-10 * std::max(data.norm(), 1e-300);
    if (es.eigenvalues().minCoeff() < floor)
      throw_error("NotPositiveSemidefinite",
                  "eigenvalue " + std::to_string(es.eigenvalues().minCoeff()) +
                      " below p.s.d. tolerance");
  }
};

/// Unique symmetric p.s.d. B with B*B = A, via symmetric eigendecomposition;
/// eigenvalues below zero (rounding noise) are clamped to zero.
inline MatrixXd psd_sqrt(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("psd_sqrt: not square");
  if (!is_symmetric(a))
    throw_error("NotSymmetric", "psd_sqrt requires a symmetric input");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(a));
  VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return sym(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

inline PsdMatrix psd_sqrt(const PsdMatrix& a) { return PsdMatrix(psd_sqrt(a.data)); }

/// LU solve with partial pivoting; refuses near-singular systems.
inline MatrixXd solve_linear(const MatrixXd& a, const MatrixXd& rhs,
                             const char* error_name = "IllConditioned") {
  Eigen::PartialPivLU<MatrixXd> lu(a);
  const double rc = lu.rcond();
  if (!(rc > 1e-12))
    throw_error(error_name, "linear system has condition estimate > 1e12 (rcond=" +
                                std::to_string(rc) + ")");
  return lu.solve(rhs);
}

/// Solve H*F + F*H^T = Q for symmetric F through the vectorized system
/// (I (x) H + H (x) I) vec(F) = vec(Q). H must have eigenvalues with
/// positive real part (a stable mean-reversion matrix).
inline MatrixXd solve_lyapunov(const MatrixXd& h, const MatrixXd& q) {
  const Eigen::Index d = h.rows();
  if (h.cols() != d || q.rows() != d || q.cols() != d)
    throw std::invalid_argument("solve_lyapunov: dimension mismatch");
  if (!is_symmetric(q))
    throw_error("NotSymmetric", "solve_lyapunov requires symmetric Q");
  Eigen::EigenSolver<MatrixXd> es(h);
  if (es.eigenvalues().real().minCoeff() <= 0.0)
    throw_error("UnstableH", "H has an eigenvalue with nonpositive real part");
  const MatrixXd id = MatrixXd::Identity(d, d);
  const MatrixXd system = kron(id, h) + kron(h, id);
  const MatrixXd f = sym(unvec(solve_linear(system, vec(q)), d, d));
  const double resid = (h * f + f * h.transpose() - q).norm();
  if (resid > 1e-9 * std::max(q.norm(), 1e-300))
    throw_error("IllConditioned", "Lyapunov residual " + std::to_string(resid) +
                                      " exceeds tolerance");
  return f;
}

}  // namespace sdecal
