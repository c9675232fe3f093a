#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>

#include "escape/types.hpp"

namespace escape {

/// Kronecker product M (x) I_m.
template <typename Derived>
MatrixX<typename Derived::Scalar> block_extend(const Eigen::MatrixBase<Derived>& M, Eigen::Index m) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(M.rows() * m, M.cols() * m);
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c)
      if (M(r, c) != Scalar(0))
        out.block(r * m, c * m, m, m).diagonal().setConstant(M(r, c));
  return out;
}

/// Stacks the rows of an agent matrix into col{x_1, ..., x_K}.
template <typename Derived>
VectorX<typename Derived::Scalar> stack_rows(const Eigen::MatrixBase<Derived>& X) {
  VectorX<typename Derived::Scalar> v(X.size());
  for (Eigen::Index k = 0; k < X.rows(); ++k) v.segment(k * X.cols(), X.cols()) = X.row(k).transpose();
  return v;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> unstack_rows(const Eigen::MatrixBase<Derived>& v, Eigen::Index K) {
  const Eigen::Index m = v.size() / K;
  MatrixX<typename Derived::Scalar> X(K, m);
  for (Eigen::Index k = 0; k < K; ++k) X.row(k) = v.segment(k * m, m).transpose();
  return X;
}

/// Neighbourhood combination w_k <- sum_l a_{lk} x_l on an agent matrix
/// (column-stochastic convention, i.e. A^T X).
template <typename DA, typename DX>
MatrixX<typename DX::Scalar> combine(const Eigen::MatrixBase<DA>& A, const Eigen::MatrixBase<DX>& X) {
  return A.transpose() * X;
}

/// sum_k x_k^T H x_k over the rows of an agent matrix, i.e. ||col{x_k}||^2_{I (x) H}.
template <typename DX, typename DH>
typename DX::Scalar block_weighted_sq_norm(const Eigen::MatrixBase<DX>& X, const Eigen::MatrixBase<DH>& H) {
  return (X * H).cwiseProduct(X).sum();
}

/// f(S) for symmetric S via its eigendecomposition.
template <typename Derived, typename F>
MatrixX<typename Derived::Scalar> symmetric_function(const Eigen::MatrixBase<Derived>& S, F&& f) {
  using Scalar = typename Derived::Scalar;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(S.eval());
  VectorX<Scalar> fv = eig.eigenvalues().unaryExpr(f);
  return eig.eigenvectors() * fv.asDiagonal() * eig.eigenvectors().transpose();
}

/// Symmetric square root of a PSD matrix; negative rounding noise is clipped.
template <typename Derived>
MatrixX<typename Derived::Scalar> psd_sqrt(const Eigen::MatrixBase<Derived>& S) {
  using Scalar = typename Derived::Scalar;
  return symmetric_function(S, [](Scalar x) { return x > Scalar(0) ? std::sqrt(x) : Scalar(0); });
}

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& S) {
  return (S + S.transpose()) / typename Derived::Scalar(2);
}

}  // namespace escape
