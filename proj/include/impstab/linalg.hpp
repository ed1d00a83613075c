#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <type_traits>

#include <Eigen/Dense>

namespace impstab {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Default relative threshold for numerical rank decisions.
template <typename Scalar>
constexpr Scalar kRankThreshold = Scalar(1e-10);

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (typename Derived::Scalar(0.5) * (m + m.transpose())).eval();
}

/// Largest singular value. Empty matrices have norm 0.
template <typename Derived>
typename Derived::Scalar operator_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0 || m.cols() == 0) return Scalar(0);
  if (m.cols() == 1) return m.norm();
  MatrixX<Scalar> dense = m;
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(dense);
  return svd.singularValues()(0);
}

template <typename Derived>
VectorX<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0 || m.cols() == 0) return VectorX<Scalar>();
  MatrixX<Scalar> dense = m;
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(dense);
  return svd.singularValues();
}

/// Count of singular values above rel * sigma_max.
template <typename Derived>
int numerical_rank(const Eigen::MatrixBase<Derived>& m,
                   typename Derived::RealScalar rel = 1e-10) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  using Plain = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Plain dense = m;
  Eigen::JacobiSVD<Plain> svd(dense);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0) return 0;
  const auto cut = rel * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cut) ++rank;
  }
  return rank;
}

/// Orthonormal basis (columns) of the kernel of m. A matrix with zero rows has
/// the whole space as kernel.
template <typename Derived>
MatrixX<typename Derived::Scalar> null_space_basis(const Eigen::MatrixBase<Derived>& m,
                                                   typename Derived::Scalar rel = 1e-10) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = m.cols();
  if (m.rows() == 0) return MatrixX<Scalar>::Identity(n, n);
  MatrixX<Scalar> dense = m;
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(dense, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  int rank = 0;
  if (s.size() > 0 && s(0) > 0) {
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s(i) > rel * s(0)) ++rank;
    }
  }
  return svd.matrixV().rightCols(n - rank);
}

template <typename Derived>
typename Derived::Scalar min_eigenvalue(const Eigen::MatrixBase<Derived>& sym) {
  using Scalar = typename Derived::Scalar;
  if (sym.rows() == 0) return std::numeric_limits<Scalar>::infinity();
  MatrixX<Scalar> dense = symmetrized(sym);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(dense, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// PSD up to eigmin >= -tol * max(1, ||m||).
template <typename Derived>
bool is_psd(const Eigen::MatrixBase<Derived>& sym, typename Derived::Scalar tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  const Scalar scale = std::max<Scalar>(Scalar(1), operator_norm(sym));
  return min_eigenvalue(sym) >= -tol * scale;
}

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) return false;
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace impstab
