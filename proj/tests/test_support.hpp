#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "impstab/core.hpp"

namespace impstab::testing {

template <typename Scalar = double>
ImpulseSystem<Scalar> scalar_system(Scalar e, Scalar b, Scalar period = 1) {
  ImpulseSystem<Scalar> sys;
  sys.schedule = make_schedule<Scalar>({period});
  sys.flows.push_back(MatrixX<Scalar>::Constant(1, 1, e));
  sys.inputs.push_back(MatrixX<Scalar>::Constant(1, 1, b));
  return sys;
}

inline MatrixX<double> gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  MatrixX<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline VectorX<double> gaussian_vector(Eigen::Index n, std::mt19937_64& rng) { return gaussian(n, 1, rng).col(0); }

/// Random system with flows scaled to spectral radius around `radius`.
inline ImpulseSystem<double> random_system(std::mt19937_64& rng, int d, int m, int hbar, double radius = 1.0) {
  ImpulseSystem<double> sys;
  std::vector<double> times;
  std::uniform_real_distribution<double> gap(0.5, 1.5);
  double t = 0;
  for (int k = 0; k < hbar; ++k) times.push_back(t += gap(rng));
  sys.schedule = make_schedule(times);
  for (int k = 0; k < hbar; ++k) {
    sys.flows.push_back(gaussian(d, d, rng, radius / std::sqrt(static_cast<double>(d))));
    sys.inputs.push_back(gaussian(d, m, rng));
  }
  return sys;
}

/// Minimum over stacked controls v_{l+1..khat} of
///   sum_j <Q x(t_j), x(t_j)> + <R v_j, v_j> + <M x(t_khat^+), x(t_khat^+)>
/// with x(t_l^+) = x0, by solving the normal equations of the quadratic.
/// Q and R are the per-slot weights indexed by nu(j).
inline double stacked_lq_minimum(const ImpulseSystem<double>& sys, const std::vector<MatrixX<double>>& Q,
                                 const std::vector<MatrixX<double>>& R, const MatrixX<double>& M,
                                 const VectorX<double>& x0, long ell, long khat) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  const long n = khat - ell;
  const int h = sys.hbar();
  const auto slot = [h](long j) { return static_cast<std::size_t>((j - 1) % h); };
  // z = [x(t_{l+1}); ...; x(t_khat); x(t_khat^+)] = Z0 x0 + Z1 v.
  const Eigen::Index zr = d * (n + 1);
  MatrixX<double> Z0 = MatrixX<double>::Zero(zr, d);
  MatrixX<double> Z1 = MatrixX<double>::Zero(zr, m * n);
  MatrixX<double> X0 = MatrixX<double>::Identity(d, d);   // post-state sensitivity to x0
  MatrixX<double> X1 = MatrixX<double>::Zero(d, m * n);   // post-state sensitivity to v
  for (long i = 1; i <= n; ++i) {
    const long j = ell + i;
    const MatrixX<double>& E = sys.flows[slot(j)];
    const MatrixX<double>& B = sys.inputs[slot(j)];
    X0 = (E * X0).eval();
    X1 = (E * X1).eval();
    Z0.middleRows((i - 1) * d, d) = X0;
    Z1.middleRows((i - 1) * d, d) = X1;
    X1.middleCols((i - 1) * m, m) += B;
  }
  Z0.bottomRows(d) = X0;
  Z1.bottomRows(d) = X1;
  MatrixX<double> W = MatrixX<double>::Zero(zr, zr);
  MatrixX<double> Rs = MatrixX<double>::Zero(m * n, m * n);
  for (long i = 1; i <= n; ++i) {
    W.block((i - 1) * d, (i - 1) * d, d, d) = Q[slot(ell + i)];
    Rs.block((i - 1) * m, (i - 1) * m, m, m) = R[slot(ell + i)];
  }
  W.bottomRightCorner(d, d) = M;
  const MatrixX<double> H = Z1.transpose() * W * Z1 + Rs;
  const VectorX<double> g = Z1.transpose() * W * Z0 * x0;
  const VectorX<double> v = -H.ldlt().solve(g);
  const VectorX<double> z = Z0 * x0 + Z1 * v;
  return z.dot(W * z) + v.dot(Rs * v);
}

}  // namespace impstab::testing
