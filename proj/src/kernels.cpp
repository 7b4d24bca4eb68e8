#include "dshape/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace dshape {

void KernelParams::validate() const {
  if (sigma < 0 || tau < 0 || lambda <= 0) {
    throw std::invalid_argument("KernelParams: scales must be positive");
  }
}

Eigen::MatrixXd gauss_kernel_matrix(const Points& a, const Points& b, double s) {
  if (s <= 0) throw std::invalid_argument("gauss_kernel_matrix: scale must be > 0");
  const Eigen::VectorXd a2 = a.colwise().squaredNorm();
  const Eigen::VectorXd b2 = b.colwise().squaredNorm();
  Eigen::MatrixXd d2 = a2.replicate(1, b.cols()) +
                       b2.transpose().replicate(a.cols(), 1) -
                       2.0 * (a.transpose() * b);
  return (d2.array().max(0.0) * (-1.0 / (s * s))).exp();
}

double hilb_dissimilarity(const Points& a, const Points& b, double tau) {
  if (a.cols() == 0 || b.cols() == 0) {
    throw std::invalid_argument("hilb_dissimilarity: empty point set");
  }
  if (tau <= 0) throw std::invalid_argument("hilb_dissimilarity: tau must be > 0");
  const double n = static_cast<double>(a.cols());
  const double m = static_cast<double>(b.cols());
  const double saa = gauss_kernel_matrix(a, a, tau).sum();
  const double sbb = gauss_kernel_matrix(b, b, tau).sum();
  const double sab = gauss_kernel_matrix(a, b, tau).sum();
  return saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m);
}

Points hilb_gradient(const Points& a, const Points& b, double tau) {
  const double n = static_cast<double>(a.cols());
  const double m = static_cast<double>(b.cols());
  const double inv_t2 = 1.0 / (tau * tau);
  const Eigen::MatrixXd kaa = gauss_kernel_matrix(a, a, tau);
  const Eigen::MatrixXd kab = gauss_kernel_matrix(a, b, tau);

  // d/dx_i exp(-|x_i - z|^2/tau^2) = -(2/tau^2)(x_i - z) K
  // self term: (2/N^2) sum_j grad_1 K(a_i, a_j)
  const Eigen::VectorXd row_a = kaa.rowwise().sum();
  const Points self = a * kaa - a * row_a.asDiagonal();
  // cross term: -(2/NM) sum_j grad_1 K(a_i, b_j)
  const Eigen::VectorXd row_b = kab.rowwise().sum();
  const Points cross = b * kab.transpose() - a * row_b.asDiagonal();
  return (2.0 * inv_t2) * ((2.0 / (n * n)) * self - (2.0 / (n * m)) * cross);
}

Points hilb_hessian_vec(const Points& a, const Points& b, double tau,
                        const Points& v) {
  const double n = static_cast<double>(a.cols());
  const double m = static_cast<double>(b.cols());
  const double inv_t2 = 1.0 / (tau * tau);
  const Eigen::MatrixXd kaa = gauss_kernel_matrix(a, a, tau);
  const Eigen::MatrixXd kab = gauss_kernel_matrix(a, b, tau);

  // Hessian blocks of phi(d) = exp(-|d|^2/tau^2):
  //   H(d) = K(d) * (4/tau^4 d d^T - 2/tau^2 I)
  auto pair_hv = [&](const Vec3& d, double k, const Vec3& w) -> Vec3 {
    return k * (4.0 * inv_t2 * inv_t2 * d.dot(w) * d - 2.0 * inv_t2 * w);
  };

  Points out = Points::Zero(3, a.cols());
  for (int i = 0; i < a.cols(); ++i) {
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < a.cols(); ++j) {
      if (j == i) continue;
      const Vec3 d = a.col(i) - a.col(j);
      acc += (2.0 / (n * n)) * pair_hv(d, kaa(i, j), v.col(i) - v.col(j));
    }
    for (int j = 0; j < b.cols(); ++j) {
      const Vec3 d = a.col(i) - b.col(j);
      acc -= (2.0 / (n * m)) * pair_hv(d, kab(i, j), v.col(i));
    }
    out.col(i) = acc;
  }
  return out;
}

double default_tau(const Points& a, const Points& b) {
  Points joint(3, a.cols() + b.cols());
  joint << a, b;
  const double diag = bbox_diagonal(joint);
  if (diag <= 0) throw std::invalid_argument("default_tau: degenerate cloud");
  return 0.2 * diag;
}

}  // namespace dshape
