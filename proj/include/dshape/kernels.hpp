#pragma once

#include "dshape/surface.hpp"

namespace dshape {

// Scale parameters shared by the registration machinery: sigma drives the
// velocity kernel, tau the measure-matching kernel, lambda weighs the
// relaxed matching penalty.
struct KernelParams {
  double sigma = 0.0;   // 0 = derive from source extent
  double tau = 0.0;     // 0 = derive from pair extent
  double lambda = 1.0;

  void validate() const;
};

inline double gauss_kernel(const Vec3& x, const Vec3& y, double s) {
  return std::exp(-(x - y).squaredNorm() / (s * s));
}

// K(i,j) = exp(-|a_i - b_j|^2 / s^2)
Eigen::MatrixXd gauss_kernel_matrix(const Points& a, const Points& b, double s);

// Squared RKHS distance between the uniform empirical measures carried by the
// two grids:
//   (1/N^2) sum K(x,x') + (1/M^2) sum K(y,y') - (2/NM) sum K(x,y)
double hilb_dissimilarity(const Points& a, const Points& b, double tau);

// Gradient of hilb_dissimilarity with respect to the points of a.
Points hilb_gradient(const Points& a, const Points& b, double tau);

// Hessian-vector product of hilb_dissimilarity w.r.t. a, applied to v.
Points hilb_hessian_vec(const Points& a, const Points& b, double tau,
                        const Points& v);

// Default matching scale: 0.2 x bounding-box diagonal of the joint cloud.
double default_tau(const Points& a, const Points& b);

}  // namespace dshape
