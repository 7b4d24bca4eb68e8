#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dshape/surface.hpp"

namespace dshape {

// Raw Hermite polynomial H_n(t): H_0 = 1, H_{n+1} = 2 t H_n - 2 n H_{n-1}.
double hermite_eval(int n, double t);

// Gauss-Hermite rule for weight exp(-t^2): integral f(t) exp(-t^2) dt
// ~ sum w_i f(t_i). Nodes via the Golub-Welsch tridiagonal eigenproblem.
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
GaussHermiteRule gauss_hermite(int n_nodes);

// Eigenbasis of the Gaussian-kernel integral operator on L2(R, gamma) with
// dgamma = pi^{-1/2} exp(-t^2) dt:
//   lambda_n = a^{n+1/2},  phi_n(t) = b / sqrt(2^n n!) exp(-c t^2) H_n(h t).
// The constant a is validated against the Mercer identity
//   sum_n lambda_n phi_n(t) phi_n(t') = exp(-(t-t')^2)
// at construction; an inconsistent candidate is replaced by the value
// consistent with c and h, and b is renormalized so |phi_0| = 1.
class EigenBasis {
 public:
  explicit EigenBasis(int max_degree = 60);

  double a() const { return a_; }
  double b() const { return b_; }
  double c() const { return c_; }
  double h() const { return h_; }
  int max_degree() const { return max_degree_; }

  double eigenvalue(int n) const;
  // Numerically stable evaluation (normalized recursion internally).
  double eigenfunction(int n, double t) const;
  // phi_0..phi_N at t in one recursion sweep.
  Eigen::VectorXd eigenfunctions_upto(int max_n, double t) const;

  // max |sum_{n<=N} lambda_n phi_n(t) phi_n(t') - exp(-(t-t')^2)| over the
  // given grid.
  double mercer_error(int truncation, const Eigen::VectorXd& grid) const;
  // max |<phi_n, phi_m> - delta_nm| for n,m <= max_n, by Gauss-Hermite
  // quadrature.
  double orthonormality_error(int max_n, int quad_nodes = 200) const;

 private:
  double a_, b_, c_, h_;
  int max_degree_;
};

// Truncated Karhunen-Loeve representation of a smooth R^3-valued Gaussian
// random field W(x) = [U^1(x/s_1), U^2(x/s_2), U^3(x/s_3)] with
//   U^j(y) = sum_{max(m,n,p)<=N} Z^j_{m,n,p} sqrt(lambda_m lambda_n lambda_p)
//            phi_m(y_1) phi_n(y_2) phi_p(y_3).
// All normal draws are fixed at construction; evaluation is pure.
class FieldSpec {
 public:
  FieldSpec(const EigenBasis& basis, int truncation, const Vec3& scales,
            std::uint64_t seed);

  int truncation() const { return truncation_; }
  const Vec3& scales() const { return scales_; }
  std::uint64_t seed() const { return seed_; }

  // U^j evaluated at x / s_j; requires |x_i / s_j| <= 4.
  double sample_scalar(int component, const Vec3& x) const;
  Vec3 sample_vector(const Vec3& x) const;

  // Partial sums U(N) for N = 0..truncation at x/s_j, used by the
  // remainder-decay checks.
  Eigen::VectorXd partial_sums(int component, const Vec3& x) const;

  // test hook: zero out all coefficient draws
  void zero_coefficients();

 private:
  const EigenBasis* basis_;
  int truncation_;
  Vec3 scales_;
  std::uint64_t seed_;
  // per component: (N+1)^2 x (N+1) matrix, rows flatten (m,n), cols p
  std::vector<Eigen::MatrixXd> coeffs_;

  double contract(int component, const Vec3& y, int upto) const;
};

// Smallest N > 6 with exp(radius^2/2) N^0.7 / 2^N <= target (the remainder
// envelope with unit constant).
int truncation_for_tolerance(double target_sup_error, double domain_radius);

// `x y z W1 W2 W3` rows for visualization.
void dump_field(const FieldSpec& spec, const Points& pts,
                const std::filesystem::path& path);

}  // namespace dshape
