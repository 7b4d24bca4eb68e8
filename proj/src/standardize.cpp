#include "dshape/standardize.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace dshape {

Vec3 center_of_mass(const Points& pts) {
  if (pts.cols() == 0) throw std::invalid_argument("center_of_mass: empty grid");
  return pts.rowwise().mean();
}

Mat3 inertia_tensor(const Points& pts) {
  if (pts.cols() < 3) {
    throw std::invalid_argument("inertia_tensor: need at least 3 points");
  }
  const Vec3 c = center_of_mass(pts);
  const Points centered = pts.colwise() - c;
  Mat3 cov = (centered * centered.transpose()) / static_cast<double>(pts.cols());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2)) {
    throw std::runtime_error("inertia_tensor: degenerate geometry (points collinear)");
  }
  return cov;
}

namespace {

// Signs are fixed intrinsically: each eigenvector points toward positive
// skewness of the point projections along it, so the choice co-rotates with
// the data and (kappa.S)'' = S'' holds exactly. Surfaces with vanishing
// skewness fall back to the largest-magnitude-coordinate rule, which is
// deterministic but frame-dependent.
double axis_sign(const Points& centered, const Vec3& axis) {
  const Eigen::VectorXd proj = centered.transpose() * axis;
  const double m3 = proj.array().cube().sum();
  const double scale = proj.array().abs().maxCoeff();
  if (std::abs(m3) > 1e-9 * static_cast<double>(proj.size()) * scale * scale *
                         scale &&
      scale > 0.0) {
    return m3 > 0 ? 1.0 : -1.0;
  }
  int imax = 0;
  axis.cwiseAbs().maxCoeff(&imax);
  return axis(imax) >= 0 ? 1.0 : -1.0;
}

}  // namespace

StandardizedSurface standardize(const RingSurface& s) {
  const Vec3 c = center_of_mass(s.points);
  const Points centered = s.points.colwise() - c;
  const Mat3 cov = inertia_tensor(s.points);

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();
  Mat3 axes = eig.eigenvectors();  // columns, ascending eigenvalues

  StandardizedSurface out;
  const double gap01 = (ev(1) - ev(0)) / ev(2);
  const double gap12 = (ev(2) - ev(1)) / ev(2);
  out.spectrum_warning = gap01 < 1e-6 || gap12 < 1e-6;

  for (int j = 0; j < 3; ++j) {
    axes.col(j) *= axis_sign(centered, axes.col(j));
  }
  if (axes.determinant() < 0) axes.col(2) *= -1.0;

  const Mat3 rot = axes.transpose();  // maps eigenvector j to e_j
  Points rotated = rot * centered;

  const double area = surface_area(rotated, s.triangles);
  if (area <= 0) throw std::runtime_error("standardize: zero surface area");
  const double scale = 1.0 / std::sqrt(area);

  out.surface = s;
  out.surface.points = scale * rotated;
  out.rotation = rot;
  out.translation = c;
  out.scale = scale;
  return out;
}

Points apply_standardization(const StandardizedSurface& st, const Points& pts) {
  return st.scale * (st.rotation * (pts.colwise() - st.translation));
}

}  // namespace dshape
