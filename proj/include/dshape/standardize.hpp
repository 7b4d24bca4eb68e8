#pragma once

#include "dshape/surface.hpp"

namespace dshape {

// Result of the G3 standardization S -> S'': centered at the mass center,
// rotated into the inertia eigenframe (ascending eigenvalues mapped to
// e1,e2,e3), rescaled to unit area.
//
// standardized point = scale * rotation * (original point - translation)
struct StandardizedSurface {
  RingSurface surface;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  // set when an inertia eigenvalue pair is closer than the relative gap 1e-6;
  // the deterministic tie-break still applies
  bool spectrum_warning = false;
};

// Uniform average of Dirac masses on the grid points.
Vec3 center_of_mass(const Points& pts);

// Covariance tensor  (1/n) sum (x - c)(x - c)^T  over grid points.
// Throws when the point cloud is collinear (rank < 2).
Mat3 inertia_tensor(const Points& pts);

StandardizedSurface standardize(const RingSurface& s);

// Applies the recorded transform to arbitrary points.
Points apply_standardization(const StandardizedSurface& st, const Points& pts);

}  // namespace dshape
