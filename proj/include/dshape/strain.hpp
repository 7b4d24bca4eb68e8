#pragma once

#include <filesystem>

#include "dshape/surface.hpp"

namespace dshape {

// Per-point isotropic strain intensities of a terminal registration map, in
// the surface's ring order.
struct StrainField {
  Eigen::VectorXd isi;  // |isoSTR - 1| per grid point
};

// For each grid point x, U_x is the union of incident triangles; the area
// ratio rat = area(f(U_x)) / area(U_x) of the transported fan gives
// isoSTR_x = sqrt(rat) and isi_x = |isoSTR_x - 1|. The deformed surface must
// carry the same index correspondence (triangulation transported from the
// source).
StrainField isotropic_strain(const RingSurface& source,
                             const RingSurface& deformed);

// Empirical alpha-quantile (nearest-rank: the ceil(alpha*k)-th order
// statistic) of the last tail_k entries of the field (lastISI(k)).
double strain_quantile(const StrainField& field, double alpha, int tail_k);

// One value per line, ring order.
void write_isi(const StrainField& field, const std::filesystem::path& path);

}  // namespace dshape
