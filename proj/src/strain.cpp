#include "dshape/strain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dshape {

StrainField isotropic_strain(const RingSurface& source,
                             const RingSurface& deformed) {
  const int n = source.point_count();
  if (deformed.point_count() != n) {
    throw std::invalid_argument("isotropic_strain: grids do not correspond");
  }

  // fan areas on both grids under the source triangulation
  Eigen::VectorXd src_fan = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd def_fan = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < source.triangle_count(); ++t) {
    const int i = source.triangles(0, t);
    const int j = source.triangles(1, t);
    const int k = source.triangles(2, t);
    const double sa = triangle_area(source.points.col(i), source.points.col(j),
                                    source.points.col(k));
    const double da = triangle_area(deformed.points.col(i),
                                    deformed.points.col(j),
                                    deformed.points.col(k));
    for (int v : {i, j, k}) {
      src_fan(v) += sa;
      def_fan(v) += da;
    }
  }

  StrainField field;
  field.isi.resize(n);
  const double floor = 1e-14 * src_fan.maxCoeff();
  for (int v = 0; v < n; ++v) {
    if (src_fan(v) <= floor) {
      throw std::runtime_error("isotropic_strain: degenerate fan at vertex " +
                               std::to_string(v));
    }
    const double rat = def_fan(v) / src_fan(v);
    field.isi(v) = std::abs(std::sqrt(rat) - 1.0);
  }
  return field;
}

double strain_quantile(const StrainField& field, double alpha, int tail_k) {
  const int n = static_cast<int>(field.isi.size());
  if (tail_k <= 0) throw std::invalid_argument("strain_quantile: tail_k <= 0");
  if (tail_k > n) throw std::invalid_argument("strain_quantile: tail_k beyond field length");
  if (alpha <= 0.0 || alpha >= 1.0) {
    throw std::invalid_argument("strain_quantile: alpha outside (0,1)");
  }
  std::vector<double> tail(field.isi.data() + (n - tail_k),
                           field.isi.data() + n);
  const int rank = std::max<int>(1, static_cast<int>(std::ceil(alpha * tail_k)));
  std::nth_element(tail.begin(), tail.begin() + (rank - 1), tail.end());
  return tail[rank - 1];
}

void write_isi(const StrainField& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[40];
  for (Eigen::Index i = 0; i < field.isi.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", field.isi(i));
    out << buf;
  }
}

}  // namespace dshape
