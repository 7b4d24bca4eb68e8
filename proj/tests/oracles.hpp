#pragma once

// Brute-force reference implementations and shared fixtures. Everything here
// is deliberately independent of the library's computation paths: plain
// loops, no shared helpers beyond basic types.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "dshape/rng.hpp"
#include "dshape/surface.hpp"

namespace oracle {

using dshape::Points;
using dshape::RingSurface;
using dshape::Vec3;

// one-sided max-min distance by double loop
inline double hausdorff(const Points& a, const Points& b) {
  double worst = 0.0;
  for (int i = 0; i < a.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b.cols(); ++j) {
      best = std::min(best, (a.col(i) - b.col(j)).norm());
    }
    worst = std::max(worst, best);
  }
  return worst;
}

// nearest-rank quantile of the min-distance sample
inline double trimmed_hausdorff(const Points& a, const Points& b, double trim) {
  std::vector<double> mins;
  for (int i = 0; i < a.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b.cols(); ++j) {
      best = std::min(best, (a.col(i) - b.col(j)).norm());
    }
    mins.push_back(best);
  }
  std::sort(mins.begin(), mins.end());
  const auto n = static_cast<std::ptrdiff_t>(mins.size());
  auto rank = static_cast<std::ptrdiff_t>(std::ceil((1.0 - trim) * n));
  rank = std::max<std::ptrdiff_t>(1, std::min(rank, n));
  return mins[rank - 1];
}

// triple-loop measure-matching dissimilarity
inline double hilb(const Points& a, const Points& b, double tau) {
  const auto k = [tau](const Vec3& x, const Vec3& y) {
    return std::exp(-(x - y).squaredNorm() / (tau * tau));
  };
  const double n = a.cols(), m = b.cols();
  double saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < a.cols(); ++i) {
    for (int j = 0; j < a.cols(); ++j) saa += k(a.col(i), a.col(j));
  }
  for (int i = 0; i < b.cols(); ++i) {
    for (int j = 0; j < b.cols(); ++j) sbb += k(b.col(i), b.col(j));
  }
  for (int i = 0; i < a.cols(); ++i) {
    for (int j = 0; j < b.cols(); ++j) sab += k(a.col(i), b.col(j));
  }
  return saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m);
}

// independent ring-strip triangle builder: enumerates quads and splits them
inline std::vector<std::array<int, 3>> ring_triangles(int R, int K) {
  std::vector<std::array<int, 3>> tris;
  for (int k = 0; k + 1 < K; ++k) {
    for (int i = 0; i < R; ++i) {
      const int a = k * R + i;
      const int b = k * R + (i + 1) % R;
      const int c = (k + 1) * R + i;
      const int d = (k + 1) * R + (i + 1) % R;
      tris.push_back({a, b, d});
      tris.push_back({a, d, c});
    }
  }
  return tris;
}

// edge -> number of incident triangles
inline std::map<std::pair<int, int>, int> edge_incidence(
    const dshape::Triangles& tris) {
  std::map<std::pair<int, int>, int> counts;
  for (int t = 0; t < tris.cols(); ++t) {
    for (int v = 0; v < 3; ++v) {
      const int i = tris(v, t);
      const int j = tris((v + 1) % 3, t);
      counts[{std::min(i, j), std::max(i, j)}] += 1;
    }
  }
  return counts;
}

// nearest-rank quantile by full sort
inline double quantile(std::vector<double> values, double alpha) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  auto rank = static_cast<std::ptrdiff_t>(std::ceil(alpha * n));
  rank = std::max<std::ptrdiff_t>(1, std::min(rank, n));
  return values[rank - 1];
}

inline Points random_points(dshape::Rng& rng, int n, double scale = 1.0) {
  Points pts(3, n);
  for (int i = 0; i < n; ++i) {
    pts.col(i) = scale * Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  return pts;
}

inline dshape::Mat3 random_rotation(dshape::Rng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
}

struct G3Transform {
  dshape::Mat3 rotation;
  Vec3 translation;
  double scale;

  Points apply(const Points& pts) const {
    return (scale * (rotation * pts)).colwise() + translation;
  }
};

inline G3Transform random_g3(dshape::Rng& rng) {
  G3Transform g;
  g.rotation = random_rotation(rng);
  g.translation =
      Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
  g.scale = std::exp(rng.uniform(std::log(0.4), std::log(2.5)));
  return g;
}

inline RingSurface transformed(const RingSurface& s, const G3Transform& g) {
  RingSurface out = s;
  out.points = g.apply(s.points);
  return out;
}

// latitude-ring sphere (poles excluded so every ring has R points)
inline RingSurface make_sphere(int R, int K, double radius, const Vec3& center,
                               const std::string& id = "sphere") {
  RingSurface s;
  s.ring_size = R;
  s.ring_count = K;
  s.points.resize(3, R * K);
  constexpr double kPi = 3.14159265358979323846;
  for (int k = 0; k < K; ++k) {
    const double th = kPi * (k + 0.5) / K;
    for (int i = 0; i < R; ++i) {
      const double ph = 2.0 * kPi * i / R;
      s.points.col(k * R + i) =
          center + radius * Vec3(std::sin(th) * std::cos(ph),
                                 std::sin(th) * std::sin(ph), std::cos(th));
    }
  }
  s.triangles = dshape::triangulate_rings(R, K);
  s.id = id;
  return s;
}

// flat rectangular grid stored as rings (open strip in x, rings along y)
inline RingSurface make_grid_patch(int R, int K, double width, double height) {
  RingSurface s;
  s.ring_size = R;
  s.ring_count = K;
  s.points.resize(3, R * K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < R; ++i) {
      s.points.col(k * R + i) =
          Vec3(width * i / (R - 1), height * k / (K - 1), 0.0);
    }
  }
  s.triangles = dshape::triangulate_rings(R, K);
  s.id = "patch";
  return s;
}

}  // namespace oracle
