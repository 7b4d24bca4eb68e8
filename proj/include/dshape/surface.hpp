#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace dshape {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix3Xd;     // one column per grid point
using Triangles = Eigen::Matrix3Xi;  // one column per triangle

// Discretized surface: points stored ring by ring, the last ring nearest the
// distinguished boundary curve.
struct RingSurface {
  Points points;
  int ring_size = 0;   // points per ring (R)
  int ring_count = 0;  // number of rings (K), point count = R*K
  Triangles triangles;
  std::string id;

  int point_count() const { return static_cast<int>(points.cols()); }
  int triangle_count() const { return static_cast<int>(triangles.cols()); }
};

enum class Provenance { original, interpolated, perturbed };

std::string to_string(Provenance p);

struct DatasetEntry {
  RingSurface surface;
  std::string label;
  Provenance provenance = Provenance::original;
};

struct SurfaceDataset {
  std::vector<DatasetEntry> entries;

  const DatasetEntry* find(const std::string& id) const;
  // Rejects duplicate ids.
  void add(DatasetEntry entry);
  // Distinct class labels, sorted.
  std::vector<std::string> class_labels() const;
  std::vector<std::string> ids_with_label(const std::string& label) const;
};

// Deterministic ring-strip triangulation: for consecutive rings k,k+1 and each
// i, the quad (k,i),(k,i+1),(k+1,i),(k+1,i+1) (indices mod R within a ring) is
// split along the (k,i)-(k+1,i+1) diagonal. Yields 2*R*(K-1) triangles.
Triangles triangulate_rings(int ring_size, int ring_count);

// Checks the structural invariants; throws std::runtime_error on violation
// (count mismatch, out-of-range index, degenerate triangle).
void validate_surface(const RingSurface& s);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double surface_area(const Points& pts, const Triangles& tris);
double surface_area(const RingSurface& s);

// One-sided max-min distance max_{x in a} min_{y in b} |x - y|.
double hausdorff(const Points& a, const Points& b);
double symmetric_hausdorff(const Points& a, const Points& b);

// Quantile variant: drops the top trim_fraction of the min-distances before
// taking the max (nearest-rank at level 1 - trim_fraction). trim_fraction = 0
// reduces to hausdorff.
double trimmed_hausdorff(const Points& a, const Points& b,
                         double trim_fraction);

double median_edge_length(const RingSurface& s);
// min over triangles of shortest/longest edge length
double min_triangle_quality(const RingSurface& s);
double bbox_diagonal(const Points& pts);

// RGS ASCII format.
//   line 1:            n_points ring_size ring_count n_triangles
//   next n_points:     x y z
//   next n_triangles:  i j k      (zero-based; omitted when n_triangles = 0,
//                                  in which case the ring-strip rule applies)
RingSurface load_surface(const std::filesystem::path& path);
void save_surface(const RingSurface& s, const std::filesystem::path& path,
                  bool write_triangles = false);

// Manifest: one `path,label` line per entry; ids are the file stems.
SurfaceDataset load_dataset(const std::filesystem::path& manifest_path);
// Writes <id>.rgs files into dir plus the manifest.
void save_dataset(const SurfaceDataset& dataset,
                  const std::filesystem::path& dir,
                  const std::filesystem::path& manifest_path);

}  // namespace dshape
