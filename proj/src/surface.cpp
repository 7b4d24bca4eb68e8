#include "dshape/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dshape {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::interpolated: return "interpolated";
    case Provenance::perturbed: return "perturbed";
  }
  return "original";
}

const DatasetEntry* SurfaceDataset::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.surface.id == id) return &e;
  }
  return nullptr;
}

void SurfaceDataset::add(DatasetEntry entry) {
  if (find(entry.surface.id) != nullptr) {
    throw std::runtime_error("duplicate surface id: " + entry.surface.id);
  }
  entries.push_back(std::move(entry));
}

std::vector<std::string> SurfaceDataset::class_labels() const {
  std::set<std::string> labels;
  for (const auto& e : entries) labels.insert(e.label);
  return {labels.begin(), labels.end()};
}

std::vector<std::string> SurfaceDataset::ids_with_label(
    const std::string& label) const {
  std::vector<std::string> ids;
  for (const auto& e : entries) {
    if (e.label == label) ids.push_back(e.surface.id);
  }
  return ids;
}

Triangles triangulate_rings(int ring_size, int ring_count) {
  if (ring_size < 3) throw std::runtime_error("triangulate_rings: ring_size < 3");
  if (ring_count < 2) {
    throw std::runtime_error("triangulate_rings: need at least two rings");
  }
  const int strips = ring_count - 1;
  Triangles tris(3, 2 * ring_size * strips);
  int t = 0;
  for (int k = 0; k < strips; ++k) {
    for (int i = 0; i < ring_size; ++i) {
      const int i1 = (i + 1) % ring_size;
      const int a = k * ring_size + i;
      const int b = k * ring_size + i1;
      const int c = (k + 1) * ring_size + i;
      const int d = (k + 1) * ring_size + i1;
      // split the quad along the a-d diagonal
      tris.col(t++) = Eigen::Vector3i(a, b, d);
      tris.col(t++) = Eigen::Vector3i(a, d, c);
    }
  }
  return tris;
}

void validate_surface(const RingSurface& s) {
  const int n = s.point_count();
  if (s.ring_size <= 0 || s.ring_count <= 0) {
    throw std::runtime_error("surface " + s.id + ": ring structure not declared");
  }
  if (n != s.ring_size * s.ring_count) {
    std::ostringstream msg;
    msg << "surface " << s.id << ": point count " << n
        << " != ring_size*ring_count = " << s.ring_size * s.ring_count;
    throw std::runtime_error(msg.str());
  }
  const double diag2 = bbox_diagonal(s.points) * bbox_diagonal(s.points);
  for (int t = 0; t < s.triangle_count(); ++t) {
    for (int v = 0; v < 3; ++v) {
      const int idx = s.triangles(v, t);
      if (idx < 0 || idx >= n) {
        std::ostringstream msg;
        msg << "surface " << s.id << ": triangle " << t << " index " << idx
            << " out of range [0," << n << ")";
        throw std::runtime_error(msg.str());
      }
    }
    const double area = triangle_area(s.points.col(s.triangles(0, t)),
                                      s.points.col(s.triangles(1, t)),
                                      s.points.col(s.triangles(2, t)));
    if (area < 1e-12 * diag2) {
      std::ostringstream msg;
      msg << "surface " << s.id << ": degenerate triangle " << t
          << " (area " << area << ")";
      throw std::runtime_error(msg.str());
    }
  }
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double surface_area(const Points& pts, const Triangles& tris) {
  double area = 0.0;
  for (int t = 0; t < tris.cols(); ++t) {
    area += triangle_area(pts.col(tris(0, t)), pts.col(tris(1, t)),
                          pts.col(tris(2, t)));
  }
  return area;
}

double surface_area(const RingSurface& s) {
  return surface_area(s.points, s.triangles);
}

namespace {

std::vector<double> min_distances(const Points& a, const Points& b) {
  if (a.cols() == 0 || b.cols() == 0) {
    throw std::invalid_argument("hausdorff: empty point set");
  }
  std::vector<double> dists(a.cols());
  for (int i = 0; i < a.cols(); ++i) {
    dists[i] = std::sqrt(
        (b.colwise() - a.col(i)).colwise().squaredNorm().minCoeff());
  }
  return dists;
}

}  // namespace

double hausdorff(const Points& a, const Points& b) {
  const auto dists = min_distances(a, b);
  return *std::max_element(dists.begin(), dists.end());
}

double symmetric_hausdorff(const Points& a, const Points& b) {
  return std::max(hausdorff(a, b), hausdorff(b, a));
}

double trimmed_hausdorff(const Points& a, const Points& b,
                         double trim_fraction) {
  if (trim_fraction < 0.0 || trim_fraction >= 1.0) {
    throw std::invalid_argument("trimmed_hausdorff: trim fraction outside [0,1)");
  }
  auto dists = min_distances(a, b);
  const auto n = static_cast<std::ptrdiff_t>(dists.size());
  auto rank = static_cast<std::ptrdiff_t>(
      std::ceil((1.0 - trim_fraction) * static_cast<double>(n)));
  rank = std::clamp<std::ptrdiff_t>(rank, 1, n);
  std::nth_element(dists.begin(), dists.begin() + (rank - 1), dists.end());
  return dists[rank - 1];
}

namespace {

std::vector<double> edge_lengths(const RingSurface& s) {
  std::set<std::pair<int, int>> edges;
  for (int t = 0; t < s.triangle_count(); ++t) {
    for (int v = 0; v < 3; ++v) {
      int i = s.triangles(v, t);
      int j = s.triangles((v + 1) % 3, t);
      edges.emplace(std::min(i, j), std::max(i, j));
    }
  }
  std::vector<double> lengths;
  lengths.reserve(edges.size());
  for (const auto& [i, j] : edges) {
    lengths.push_back((s.points.col(i) - s.points.col(j)).norm());
  }
  return lengths;
}

}  // namespace

double median_edge_length(const RingSurface& s) {
  auto lengths = edge_lengths(s);
  if (lengths.empty()) throw std::runtime_error("median_edge_length: no edges");
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  if (n % 2 == 1) return lengths[n / 2];
  return 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
}

double min_triangle_quality(const RingSurface& s) {
  double quality = 1.0;
  for (int t = 0; t < s.triangle_count(); ++t) {
    const Vec3 a = s.points.col(s.triangles(0, t));
    const Vec3 b = s.points.col(s.triangles(1, t));
    const Vec3 c = s.points.col(s.triangles(2, t));
    const double e0 = (b - a).norm(), e1 = (c - b).norm(), e2 = (a - c).norm();
    const double lo = std::min({e0, e1, e2});
    const double hi = std::max({e0, e1, e2});
    if (hi > 0) quality = std::min(quality, lo / hi);
  }
  return quality;
}

double bbox_diagonal(const Points& pts) {
  if (pts.cols() == 0) return 0.0;
  const Vec3 lo = pts.rowwise().minCoeff();
  const Vec3 hi = pts.rowwise().maxCoeff();
  return (hi - lo).norm();
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line,
                             const std::string& what) {
  std::ostringstream msg;
  msg << path.string() << ":" << line << ": " << what;
  throw std::runtime_error(msg.str());
}

}  // namespace

RingSurface load_surface(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());

  int line_no = 0;
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line()) parse_fail(path, 1, "empty file");
  long n_points = 0, ring_size = 0, ring_count = 0, n_triangles = 0;
  {
    std::istringstream hdr(line);
    if (!(hdr >> n_points >> ring_size >> ring_count >> n_triangles)) {
      parse_fail(path, line_no,
                 "malformed header, expected: n_points ring_size ring_count n_triangles");
    }
    if (n_points <= 0 || ring_size <= 0 || ring_count <= 0 || n_triangles < 0) {
      parse_fail(path, line_no, "header fields must be positive");
    }
    if (n_points != ring_size * ring_count) {
      std::ostringstream msg;
      msg << "header declares " << n_points << " points but ring_size*ring_count = "
          << ring_size * ring_count;
      parse_fail(path, line_no, msg.str());
    }
  }

  RingSurface s;
  s.id = path.stem().string();
  s.ring_size = static_cast<int>(ring_size);
  s.ring_count = static_cast<int>(ring_count);
  s.points.resize(3, n_points);
  for (long i = 0; i < n_points; ++i) {
    if (!next_line()) {
      std::ostringstream msg;
      msg << "point count mismatch: header declares " << n_points
          << " points but file ends after " << i;
      parse_fail(path, line_no, msg.str());
    }
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) parse_fail(path, line_no, "malformed point line");
    s.points.col(i) = Vec3(x, y, z);
  }

  if (n_triangles > 0) {
    s.triangles.resize(3, n_triangles);
    for (long t = 0; t < n_triangles; ++t) {
      if (!next_line()) {
        std::ostringstream msg;
        msg << "triangle count mismatch: header declares " << n_triangles
            << " triangles but file ends after " << t;
        parse_fail(path, line_no, msg.str());
      }
      std::istringstream ls(line);
      long i, j, k;
      if (!(ls >> i >> j >> k)) parse_fail(path, line_no, "malformed triangle line");
      if (i < 0 || i >= n_points || j < 0 || j >= n_points || k < 0 ||
          k >= n_points) {
        parse_fail(path, line_no, "triangle index out of range");
      }
      s.triangles.col(t) = Eigen::Vector3i(static_cast<int>(i),
                                           static_cast<int>(j),
                                           static_cast<int>(k));
    }
  } else {
    if (ring_count < 2) {
      parse_fail(path, line_no, "cannot generate triangulation for a single ring");
    }
    s.triangles = triangulate_rings(s.ring_size, s.ring_count);
  }
  if (next_line()) parse_fail(path, line_no, "trailing content");
  validate_surface(s);
  return s;
}

namespace {

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

void save_surface(const RingSurface& s, const std::filesystem::path& path,
                  bool write_triangles) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << s.point_count() << ' ' << s.ring_size << ' ' << s.ring_count << ' '
      << (write_triangles ? s.triangle_count() : 0) << '\n';
  for (int i = 0; i < s.point_count(); ++i) {
    write_double(out, s.points(0, i));
    out << ' ';
    write_double(out, s.points(1, i));
    out << ' ';
    write_double(out, s.points(2, i));
    out << '\n';
  }
  if (write_triangles) {
    for (int t = 0; t < s.triangle_count(); ++t) {
      out << s.triangles(0, t) << ' ' << s.triangles(1, t) << ' '
          << s.triangles(2, t) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SurfaceDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());
  SurfaceDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      parse_fail(manifest_path, line_no, "expected `path,label`");
    }
    std::filesystem::path p = line.substr(0, comma);
    if (p.is_relative()) p = manifest_path.parent_path() / p;
    DatasetEntry entry;
    entry.surface = load_surface(p);
    entry.label = line.substr(comma + 1);
    ds.add(std::move(entry));
  }
  return ds;
}

void save_dataset(const SurfaceDataset& dataset,
                  const std::filesystem::path& dir,
                  const std::filesystem::path& manifest_path) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(manifest_path);
  if (!manifest) {
    throw std::runtime_error("cannot write " + manifest_path.string());
  }
  for (const auto& e : dataset.entries) {
    const auto file = dir / (e.surface.id + ".rgs");
    save_surface(e.surface, file);
    std::filesystem::path rel =
        std::filesystem::relative(file, manifest_path.parent_path());
    manifest << rel.string() << ',' << e.label << '\n';
  }
}

}  // namespace dshape
