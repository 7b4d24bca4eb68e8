#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dshape/gaussian_field.hpp"
#include "dshape/registration.hpp"
#include "dshape/surface.hpp"

namespace dshape {

// Random diffeomorphic perturbation: pathwise Euler integration of
//   dF_t/dt = V_t(F_t),  V_t(x) = t L x + sqrt(t) W(x)
// on a surface rescaled into the radius-4 working ball, followed by a
// homothety back to unit area.
struct PerturbationParams {
  Mat3 affine = Mat3::Zero();        // L
  Vec3 field_scales = Vec3::Ones();  // s_1..s_3 of W
  int truncation = 25;
  double time_step = 0.02;  // delta
  int step_count = 5;       // J; delta*J <= 1
  double max_drift = 0.05;  // trimmed Hausdorff drift bound (unit-area scale)
  double min_triangle_quality = 0.05;
  double trim_fraction = 0.05;
  // margin inside the radius-4 ball left for integration drift
  double working_radius = 3.5;

  void validate() const;
};

struct PerturbOutcome {
  std::optional<RingSurface> surface;  // empty on rejection
  bool accepted = false;
  std::string criterion;  // violated criterion on rejection
  double drift = 0.0;
  double triangle_quality = 0.0;
};

// One perturbation with the given field realization seed. Rejection is a
// normal outcome.
PerturbOutcome perturb_surface(const RingSurface& s,
                               const PerturbationParams& params,
                               const EigenBasis& basis, std::uint64_t seed);

// Diffeomorphic interpolation between two close same-class surfaces:
// standardizes both, registers S'' -> Sigma'', and evaluates the flow at the
// discrete node nearest t_star. The result inherits S's ring ordering.
RingSurface interpolate_pair(const RingSurface& s, const RingSurface& sigma,
                             double t_star, const SolverOptions& solver,
                             const std::string& new_id);

struct EnrichmentReportRow {
  std::string id;
  std::string provenance;
  std::string parent_ids;  // `;`-separated
  bool accepted = false;
  std::string criterion;
  int attempts = 0;
};

struct RebalanceOptions {
  SolverOptions solver;
  PerturbationParams perturbation;
  double t_star = 0.75;
  // candidate pairs must fall below this quantile of same-class haus+ values
  double closeness_quantile = 0.25;
  bool perturb_all = false;  // one perturbation per surface after parity
  int max_perturb_attempts = 5;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct RebalanceResult {
  SurfaceDataset dataset;
  std::vector<EnrichmentReportRow> report;
};

// First interpolates over the closest same-class pairs (ranked by haus+)
// until the per-class targets are met or candidates run out, then optionally
// adds one perturbed copy of every surface. Original entries are never
// mutated.
RebalanceResult rebalance(const SurfaceDataset& dataset,
                          const std::map<std::string, int>& target_sizes,
                          const RebalanceOptions& opts);

void write_enrichment_report(const std::vector<EnrichmentReportRow>& report,
                             const std::filesystem::path& path);

}  // namespace dshape
