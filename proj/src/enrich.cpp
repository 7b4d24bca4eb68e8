#include "dshape/enrich.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dshape/dissim.hpp"
#include "dshape/rng.hpp"
#include "dshape/standardize.hpp"
#include "dshape/workers.hpp"

namespace dshape {

void PerturbationParams::validate() const {
  if (time_step <= 0 || step_count < 0) {
    throw std::invalid_argument("PerturbationParams: bad time discretization");
  }
  if (time_step * step_count > 1.0 + 1e-12) {
    throw std::invalid_argument("PerturbationParams: delta*J must stay <= 1");
  }
  if (max_drift <= 0 || min_triangle_quality <= 0) {
    throw std::invalid_argument("PerturbationParams: acceptance thresholds must be positive");
  }
  if ((field_scales.array() <= 0).any()) {
    throw std::invalid_argument("PerturbationParams: field scales must be positive");
  }
  if (working_radius <= 0 || working_radius > 4.0) {
    throw std::invalid_argument("PerturbationParams: working radius outside (0,4]");
  }
}

namespace {

// homothety about the centroid making the total area 1
RingSurface unit_area_rescale(const RingSurface& s) {
  RingSurface out = s;
  const Vec3 c = out.points.rowwise().mean();
  const double area = surface_area(out);
  if (area <= 0) throw std::runtime_error("unit_area_rescale: zero area");
  const double f = 1.0 / std::sqrt(area);
  out.points = (f * (out.points.colwise() - c)).eval();
  return out;
}

}  // namespace

PerturbOutcome perturb_surface(const RingSurface& s,
                               const PerturbationParams& params,
                               const EigenBasis& basis, std::uint64_t seed) {
  params.validate();
  PerturbOutcome outcome;

  // rescale into the working ball about the center of mass
  RingSurface work = s;
  const Vec3 c = work.points.rowwise().mean();
  work.points.colwise() -= c;
  const double rmax = work.points.colwise().norm().maxCoeff();
  if (rmax <= 0) throw std::runtime_error("perturb_surface: degenerate surface");
  work.points *= params.working_radius / rmax;

  const FieldSpec field(basis, params.truncation, params.field_scales, seed);

  // pathwise Euler steps of dF/dt = V_t(F_t) at t_j = j*delta
  try {
    for (int j = 1; j <= params.step_count; ++j) {
      const double t = j * params.time_step;
      const double sq = std::sqrt(t);
      for (int i = 0; i < work.point_count(); ++i) {
        const Vec3 x = work.points.col(i);
        const Vec3 v = t * (params.affine * x) + sq * field.sample_vector(x);
        work.points.col(i) = x + params.time_step * v;
      }
      if (!work.points.allFinite()) {
        throw std::runtime_error("perturb_surface: integration diverged");
      }
    }
  } catch (const std::domain_error&) {
    outcome.accepted = false;
    outcome.criterion = "left_working_domain";
    return outcome;
  }

  const RingSurface reference = unit_area_rescale(s);
  RingSurface result = unit_area_rescale(work);
  result.id = s.id + "_pert";

  outcome.drift = std::max(
      trimmed_hausdorff(result.points, reference.points, params.trim_fraction),
      trimmed_hausdorff(reference.points, result.points, params.trim_fraction));
  outcome.triangle_quality = min_triangle_quality(result);

  if (outcome.drift > params.max_drift) {
    outcome.criterion = "drift";
    return outcome;
  }
  if (outcome.triangle_quality < params.min_triangle_quality) {
    outcome.criterion = "triangle_quality";
    return outcome;
  }
  outcome.accepted = true;
  outcome.surface = std::move(result);
  return outcome;
}

RingSurface interpolate_pair(const RingSurface& s, const RingSurface& sigma,
                             double t_star, const SolverOptions& solver,
                             const std::string& new_id) {
  if (t_star < 0.0 || t_star > 1.0) {
    throw std::invalid_argument("interpolate_pair: t_star outside [0,1]");
  }
  const RingSurface s_std = standardize(s).surface;
  const RingSurface t_std = standardize(sigma).surface;
  const auto reg = register_surfaces(s_std, t_std, solver);
  if (!reg.converged) {
    throw std::runtime_error("interpolate_pair: registration " + s.id +
                             " -> " + sigma.id + " did not converge");
  }
  const int node =
      static_cast<int>(std::lround(t_star * reg.flow.time_steps));
  RingSurface out = flow_node_surface(reg.flow, s_std, node);
  out.id = new_id;
  return out;
}

RebalanceResult rebalance(const SurfaceDataset& dataset,
                          const std::map<std::string, int>& target_sizes,
                          const RebalanceOptions& opts) {
  opts.perturbation.validate();
  RebalanceResult result;
  for (const auto& e : dataset.entries) result.dataset.add(e);

  // interpolation stage: per class, closest pairs by haus+ first
  for (const auto& [label, target] : target_sizes) {
    const auto ids = dataset.ids_with_label(label);
    const int deficit = target - static_cast<int>(ids.size());
    if (deficit <= 0) continue;
    if (ids.size() < 2) continue;

    struct Candidate {
      double haus;
      int i, j;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = i + 1; j < ids.size(); ++j) {
        const double h = haus_plus(dataset.find(ids[i])->surface,
                                   dataset.find(ids[j])->surface);
        candidates.push_back({h, static_cast<int>(i), static_cast<int>(j)});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                return a.haus < b.haus;
              });
    // the paper's "small enough" closeness: a low quantile of same-class
    // haus+ values
    const std::size_t cutoff = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(opts.closeness_quantile * candidates.size())));
    candidates.resize(std::min(candidates.size(), cutoff));

    std::vector<std::optional<RingSurface>> made(candidates.size());
    std::vector<std::string> errors(candidates.size());
    const std::size_t wanted =
        std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(deficit));
    // run modestly past the deficit in case some registrations fail
    const std::size_t attempt_count =
        std::min(candidates.size(), wanted + (wanted + 1) / 2);
    parallel_for(attempt_count, resolve_workers(opts.workers), [&](std::size_t c) {
      const auto& cand = candidates[c];
      std::ostringstream name;
      name << "interp_" << ids[cand.i] << "_" << ids[cand.j];
      try {
        made[c] = interpolate_pair(dataset.find(ids[cand.i])->surface,
                                   dataset.find(ids[cand.j])->surface,
                                   opts.t_star, opts.solver, name.str());
      } catch (const std::exception& e) {
        errors[c] = e.what();
      }
    });

    int added = 0;
    for (std::size_t c = 0; c < attempt_count && added < deficit; ++c) {
      EnrichmentReportRow row;
      row.provenance = "interpolated";
      row.parent_ids = ids[candidates[c].i] + ";" + ids[candidates[c].j];
      row.attempts = 1;
      if (made[c].has_value()) {
        row.id = made[c]->id;
        row.accepted = true;
        result.dataset.add({*made[c], label, Provenance::interpolated});
        ++added;
      } else {
        row.id = "interp_" + ids[candidates[c].i] + "_" + ids[candidates[c].j];
        row.criterion = "registration:" + errors[c];
      }
      result.report.push_back(std::move(row));
    }
  }

  // perturbation stage: one small random deformation per surface
  if (opts.perturb_all) {
    const EigenBasis basis(std::max(40, opts.perturbation.truncation));
    const std::size_t count = result.dataset.entries.size();
    std::vector<std::optional<RingSurface>> made(count);
    std::vector<EnrichmentReportRow> rows(count);
    parallel_for(count, resolve_workers(opts.workers), [&](std::size_t i) {
      const auto& entry = result.dataset.entries[i];
      EnrichmentReportRow row;
      row.provenance = "perturbed";
      row.parent_ids = entry.surface.id;
      row.id = entry.surface.id + "_pert";
      const std::uint64_t base =
          mix_seed(mix_seed(opts.seed, "perturb"), entry.surface.id);
      for (int attempt = 0; attempt < opts.max_perturb_attempts; ++attempt) {
        ++row.attempts;
        auto outcome = perturb_surface(
            entry.surface, opts.perturbation, basis,
            mix_seed(base, static_cast<std::uint64_t>(attempt)));
        if (outcome.accepted) {
          row.accepted = true;
          made[i] = std::move(*outcome.surface);
          break;
        }
        row.criterion = outcome.criterion;
      }
      rows[i] = std::move(row);
    });
    for (std::size_t i = 0; i < count; ++i) {
      if (made[i].has_value()) {
        const std::string label = result.dataset.entries[i].label;
        result.dataset.add({*made[i], label, Provenance::perturbed});
      }
      result.report.push_back(std::move(rows[i]));
    }
  }
  return result;
}

void write_enrichment_report(const std::vector<EnrichmentReportRow>& report,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,provenance,parent_ids,accepted,criterion,attempts\n";
  for (const auto& row : report) {
    out << row.id << ',' << row.provenance << ',' << row.parent_ids << ','
        << (row.accepted ? 1 : 0) << ',' << row.criterion << ','
        << row.attempts << '\n';
  }
}

}  // namespace dshape
