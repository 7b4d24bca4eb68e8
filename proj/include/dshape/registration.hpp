#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dshape/kernels.hpp"
#include "dshape/surface.hpp"

namespace dshape {

struct SolverOptions {
  KernelParams kernel;            // sigma/tau = 0 means derived from extents
  double sigma_bbox_factor = 0.3;  // derived sigma = factor * source bbox diag
  double tau_bbox_factor = 0.2;    // derived tau = factor * joint bbox diag
  int time_steps = 4;             // q equispaced intervals on [0,1]
  int max_admm_iters = 200;
  double cg_rel_tol = 1e-8;
  int cg_max_iters = 500;
  int newton_max_iters = 20;
  double newton_krylov_tol = 1e-6;
  int newton_cg_cap = 12;    // inner Krylov iterations per Newton step
  int line_search_cap = 12;  // Armijo halvings per Newton step
  double trim_fraction = 0.05;    // censoring level of the terminal check
  double term_mesh_factor = 0.5;  // threshold = factor * median edge (target)
  double penalty = 0.0;           // ADMM chi; 0 = 10*lambda*mean |grad HILB|
  int control_stride = 1;         // optimize on every k-th grid point

  // Relaxation continuation: when the augmented objective stalls while the
  // terminal mismatch is still above threshold, lambda is multiplied by
  // lambda_growth (up to max_lambda_stages times), tightening the relaxed
  // problem toward the constrained one. Growth 1 disables continuation.
  double lambda_growth = 4.0;
  int max_lambda_stages = 9;
  double objective_stall_tol = 1e-3;
  int objective_stall_count = 2;
  int stage_iter_cap = 15;  // hard bound on iterations per lambda stage

  void validate() const;
};

// Time-discretized registration: control-point trajectories x_i(t_j) and
// coefficients a_i(t_j) of the spline velocity field
//   v_t(z) = sum_i K_sigma(x_i(t), z) a_i(t).
// Both run over nodes j = 0..q; the terminal coefficient block is zero (the
// velocity at t_q never acts on the flow).
struct DeformationFlow {
  std::vector<Points> control_points;
  std::vector<Points> coefficients;
  int time_steps = 0;  // q
  double sigma = 0.0;
  double kinetic_energy = 0.0;
  double terminal_mismatch = 0.0;
  std::vector<int> control_indices;  // grid indices of the control subset

  int node_count() const { return time_steps + 1; }
};

Vec3 evaluate_velocity(const DeformationFlow& flow, int t_index, const Vec3& z);

// First-order explicit Euler rollout x(t_{j+1}) = x(t_j) + dt v_{t_j}(x(t_j)).
// coefficients holds the q per-interval blocks a(t_0)..a(t_{q-1}); a trailing
// q+1-th block is tolerated and ignored. Returns the q+1 position nodes.
std::vector<Points> flow_forward(const Points& source,
                                 const std::vector<Points>& coefficients,
                                 double sigma);

// Advects passive tracer points through the flow (used to deform a full grid
// when the flow was optimized on a subsample). Returns q+1 nodes.
std::vector<Points> advect_tracers(const DeformationFlow& flow,
                                   const Points& tracers);

struct RegistrationResult {
  DeformationFlow flow;
  RingSurface deformed;  // F_1 applied to the full source grid
  bool converged = false;
  int iterations = 0;
  double threshold = 0.0;  // termination threshold actually used
  std::optional<double> symmetrized_kin;
  std::vector<double> objective_history;  // kin + lambda*HILB per iteration
};

// Minimizes kin(a) + lambda * HILB(x^q, target) over Euler-constrained
// trajectories by consensus ADMM: (i) the quadratic kinetic+indicator
// subproblem via matrix-free preconditioned CG on its optimality system,
// (ii) the proximal HILB subproblem in the terminal state via a matrix-free
// Newton-Krylov method (other consensus blocks in closed form), (iii) dual
// update. Terminates when the censored Hausdorff distance between the
// deformed grid and the target falls below the mesh-size threshold.
RegistrationResult register_surfaces(const RingSurface& source,
                                     const RingSurface& target,
                                     const SolverOptions& opts);

// (KIN(S,Sigma) + KIN(Sigma,S)) / 2; throws with a direction tag if either
// direction fails to converge.
double symmetrized_kin(const RingSurface& s, const RingSurface& sigma,
                       const SolverOptions& opts);

// kin(a) + lambda * HILB(x^q(a), target) for the fully coupled discrete
// problem, with the analytic gradient w.r.t. the coefficient blocks computed
// by the discrete adjoint of the Euler flow. gradient may be null.
double registration_objective(const Points& source,
                              const std::vector<Points>& coefficients,
                              const Points& target, double sigma, double tau,
                              double lambda, std::vector<Points>* gradient);

// Surface carried to a given flow node (full grid advected as tracers).
RingSurface flow_node_surface(const DeformationFlow& flow,
                              const RingSurface& source, int node);

// Append-only registration cache:
//   source_id,target_id,kin,terminal_mismatch,converged,iterations,wallclock_s
struct RegistrationLogRow {
  std::string source_id;
  std::string target_id;
  double kin = 0.0;
  double terminal_mismatch = 0.0;
  bool converged = false;
  int iterations = 0;
  double wallclock_s = 0.0;
};

void append_registration_log(const std::filesystem::path& path,
                             const RegistrationLogRow& row);

}  // namespace dshape
