#include "dshape/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dshape {

namespace {

using Blocks = std::vector<Points>;

double block_dot(const Blocks& a, const Blocks& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += (a[i].array() * b[i].array()).sum();
  }
  return s;
}

double block_norm(const Blocks& a) { return std::sqrt(block_dot(a, a)); }

void block_axpy(double alpha, const Blocks& x, Blocks& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool blocks_finite(const Blocks& a) {
  for (const auto& m : a) {
    if (!m.allFinite()) return false;
  }
  return true;
}

[[noreturn]] void solver_failure(const std::string& stage, int iteration,
                                 const Blocks& coeffs) {
  std::ostringstream msg;
  msg << "registration solver failure: non-finite values in " << stage
      << " at iteration " << iteration << "; coefficient block norms:";
  for (const auto& b : coeffs) {
    msg << ' ' << (b.allFinite() ? b.norm() : -1.0);
  }
  throw std::runtime_error(msg.str());
}

// sum_s c_rs K_rs (x_r - x_s) assembled as X diag(W 1) - X W^T, W = c o K
Points weighted_diff_sum(const Points& x, const Eigen::MatrixXd& w) {
  const Eigen::VectorXd row_sums = w.rowwise().sum();
  return x * row_sums.asDiagonal() - x * w.transpose();
}

}  // namespace

void SolverOptions::validate() const {
  kernel.validate();
  if (time_steps < 1) throw std::invalid_argument("SolverOptions: time_steps < 1");
  if (max_admm_iters < 1 || cg_max_iters < 1 || newton_max_iters < 1) {
    throw std::invalid_argument("SolverOptions: iteration caps must be >= 1");
  }
  if (trim_fraction < 0 || trim_fraction >= 1) {
    throw std::invalid_argument("SolverOptions: trim_fraction outside [0,1)");
  }
  if (term_mesh_factor <= 0) {
    throw std::invalid_argument("SolverOptions: term_mesh_factor must be > 0");
  }
  if (control_stride < 1) {
    throw std::invalid_argument("SolverOptions: control_stride must be >= 1");
  }
  if (lambda_growth < 1.0 || max_lambda_stages < 0) {
    throw std::invalid_argument("SolverOptions: bad continuation parameters");
  }
  if (sigma_bbox_factor <= 0 || tau_bbox_factor <= 0) {
    throw std::invalid_argument("SolverOptions: kernel factors must be positive");
  }
}

Vec3 evaluate_velocity(const DeformationFlow& flow, int t_index, const Vec3& z) {
  if (t_index < 0 || t_index >= flow.node_count()) {
    throw std::invalid_argument("evaluate_velocity: node index out of range");
  }
  const Points& ctrl = flow.control_points[t_index];
  const Points& coef = flow.coefficients[t_index];
  Vec3 v = Vec3::Zero();
  for (int i = 0; i < ctrl.cols(); ++i) {
    v += gauss_kernel(ctrl.col(i), z, flow.sigma) * coef.col(i);
  }
  return v;
}

std::vector<Points> flow_forward(const Points& source,
                                 const std::vector<Points>& coefficients,
                                 double sigma) {
  if (coefficients.empty()) {
    throw std::invalid_argument("flow_forward: need at least one coefficient block");
  }
  // every block is a per-interval control a(t_0)..a(t_{q-1})
  const int q = static_cast<int>(coefficients.size());
  const double dt = 1.0 / q;
  std::vector<Points> nodes(q + 1);
  nodes[0] = source;
  for (int j = 0; j < q; ++j) {
    const Eigen::MatrixXd k = gauss_kernel_matrix(nodes[j], nodes[j], sigma);
    nodes[j + 1] = nodes[j] + dt * (coefficients[j] * k);
    if (!nodes[j + 1].allFinite()) {
      throw std::runtime_error("flow_forward: divergence (non-finite coordinates)");
    }
  }
  return nodes;
}

std::vector<Points> advect_tracers(const DeformationFlow& flow,
                                   const Points& tracers) {
  const int q = flow.time_steps;
  const double dt = 1.0 / q;
  std::vector<Points> nodes(q + 1);
  nodes[0] = tracers;
  for (int j = 0; j < q; ++j) {
    const Eigen::MatrixXd k =
        gauss_kernel_matrix(flow.control_points[j], nodes[j], flow.sigma);
    nodes[j + 1] = nodes[j] + dt * (flow.coefficients[j] * k);
    if (!nodes[j + 1].allFinite()) {
      throw std::runtime_error("advect_tracers: divergence (non-finite coordinates)");
    }
  }
  return nodes;
}

double registration_objective(const Points& source,
                              const std::vector<Points>& coefficients,
                              const Points& target, double sigma, double tau,
                              double lambda, std::vector<Points>* gradient) {
  const int q = static_cast<int>(coefficients.size());
  const double dt = 1.0 / q;
  const double inv_s2 = 1.0 / (sigma * sigma);

  std::vector<Points> x(q + 1);
  std::vector<Eigen::MatrixXd> kmats(q);
  x[0] = source;
  double kin = 0.0;
  for (int j = 0; j < q; ++j) {
    kmats[j] = gauss_kernel_matrix(x[j], x[j], sigma);
    kin += dt * (coefficients[j].transpose() * coefficients[j])
                    .cwiseProduct(kmats[j])
                    .sum();
    x[j + 1] = x[j] + dt * (coefficients[j] * kmats[j]);
  }
  const double match = hilb_dissimilarity(x[q], target, tau);
  const double value = kin + lambda * match;
  if (gradient == nullptr) return value;

  gradient->assign(q, Points());
  // discrete adjoint sweep; p is the sensitivity of the objective to x^j
  Points p = lambda * hilb_gradient(x[q], target, tau);
  for (int j = q - 1; j >= 0; --j) {
    const Points& a = coefficients[j];
    const Eigen::MatrixXd& k = kmats[j];
    (*gradient)[j] = 2.0 * dt * a * k + dt * p * k;

    // kinetic term positional sensitivity:
    //   -(4 dt / sigma^2) sum_s <a_r, a_s> (x_r - x_s) K_rs
    const Eigen::MatrixXd ca = (a.transpose() * a).cwiseProduct(k);
    Points pos = (-4.0 * dt * inv_s2) * weighted_diff_sum(x[j], ca);

    // Euler step positional sensitivity:
    //   p_r += p_r^{j+1} - (2 dt / sigma^2) sum_s
    //          (<p_r, a_s> + <p_s, a_r>) (x_r - x_s) K_rs
    const Eigen::MatrixXd cp =
        (p.transpose() * a + a.transpose() * p).cwiseProduct(k);
    pos += (-2.0 * dt * inv_s2) * weighted_diff_sum(x[j], cp);

    p += pos;
  }
  return value;
}

namespace {

// velocity coefficients and frozen kernel matrices for one ADMM iteration
struct FrozenDynamics {
  std::vector<Eigen::MatrixXd> kmats;  // q matrices, one per interval
  double dt = 0.0;

  // x blocks 1..q from the frozen linear recurrence (relative to x0)
  Blocks rollout_offsets(const Blocks& a) const {
    const int q = static_cast<int>(kmats.size());
    Blocks x(q);
    Points acc = Points::Zero(3, a[0].cols());
    for (int j = 0; j < q; ++j) {
      acc += dt * (a[j] * kmats[j]);
      x[j] = acc;
    }
    return x;
  }

  // adjoint of rollout_offsets: blocks l = dt * (sum_{j >= l} r_j) K_l
  Blocks rollout_adjoint(const Blocks& r) const {
    const int q = static_cast<int>(kmats.size());
    Blocks out(q);
    Points suffix = Points::Zero(3, r[0].cols());
    for (int l = q - 1; l >= 0; --l) {
      suffix += r[l];
      out[l] = dt * (suffix * kmats[l]);
    }
    return out;
  }
};

// Solves the step (i) optimality system
//   (2 dt K + chi I + chi M^T M) a = chi Pa + chi M^T Px_off
// by preconditioned CG, matrix-free in M.
Blocks solve_kinetic_subproblem(const FrozenDynamics& dyn, const Blocks& pa,
                                const Blocks& px_off, double chi,
                                const Blocks& warm, double rel_tol,
                                int max_iters) {
  const int q = static_cast<int>(dyn.kmats.size());
  const double dt = dyn.dt;

  std::vector<Eigen::LLT<Eigen::MatrixXd>> precond(q);
  for (int j = 0; j < q; ++j) {
    const auto& k = dyn.kmats[j];
    Eigen::MatrixXd p = 2.0 * dt * k + chi * dt * dt * (q - j) * k * k;
    p.diagonal().array() += chi;
    precond[j].compute(p);
  }

  auto apply = [&](const Blocks& a) {
    Blocks ma = dyn.rollout_offsets(a);
    Blocks mtma = dyn.rollout_adjoint(ma);
    Blocks out(q);
    for (int j = 0; j < q; ++j) {
      out[j] = 2.0 * dt * (a[j] * dyn.kmats[j]) + chi * a[j] + chi * mtma[j];
    }
    return out;
  };
  auto precondition = [&](const Blocks& r) {
    Blocks z(q);
    for (int j = 0; j < q; ++j) {
      z[j] = precond[j].solve(r[j].transpose()).transpose();
    }
    return z;
  };

  Blocks rhs = dyn.rollout_adjoint(px_off);
  for (int j = 0; j < q; ++j) rhs[j] = chi * (pa[j] + rhs[j]);

  Blocks a = warm;
  Blocks r = apply(a);
  for (int j = 0; j < q; ++j) r[j] = rhs[j] - r[j];
  Blocks z = precondition(r);
  Blocks d = z;
  double rz = block_dot(r, z);
  const double rhs_norm = std::max(block_norm(rhs), 1e-300);

  for (int it = 0; it < max_iters; ++it) {
    if (block_norm(r) <= rel_tol * rhs_norm) break;
    Blocks ad = apply(d);
    const double dad = block_dot(d, ad);
    if (dad <= 0) break;
    const double alpha = rz / dad;
    block_axpy(alpha, d, a);
    block_axpy(-alpha, ad, r);
    z = precondition(r);
    const double rz_new = block_dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int j = 0; j < q; ++j) d[j] = z[j] + beta * d[j];
  }
  return a;
}

// Proximal HILB subproblem in the terminal state:
//   min_x lambda HILB(x, target) + (chi/2) |x - z|^2
// Newton steps with matrix-free CG on the Hessian and Armijo backtracking.
Points solve_terminal_prox(const Points& warm, const Points& z,
                           const Points& target, double tau, double lambda,
                           double chi, int max_newton, double krylov_tol,
                           int cg_cap, int ls_cap) {
  const double inv_t2 = 1.0 / (tau * tau);
  const double n = static_cast<double>(warm.cols());
  const double m = static_cast<double>(target.cols());

  auto objective = [&](const Points& x) {
    return lambda * hilb_dissimilarity(x, target, tau) +
           0.5 * chi * (x - z).squaredNorm();
  };

  Points x = warm;
  double f = objective(x);

  for (int newton = 0; newton < max_newton; ++newton) {
    const Eigen::MatrixXd kaa = gauss_kernel_matrix(x, x, tau);
    const Eigen::MatrixXd kab = gauss_kernel_matrix(x, target, tau);

    const Eigen::VectorXd row_a = kaa.rowwise().sum();
    const Eigen::VectorXd row_b = kab.rowwise().sum();
    const Points hilb_grad =
        (2.0 * inv_t2) * ((2.0 / (n * n)) * (x * kaa - x * row_a.asDiagonal()) -
                          (2.0 / (n * m)) *
                              (target * kab.transpose() - x * row_b.asDiagonal()));
    Points grad = lambda * hilb_grad + chi * (x - z);
    const double grad_norm = grad.norm();
    if (grad_norm <= krylov_tol * chi * std::max(1.0, (x - z).norm()) ||
        grad_norm <= 1e-14) {
      break;
    }

    // Hessian-vector product with the kernel matrices cached at x. The
    // pairwise structure reduces to elementwise products and a handful of
    // 3 x n GEMMs:
    //   sum_j w_ij (x_i - x_j) = X diag(W 1) - X W^T  with W = K o scalars.
    auto hess_vec = [&](const Points& v) {
      const double c_self = lambda * 2.0 / (n * n);
      const double c_cross = lambda * 2.0 / (n * m);

      // self block, -2/tau^2 (v_i - v_j) part
      const Eigen::VectorXd ka_rows = kaa.rowwise().sum();
      Points out = chi * v;
      out -= (c_self * 2.0 * inv_t2) *
             (v * ka_rows.asDiagonal() - v * kaa.transpose());
      // self block, 4/tau^4 d (d . w) part
      const Eigen::VectorXd s = (x.array() * v.array()).colwise().sum();
      const Eigen::MatrixXd cxv = x.transpose() * v;  // c_ij = x_i . v_j
      Eigen::MatrixXd w = kaa.cwiseProduct(
          (s.replicate(1, x.cols()) + s.transpose().replicate(x.cols(), 1) -
           cxv - cxv.transpose()));
      out += (c_self * 4.0 * inv_t2 * inv_t2) *
             (x * w.rowwise().sum().asDiagonal() - x * w.transpose());

      // cross block (the target points never move)
      const Eigen::VectorXd kb_rows = kab.rowwise().sum();
      out += (c_cross * 2.0 * inv_t2) * (v * kb_rows.asDiagonal());
      const Eigen::MatrixXd g = target.transpose() * v;  // g_ji = y_j . v_i
      Eigen::MatrixXd w2 = kab.cwiseProduct(
          (s.replicate(1, target.cols()) - g.transpose()));
      out -= (c_cross * 4.0 * inv_t2 * inv_t2) *
             (x * w2.rowwise().sum().asDiagonal() - target * w2.transpose());
      return out;
    };

    // truncated CG on H dir = -grad
    Points dir = Points::Zero(3, x.cols());
    Points r = -grad;
    Points d = r;
    double rr = r.squaredNorm();
    const double r0 = std::sqrt(rr);
    for (int it = 0; it < cg_cap; ++it) {
      if (std::sqrt(rr) <= krylov_tol * r0) break;
      const Points hd = hess_vec(d);
      const double dhd = (d.array() * hd.array()).sum();
      if (dhd <= 1e-14 * d.squaredNorm()) {
        if (dir.isZero(0.0)) dir = r;  // fall back to steepest descent
        break;
      }
      const double alpha = rr / dhd;
      dir += alpha * d;
      r -= alpha * hd;
      const double rr_new = r.squaredNorm();
      d = r + (rr_new / rr) * d;
      rr = rr_new;
    }
    if (dir.isZero(0.0)) dir = -grad;

    // Armijo backtracking
    const double slope = (grad.array() * dir.array()).sum();
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < ls_cap; ++ls) {
      const Points cand = x + step * dir;
      const double fc = objective(cand);
      if (fc <= f + 1e-4 * step * slope) {
        x = cand;
        f = fc;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (!x.allFinite()) {
    throw std::runtime_error("registration solver failure: non-finite terminal prox");
  }
  return x;
}

std::vector<int> strided_indices(int n, int stride) {
  std::vector<int> idx;
  for (int i = 0; i < n; i += stride) idx.push_back(i);
  return idx;
}

Points select_columns(const Points& pts, const std::vector<int>& idx) {
  Points out(3, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = pts.col(idx[i]);
  return out;
}

}  // namespace

RegistrationResult register_surfaces(const RingSurface& source,
                                     const RingSurface& target,
                                     const SolverOptions& opts) {
  opts.validate();
  if (source.point_count() == 0 || target.point_count() == 0) {
    throw std::invalid_argument("register_surfaces: empty surface");
  }
  const int q = opts.time_steps;
  const double dt = 1.0 / q;

  const double sigma = opts.kernel.sigma > 0
                           ? opts.kernel.sigma
                           : opts.sigma_bbox_factor * bbox_diagonal(source.points);
  const double tau =
      opts.kernel.tau > 0
          ? opts.kernel.tau
          : (opts.tau_bbox_factor / 0.2) *
                default_tau(source.points, target.points);
  double lambda = opts.kernel.lambda;

  const auto ctrl_idx = strided_indices(source.point_count(), opts.control_stride);
  const Points src_ctrl = select_columns(source.points, ctrl_idx);
  const Points tgt_ctrl = select_columns(
      target.points, strided_indices(target.point_count(), opts.control_stride));
  const int m = static_cast<int>(src_ctrl.cols());

  // cheap per-iteration termination probe on a tracer subset; candidate
  // convergence is always confirmed on the full grid
  const Points check_pts =
      select_columns(source.points, strided_indices(source.point_count(), 2));

  // mesh-size termination threshold, taken from the finer of the two grids
  const double threshold =
      opts.term_mesh_factor *
      std::min(median_edge_length(source), median_edge_length(target));

  RegistrationResult res;
  res.threshold = threshold;

  Blocks a(q, Points::Zero(3, m));
  std::vector<Points> traj(q + 1, src_ctrl);
  Points deformed_full = source.points;

  auto full_mismatch = [&](const Points& def_full) {
    return trimmed_hausdorff(def_full, target.points, opts.trim_fraction);
  };

  double mismatch = full_mismatch(deformed_full);

  double chi = opts.penalty;
  if (chi <= 0) {
    const Points g0 = hilb_gradient(src_ctrl, tgt_ctrl, tau);
    chi = 10.0 * lambda *
          std::max(g0.colwise().norm().mean(), 1e-12);
  }

  // consensus terminal state and its dual
  Points xq_tilde = src_ctrl;
  Points uq = Points::Zero(3, m);

  int iter = 0;
  bool converged = mismatch <= threshold;
  auto record_objective = [&]() {
    double kin = 0.0;
    for (int j = 0; j < q; ++j) {
      const Eigen::MatrixXd k = gauss_kernel_matrix(traj[j], traj[j], sigma);
      kin += dt * (a[j].transpose() * a[j]).cwiseProduct(k).sum();
    }
    res.objective_history.push_back(
        kin + lambda * hilb_dissimilarity(traj[q], tgt_ctrl, tau));
    return kin;
  };
  double kin = record_objective();

  int stage = 0;
  int stall_streak = 0;
  int stage_iters = 0;
  while (!converged && iter < opts.max_admm_iters) {
    ++iter;
    ++stage_iters;

    // refreeze kernels along the current nonlinear trajectories
    FrozenDynamics dyn;
    dyn.dt = dt;
    dyn.kmats.resize(q);
    for (int j = 0; j < q; ++j) {
      dyn.kmats[j] = gauss_kernel_matrix(traj[j], traj[j], sigma);
    }

    // step (i): prox targets. Every non-terminal consensus block and its dual
    // collapse onto the primal values, so only the terminal pair survives.
    Blocks px_off(q);
    {
      Blocks cur = dyn.rollout_offsets(a);
      for (int j = 0; j < q - 1; ++j) px_off[j] = cur[j];
      px_off[q - 1] = (xq_tilde + uq).eval() - src_ctrl;
    }
    a = solve_kinetic_subproblem(dyn, a, px_off, chi, a, opts.cg_rel_tol,
                                 opts.cg_max_iters);
    if (!blocks_finite(a)) solver_failure("kinetic subproblem", iter, a);

    Blocks xoff = dyn.rollout_offsets(a);
    const Points xq = src_ctrl + xoff[q - 1];

    // step (ii): terminal proximal HILB subproblem (warm-started)
    const Points xq_prev = xq_tilde;
    xq_tilde = solve_terminal_prox(xq_tilde, xq - uq, tgt_ctrl, tau, lambda,
                                   chi, opts.newton_max_iters,
                                   opts.newton_krylov_tol, opts.newton_cg_cap,
                                   opts.line_search_cap);

    // step (iii): dual ascent on the terminal consensus constraint
    uq += xq_tilde - xq;

    // residual balancing (factor-2 rule)
    const double primal = (xq_tilde - xq).norm();
    const double dual = chi * (xq_tilde - xq_prev).norm();
    if (primal > 10.0 * dual && dual > 0) {
      chi *= 2.0;
      uq *= 0.5;
    } else if (dual > 10.0 * primal && primal > 0) {
      chi *= 0.5;
      uq *= 2.0;
    }

    // nonlinear rollout with the new controls; termination bookkeeping
    traj = flow_forward(src_ctrl, a, sigma);
    DeformationFlow probe;
    probe.control_points = traj;
    probe.coefficients = a;
    probe.coefficients.push_back(Points::Zero(3, m));
    probe.time_steps = q;
    probe.sigma = sigma;
    mismatch = trimmed_hausdorff(advect_tracers(probe, check_pts).back(),
                                 target.points, opts.trim_fraction);
    const std::size_t hist = res.objective_history.size();
    const double j_prev = res.objective_history[hist - 1];
    kin = record_objective();
    const double j_cur = res.objective_history[hist];

    if (mismatch <= threshold) {
      deformed_full = advect_tracers(probe, source.points).back();
      mismatch = full_mismatch(deformed_full);
      if (mismatch <= threshold) {
        converged = true;
        break;
      }
    }

    if (j_prev - j_cur < opts.objective_stall_tol * std::abs(j_prev)) {
      ++stall_streak;
    } else {
      stall_streak = 0;
    }
    if (stall_streak >= opts.objective_stall_count ||
        stage_iters >= opts.stage_iter_cap) {
      if (opts.lambda_growth > 1.0 && stage < opts.max_lambda_stages) {
        // tighten the relaxation; chi and the scaled dual follow lambda
        ++stage;
        stall_streak = 0;
        stage_iters = 0;
        lambda *= opts.lambda_growth;
        chi *= opts.lambda_growth;
        uq /= opts.lambda_growth;
      } else {
        break;  // stalled short of the threshold
      }
    }
  }

  res.flow.control_points = traj;
  res.flow.coefficients = a;
  res.flow.coefficients.push_back(Points::Zero(3, m));
  res.flow.time_steps = q;
  res.flow.sigma = sigma;
  if (!converged && iter > 0) {
    // non-converged exit: report the full-grid state of the final iterate
    deformed_full = advect_tracers(res.flow, source.points).back();
    mismatch = full_mismatch(deformed_full);
  }
  res.flow.kinetic_energy = kin;
  res.flow.terminal_mismatch = mismatch;
  res.flow.control_indices = ctrl_idx;
  res.deformed = source;
  res.deformed.points = deformed_full;
  res.deformed.id = source.id + "_to_" + target.id;
  res.converged = converged;
  res.iterations = iter;
  return res;
}

double symmetrized_kin(const RingSurface& s, const RingSurface& sigma,
                       const SolverOptions& opts) {
  const auto fwd = register_surfaces(s, sigma, opts);
  if (!fwd.converged) {
    throw std::runtime_error("symmetrized_kin: forward registration " + s.id +
                             " -> " + sigma.id + " did not converge");
  }
  const auto bwd = register_surfaces(sigma, s, opts);
  if (!bwd.converged) {
    throw std::runtime_error("symmetrized_kin: backward registration " +
                             sigma.id + " -> " + s.id + " did not converge");
  }
  return 0.5 * (fwd.flow.kinetic_energy + bwd.flow.kinetic_energy);
}

RingSurface flow_node_surface(const DeformationFlow& flow,
                              const RingSurface& source, int node) {
  if (node < 0 || node >= flow.node_count()) {
    throw std::invalid_argument("flow_node_surface: node out of range");
  }
  RingSurface out = source;
  out.points = advect_tracers(flow, source.points)[node];
  return out;
}

void append_registration_log(const std::filesystem::path& path,
                             const RegistrationLogRow& row) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (fresh) {
    out << "source_id,target_id,kin,terminal_mismatch,converged,iterations,wallclock_s\n";
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%d,%d,%.3f\n",
                row.source_id.c_str(), row.target_id.c_str(), row.kin,
                row.terminal_mismatch, row.converged ? 1 : 0, row.iterations,
                row.wallclock_s);
  out << buf;
}

}  // namespace dshape
