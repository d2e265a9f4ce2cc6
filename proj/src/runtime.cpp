/*
 Copyright 2026 The pdpl authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "pdpl/runtime.hpp"

#include <cmath>
#include <sstream>

namespace pdpl::runtime {

const char* to_string(Decision d) {
  return d == Decision::apply ? "apply" : "backup";
}

const char* to_string(Reason r) {
  switch (r) {
    case Reason::ok: return "ok";
    case Reason::primal_infeasible: return "primal_infeasible";
    case Reason::dual_infeasible: return "dual_infeasible";
    case Reason::gap_exceeded: return "gap_exceeded";
    case Reason::eval_error: return "eval_error";
  }
  return "unknown";
}

void ControllerContext::validate() const {
  const int dim = mpc::ParameterVector::flat_dim(problem.mpc.T);
  if (primal.input_dim() != dim || dual.input_dim() != dim) {
    throw DimensionError("policy input dimension does not match the problem");
  }
  if (primal.output_dim() != problem.mpc.n_dec() ||
      dual.output_dim() != problem.mpc.n_rows()) {
    throw DimensionError("policy output dimension does not match the problem");
  }
  if (!(t_max > 0.0) || !(feas_tol >= 0.0)) {
    throw ConfigError("invalid certification thresholds");
  }
}

namespace {

// Preallocated buffers for the per-step certification arithmetic; reused
// across calls so the apply path performs no heap allocation in steady state.
struct CertifyScratch {
  Vec p_flat;
  Vec phi_p, phi_d;
  Vec U, lam;
  Mat M_u;       // tracked-output prediction map
  Vec e0;        // tracking error at U = 0
  Mat Q, tmp_nn;
  Vec c, w, h, w2, QU;
  Eigen::LLT<Mat> llt;
  Eigen::Matrix<double, 4, Eigen::Dynamic> G;  // A^{k-j} B blocks

  void resize(int T, int n_rb_p, int n_rb_d, int pdim) {
    const int n = 3 * T;
    if (p_flat.size() != pdim) p_flat.resize(pdim);
    if (phi_p.size() != n_rb_p) phi_p.resize(n_rb_p);
    if (phi_d.size() != n_rb_d) phi_d.resize(n_rb_d);
    if (U.size() != n) U.resize(n);
    if (lam.size() != 4 * n) lam.resize(4 * n);
    if (M_u.rows() != n) {
      M_u.setZero(n, n);
      Q.resize(n, n);
      tmp_nn.resize(n, n);
      c.resize(n);
      w.resize(n);
      w2.resize(n);
      QU.resize(n);
      e0.resize(n);
      h.resize(4 * n);
      G.resize(4, n);
    }
  }
};

// Structure-exploiting certification for the terminal-set-free problem: the
// constraint rows are per-step input bounds and first differences, so
// feasibility, h and H'lam come straight from loops instead of a stored H.
CertificationOutcome certify_fast(const ControllerContext& ctx,
                                  const mpc::ParameterVector& P,
                                  CertifyScratch& s) {
  using mpc::kNu;
  using mpc::kNy;
  CertificationOutcome out;
  const mpc::MpcSpec& spec = ctx.problem.mpc;
  const int T = spec.T;
  const int n = spec.n_dec();

  s.resize(T, ctx.primal.rbn.n_rb(), ctx.dual.rbn.n_rb(),
           mpc::ParameterVector::flat_dim(T));

  // Policy evaluations.
  s.p_flat.segment<4>(0) = P.x0;
  s.p_flat(4) = P.v;
  for (int k = 0; k < T; ++k) {
    s.p_flat.segment<kNy>(4 + 1 + kNy * k) = P.y_ref.row(k).transpose();
  }
  s.p_flat.segment(4 + 1 + kNy * T, T) = P.delta;
  s.p_flat.segment<kNu>(4 + 1 + kNy * T + T) = P.u_prev;

  if (ctx.primal.kind == policy::Kind::rbn) {
    policy::rbn_features_into(ctx.primal.rbn, s.p_flat, s.phi_p);
    s.U.noalias() = ctx.primal.coefficients * s.phi_p;
  } else {
    s.U = ctx.primal.mlp.forward(s.p_flat);
  }
  if (ctx.dual.kind == policy::Kind::rbn) {
    policy::rbn_features_into(ctx.dual.rbn, s.p_flat, s.phi_d);
    s.lam.noalias() = ctx.dual.coefficients * s.phi_d;
  } else {
    s.lam = ctx.dual.mlp.forward(s.p_flat);
  }
  s.lam = s.lam.cwiseMax(0.0);
  ctx.last_certify_ops +=
      policy::eval_flop_count(ctx.primal) + policy::eval_flop_count(ctx.dual);

  if (!s.U.allFinite() || !s.lam.allFinite()) {
    out.decision = Decision::backup;
    out.reason = Reason::eval_error;
    return out;
  }

  // Condensed cost data. G holds the blocks C A^{k-j} B of the prediction
  // map row by row; the steering free response accumulates alongside.
  const mpc::LpvMatrices sys = mpc::build_icc_matrices(ctx.problem.vehicle, P.v);
  Eigen::Vector4d free_state = Eigen::Vector4d::Zero();
  Eigen::Vector4d x_resp = Eigen::Vector4d::Zero();
  for (int k = 0; k < T; ++k) {
    // Shift previous blocks by A and append B.
    for (int j = 0; j < k; ++j) {
      s.G.middleCols<kNu>(kNu * j) =
          (sys.A_d * s.G.middleCols<kNu>(kNu * j)).eval();
    }
    s.G.middleCols<kNu>(kNu * k) = sys.B_d;
    for (int j = 0; j <= k; ++j) {
      s.M_u.block<kNy, kNu>(kNy * k, kNu * j) =
          spec.C * s.G.middleCols<kNu>(kNu * j);
    }
    if (k == 0) x_resp = sys.A_d * P.x0;
    else x_resp = (sys.A_d * x_resp).eval();
    free_state = sys.A_d * free_state;
    free_state += sys.E_d * P.delta(k);
    s.e0.segment<kNy>(kNy * k) =
        spec.C * (x_resp + free_state) - P.y_ref.row(k).transpose();
  }
  for (int k = 0; k < T; ++k) {
    s.tmp_nn.block(kNy * k, 0, kNy, n).noalias() =
        spec.Q_s * s.M_u.middleRows(kNy * k, kNy);
  }
  s.Q.noalias() = 2.0 * (s.M_u.transpose() * s.tmp_nn);
  for (int k = 0; k < T; ++k) {
    s.Q.block<kNu, kNu>(kNu * k, kNu * k) += 2.0 * spec.R_s;
  }
  s.tmp_nn = s.Q.transpose();
  s.Q = 0.5 * (s.Q + s.tmp_nn);
  for (int k = 0; k < T; ++k) {
    s.w2.segment<kNy>(kNy * k).noalias() =
        spec.Q_s * s.e0.segment<kNy>(kNy * k);
  }
  s.c.noalias() = 2.0 * (s.M_u.transpose() * s.w2);
  ctx.last_certify_ops += 2 * n * n + 2 * n;

  // Constraint rows in the documented order: input upper/lower, rate
  // upper/lower, each k-major.
  // Row values HU and bounds h. For k = 0 the previous input sits inside h
  // (the row itself is u_0 <= du_bar + u_prev), for k >= 1 the row is the
  // first difference u_k - u_{k-1}.
  double worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < T; ++k) {
    for (int j = 0; j < kNu; ++j) {
      const int col = kNu * k + j;
      const double u = s.U(col);
      s.h(col) = spec.u_bar(j);
      s.h(n + col) = spec.u_bar(j);
      s.h(2 * n + col) = k == 0 ? spec.du_bar(j) + P.u_prev(j) : spec.du_bar(j);
      s.h(3 * n + col) = k == 0 ? spec.du_bar(j) - P.u_prev(j) : spec.du_bar(j);
      const double rate_up = k == 0 ? u : u - s.U(col - kNu);
      const double rate_lo = k == 0 ? -u : s.U(col - kNu) - u;
      worst = std::max(worst, u - s.h(col));
      worst = std::max(worst, -u - s.h(n + col));
      worst = std::max(worst, rate_up - s.h(2 * n + col));
      worst = std::max(worst, rate_lo - s.h(3 * n + col));
    }
  }
  out.primal_feasible = worst <= ctx.feas_tol;
  out.dual_feasible = true;  // clamped on evaluation
  ctx.last_certify_ops += 8 * n;

  // w = c + H'lam, assembled from the row structure.
  s.w = s.c;
  for (int k = 0; k < T; ++k) {
    for (int j = 0; j < kNu; ++j) {
      const int col = kNu * k + j;
      double acc = s.lam(col) - s.lam(n + col) + s.lam(2 * n + col) -
                   s.lam(3 * n + col);
      if (k + 1 < T) {
        acc += s.lam(3 * n + col + kNu) - s.lam(2 * n + col + kNu);
      }
      s.w(col) += acc;
    }
  }
  ctx.last_certify_ops += 6 * n;

  s.QU.noalias() = s.Q * s.U;
  out.primal_cost = 0.5 * s.U.dot(s.QU) + s.c.dot(s.U);
  s.llt.compute(s.Q);
  if (s.llt.info() != Eigen::Success) {
    out.decision = Decision::backup;
    out.reason = Reason::eval_error;
    return out;
  }
  s.w2 = s.w;
  s.llt.solveInPlace(s.w2);
  out.dual_cost = -0.5 * s.w.dot(s.w2) - s.lam.dot(s.h);
  out.gap = out.primal_cost - out.dual_cost;
  ctx.last_certify_ops += 2 * n * n + n * n / 2;

  if (!std::isfinite(out.gap)) {
    out.decision = Decision::backup;
    out.reason = Reason::eval_error;
  } else if (!out.primal_feasible) {
    out.decision = Decision::backup;
    out.reason = Reason::primal_infeasible;
  } else if (!out.dual_feasible) {
    out.decision = Decision::backup;
    out.reason = Reason::dual_infeasible;
  } else if (!(out.gap <= ctx.t_max)) {
    out.decision = Decision::backup;
    out.reason = Reason::gap_exceeded;
  } else {
    out.decision = Decision::apply;
    out.reason = Reason::ok;
  }
  return out;
}

}  // namespace

CertificationOutcome certify(const ControllerContext& ctx,
                             const mpc::ParameterVector& P) {
  ctx.validate();
  ctx.last_certify_ops = 0;
  if (!ctx.problem.mpc.terminal) {
    thread_local CertifyScratch scratch;
    return certify_fast(ctx, P, scratch);
  }

  CertificationOutcome out;
  const Vec p_flat = P.flatten();
  const Vec U = policy::eval_policy(ctx.primal, p_flat);
  const Vec lam = policy::eval_policy(ctx.dual, p_flat);
  ctx.last_certify_ops +=
      policy::eval_flop_count(ctx.primal) + policy::eval_flop_count(ctx.dual);

  const mpc::CondensedQp qp = ctx.problem.condense_for(P);
  ctx.last_certify_ops += 2 * qp.H.rows() * qp.H.cols() + 2 * qp.Q.size();

  if (!U.allFinite() || !lam.allFinite()) {
    out.decision = Decision::backup;
    out.reason = Reason::eval_error;
    return out;
  }

  const Vec slack_viol = qp.H * U - qp.h;
  out.primal_feasible = slack_viol.maxCoeff() <= ctx.feas_tol;
  out.dual_feasible = lam.minCoeff() >= -ctx.feas_tol;

  out.primal_cost = qp::eval_primal_cost(qp, U);
  const qp::DualEvaluator dual_eval(qp);
  out.dual_cost = dual_eval.value(lam);
  out.gap = out.primal_cost - out.dual_cost;

  if (!std::isfinite(out.gap)) {
    out.decision = Decision::backup;
    out.reason = Reason::eval_error;
    return out;
  }
  if (!out.primal_feasible) {
    out.decision = Decision::backup;
    out.reason = Reason::primal_infeasible;
  } else if (!out.dual_feasible) {
    out.decision = Decision::backup;
    out.reason = Reason::dual_infeasible;
  } else if (!(out.gap <= ctx.t_max)) {
    out.decision = Decision::backup;
    out.reason = Reason::gap_exceeded;
  } else {
    out.decision = Decision::apply;
    out.reason = Reason::ok;
  }
  return out;
}

Vec backup(const ControllerContext& ctx, const mpc::ParameterVector& P) {
  const mpc::CondensedQp qp = ctx.problem.condense_for(P);
  const qp::QpSolution sol = qp::solve_primal(qp, ctx.solver);
  if (sol.status == qp::SolveStatus::infeasible) {
    throw BackupError("backup QP infeasible");
  }
  if (sol.status != qp::SolveStatus::optimal) {
    throw BackupError("backup QP did not converge");
  }
  return sol.U_star;
}

std::pair<Eigen::Vector3d, CertificationOutcome> control_step(
    ControllerContext& ctx, const Eigen::Vector4d& x, double v,
    const Mat& y_ref_preview, const Vec& delta_preview) {
  if (!(v > 0.0)) throw ConfigError("control_step needs v > 0");
  mpc::ParameterVector P;
  P.x0 = x;
  P.v = v;
  P.y_ref = y_ref_preview;
  P.delta = delta_preview;
  P.u_prev = ctx.u_prev;

  const CertificationOutcome outcome = certify(ctx, P);
  Eigen::Vector3d u;
  if (outcome.decision == Decision::apply) {
    const Vec U = policy::eval_policy(ctx.primal, P);
    u = U.segment<3>(0);
  } else {
    const Vec U = backup(ctx, P);
    u = U.segment<3>(0);
  }
  ctx.u_prev = u;
  return {u, outcome};
}

void Scenario::validate() const {
  const std::size_t n = velocity.size();
  if (n == 0 || steering.size() != n || y_ref.size() != n) {
    throw DimensionError("scenario profiles must have equal nonzero length");
  }
  for (double v : velocity) {
    if (!(v > 0.0)) throw ConfigError("scenario velocity must be positive");
  }
}

Scenario Scenario::lane_change(int steps, double v0, double v1,
                               double delta_max, int t0, int duration) {
  if (steps < 1 || duration < 1) throw ConfigError("bad scenario shape");
  Scenario sc;
  sc.velocity.resize(steps);
  sc.steering.resize(steps);
  sc.y_ref.assign(steps, Eigen::Vector3d::Zero());
  for (int t = 0; t < steps; ++t) {
    const double a = steps > 1 ? static_cast<double>(t) / (steps - 1) : 0.0;
    sc.velocity[t] = v0 + (v1 - v0) * a;
    if (t >= t0 && t < t0 + duration) {
      const double phase =
          2.0 * M_PI * static_cast<double>(t - t0) / duration;
      sc.steering[t] = delta_max * std::sin(phase);
    } else {
      sc.steering[t] = 0.0;
    }
  }
  return sc;
}

SimTrace closed_loop_sim(ControllerContext& ctx, const Scenario& scenario,
                         const Eigen::Vector4d& x0, bool oracle) {
  scenario.validate();
  ctx.validate();
  const int T = ctx.problem.mpc.T;
  const int steps = scenario.steps();

  SimTrace trace;
  trace.steps.reserve(steps);

  Eigen::Vector4d x = x0;
  std::int64_t backups = 0;
  double rel_sum = 0.0;
  std::int64_t rel_count = 0;

  auto clamped = [&](int t) { return t < steps ? t : steps - 1; };

  for (int t = 0; t < steps; ++t) {
    Mat y_ref(T, 3);
    Vec delta(T);
    for (int k = 0; k < T; ++k) {
      y_ref.row(k) = scenario.y_ref[clamped(t + k)].transpose();
      delta(k) = scenario.steering[clamped(t + k)];
    }
    const double v = scenario.velocity[t];

    const Eigen::Vector3d u_prev_before = ctx.u_prev;

    StepRecord rec;
    rec.x = x;
    try {
      auto [u, outcome] = control_step(ctx, x, v, y_ref, delta);
      rec.outcome = outcome;
      rec.u_applied = u;
    } catch (const BackupError& e) {
      trace.aborted = true;
      trace.abort_reason = e.what();
      break;
    }

    mpc::ParameterVector P;
    P.x0 = rec.x;
    P.v = v;
    P.y_ref = y_ref;
    P.delta = delta;
    P.u_prev = u_prev_before;
    rec.p_flat = P.flatten();

    if (rec.outcome.decision == Decision::backup) ++backups;
    trace.max_gap = std::max(trace.max_gap, rec.outcome.gap);

    if (oracle) {
      const mpc::CondensedQp qp = ctx.problem.condense_for(P);
      const qp::QpSolution sol = qp::solve_primal(qp, ctx.solver);
      if (sol.status == qp::SolveStatus::optimal) {
        rec.J_star = sol.J_star;
        if (rec.outcome.decision == Decision::apply) {
          // Relative suboptimality against the tracking objective value
          // (QP value plus the dropped constant, which is nonnegative). The
          // denominator is floored: steps with a near-zero optimal tracking
          // cost would otherwise turn a vanishing absolute gap into a huge
          // ratio.
          const double tracking_opt = sol.J_star + qp.const_offset;
          const double gap_p = rec.outcome.primal_cost - sol.J_star;
          rec.rel_subopt = gap_p / std::max(tracking_opt, 1e-2);
          rel_sum += rec.rel_subopt;
          ++rel_count;
        }
      }
    }

    trace.steps.push_back(rec);

    // True LPV dynamics driven by the applied input and current steering.
    const mpc::LpvMatrices sys =
        mpc::build_icc_matrices(ctx.problem.vehicle, v);
    x = sys.A_d * x + sys.B_d * rec.u_applied + sys.E_d * scenario.steering[t];
  }

  const auto executed = static_cast<double>(trace.steps.size());
  trace.backup_frequency = executed > 0 ? backups / executed : 0.0;
  if (rel_count > 0) trace.mean_rel_subopt = rel_sum / rel_count;
  return trace;
}

std::string SimTrace::to_csv() const {
  std::ostringstream o;
  o << "step";
  const int pdim = steps.empty() ? 0 : static_cast<int>(steps[0].p_flat.size());
  for (int i = 0; i < pdim; ++i) o << ",p" << i;
  o << ",u0,u1,u2,decision,reason,gap,primal_cost,dual_cost,J_star,rel_subopt\n";
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const StepRecord& r = steps[t];
    o << t;
    for (int i = 0; i < pdim; ++i) o << "," << format_double(r.p_flat(i));
    for (int i = 0; i < 3; ++i) o << "," << format_double(r.u_applied(i));
    o << "," << to_string(r.outcome.decision) << ","
      << to_string(r.outcome.reason) << "," << format_double(r.outcome.gap)
      << "," << format_double(r.outcome.primal_cost) << ","
      << format_double(r.outcome.dual_cost) << "," << format_double(r.J_star)
      << "," << format_double(r.rel_subopt) << "\n";
  }
  return o.str();
}

std::string SimTrace::summary_json() const {
  std::ostringstream o;
  o << "{\n";
  o << "  \"steps\": " << steps.size() << ",\n";
  o << "  \"backup_frequency\": " << format_double(backup_frequency) << ",\n";
  o << "  \"mean_rel_subopt\": " << format_double(mean_rel_subopt) << ",\n";
  o << "  \"max_gap\": " << format_double(max_gap) << ",\n";
  o << "  \"aborted\": " << (aborted ? "true" : "false") << "\n";
  o << "}\n";
  return o.str();
}

}  // namespace pdpl::runtime
