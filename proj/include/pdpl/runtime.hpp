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

#ifndef PDPL_RUNTIME_HPP_
#define PDPL_RUNTIME_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "pdpl/policy.hpp"
#include "pdpl/qp.hpp"

namespace pdpl::runtime {

enum class Decision : std::uint8_t { apply = 0, backup = 1 };
enum class Reason : std::uint8_t {
  ok = 0,
  primal_infeasible = 1,
  dual_infeasible = 2,
  gap_exceeded = 3,
  eval_error = 4,  // non-finite policy output or cost
};

const char* to_string(Decision d);
const char* to_string(Reason r);

/// Per-step result of the online duality-gap check.
struct CertificationOutcome {
  bool primal_feasible = false;
  bool dual_feasible = false;
  double gap = 0.0;
  Decision decision = Decision::backup;
  Reason reason = Reason::ok;
  double primal_cost = 0.0;
  double dual_cost = 0.0;
};

enum class BackupKind : std::uint8_t { online_qp = 0 };

/// Online controller state: the two trained policies, the certification
/// thresholds and the previous applied input.
struct ControllerContext {
  policy::Policy primal;
  policy::Policy dual;
  double t_max = 4.0;
  double feas_tol = 1e-6;
  BackupKind backup_kind = BackupKind::online_qp;
  mpc::ProblemConfig problem;
  qp::SolverConfig solver;
  Eigen::Vector3d u_prev = Eigen::Vector3d::Zero();

  // Instrumentation: inner-loop operation tally of the last certify call.
  // The count is input-independent for a fixed context.
  mutable std::int64_t last_certify_ops = 0;

  void validate() const;
};

/// Evaluates both policies at P, checks primal/dual feasibility against the
/// condensed data, computes the duality gap and decides apply-or-backup.
/// Never solves an optimization problem; all failure modes fold into
/// decision == backup with a reason code.
CertificationOutcome certify(const ControllerContext& ctx,
                             const mpc::ParameterVector& P);

/// One closed-loop step: assembles P_t from the measured state and previews,
/// certifies, applies either the policy's first input block or the backup
/// controller's, and advances ctx.u_prev. Throws BackupError when the backup
/// QP itself is infeasible.
std::pair<Eigen::Vector3d, CertificationOutcome> control_step(
    ControllerContext& ctx, const Eigen::Vector4d& x, double v,
    const Mat& y_ref_preview, const Vec& delta_preview);

/// Backup controller: exact online solve of the condensed QP. The returned
/// sequence is feasible for (H, h); infeasibility is thrown as BackupError.
Vec backup(const ControllerContext& ctx, const mpc::ParameterVector& P);

/// Per-step profiles driving a closed-loop run. Previews index into the
/// profiles with end-clamping.
struct Scenario {
  std::vector<double> velocity;
  std::vector<double> steering;
  std::vector<Eigen::Vector3d> y_ref;

  int steps() const { return static_cast<int>(velocity.size()); }
  void validate() const;

  /// Single lane-change analogue: linear velocity ramp v0 -> v1 and a sine
  /// dipole steering pulse of amplitude delta_max inside [t0, t0 + duration).
  static Scenario lane_change(int steps, double v0, double v1,
                              double delta_max, int t0, int duration);
};

struct StepRecord {
  Vec p_flat;
  CertificationOutcome outcome;
  Eigen::Vector3d u_applied;
  Eigen::Vector4d x;
  double J_star = std::numeric_limits<double>::quiet_NaN();      // oracle mode
  double rel_subopt = std::numeric_limits<double>::quiet_NaN();  // oracle mode
};

struct SimTrace {
  std::vector<StepRecord> steps;
  double backup_frequency = 0.0;
  double mean_rel_subopt = std::numeric_limits<double>::quiet_NaN();
  double max_gap = 0.0;
  bool aborted = false;
  std::string abort_reason;

  std::string to_csv() const;
  std::string summary_json() const;
};

/// Runs the control loop through the scenario, propagating the true LPV
/// dynamics with the applied inputs. With oracle == true every step also
/// solves the QP exactly and records the relative suboptimality
/// (p - J*) / J17 where J17 is the tracking objective value (QP value plus
/// the dropped constant; the QP value alone can be negative).
SimTrace closed_loop_sim(ControllerContext& ctx, const Scenario& scenario,
                         const Eigen::Vector4d& x0, bool oracle);

}  // namespace pdpl::runtime

#endif  // PDPL_RUNTIME_HPP_
