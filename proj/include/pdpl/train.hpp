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

#ifndef PDPL_TRAIN_HPP_
#define PDPL_TRAIN_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pdpl/policy.hpp"
#include "pdpl/qp.hpp"

namespace pdpl::train {

/// One labeled parameter: the QP data at P and its optimal primal/dual
/// solution. `qp`/`dqp` can be rebuilt from P and the config; bulk code keeps
/// only the compact labels and rebuilds what it needs.
struct LabeledSample {
  mpc::ParameterVector P;
  mpc::CondensedQp qp;
  qp::DualQp dqp;
  double J_star = 0.0;
  Vec U_star;
  Vec lambda_star;
};

/// Compact dataset row as stored on disk: flattened P plus labels.
struct SampleRow {
  Vec p_flat;
  double J_star = 0.0;
  Vec U_star;
  Vec lambda_star;
};

struct TrainConfig {
  // Penalty schedule for the constrained phase.
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  int penalty_stages = 6;
  // Optimizer schedule.
  double learning_rate = 2e-2;
  double lr_decay = 0.5;
  int epochs_per_stage = 400;
  int batch_size = 256;          // phase-A minibatches only
  int phase_a_epochs = 40;
  /// Hinge margin on row-scale-normalized constraint violations.
  double feasibility_margin = 1e-3;
  std::uint64_t seed = 0;
  double t_max = 4.0;
  // Capacity growth rule applied by the retraining loop.
  int rbn_start = 10;
  int rbn_increment = 10;
  int mlp_start_width = 5;
  int mlp_depth = 3;
  int mlp_width_increment = 5;
  int max_growth_retries = 6;
  // Optional early-exit target for the max-suboptimality refinement; the
  // stage loop stops once the exact certified level drops below it.
  double target_t = 0.0;

  void validate() const;
};

struct TrainReport {
  bool success = false;
  double t_star = std::numeric_limits<double>::quiet_NaN();
  double max_violation = 0.0;   // worst constraint violation at the result
  int stages_run = 0;
  int iterations = 0;
  std::vector<std::int64_t> violating_samples;  // nonempty on failure
  std::string message;
};

/// Trains the primal policy on the sampled learning problem: minimize the
/// worst-case suboptimality over the dataset subject to hard feasibility of
/// every sample. Phase A regresses onto the optimizer labels; phase B runs
/// penalized max-suboptimality refinement with monotone acceptance. Success
/// requires every training sample feasible within 1e-9.
TrainReport train_primal(const mpc::ProblemConfig& cfg,
                         const std::vector<SampleRow>& data, policy::Policy& pol,
                         const TrainConfig& tc);

/// Dual counterpart: maximize the worst-case certified lower bound. The
/// policy output is clamped at zero on evaluation, so dual feasibility holds
/// by construction and only optimality is refined.
TrainReport train_dual(const mpc::ProblemConfig& cfg,
                       const std::vector<SampleRow>& data, policy::Policy& pol,
                       const TrainConfig& tc);

/// Recomputes max_i [p(P_i; policy(P_i)) - J*_i] (primal role) or
/// max_i [J*_i - d(P_i; policy(P_i))] (dual role) plus the worst constraint
/// violation, from scratch. Used to validate reported certificates.
struct CertCheck {
  double t_star = 0.0;
  double max_violation = 0.0;
};
CertCheck recompute_certificate(const mpc::ProblemConfig& cfg,
                                const std::vector<SampleRow>& data,
                                const policy::Policy& pol);

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool resampled = false;
  int attempts = 1;
};

/// Compares the analytic parameter gradient of a quadratic probe loss at P
/// against central finite differences (step 1e-5). Resamples the probe point
/// while any ReLU pre-activation is within `kink_tol` of zero.
GradCheckResult grad_check(const policy::MlpPolicy& net, const Vec& p_flat,
                           const Vec& probe_target, double fd_step = 1e-5,
                           double kink_tol = 1e-6,
                           const std::function<Vec(std::uint64_t)>& resample = {});

/// Builds a fresh policy template at the capacity of growth attempt
/// `attempt` (0-based): rbn uses rbn_start + attempt * rbn_increment centers,
/// mlp uses width mlp_start_width + attempt * mlp_width_increment at fixed
/// depth.
policy::Policy make_template(policy::Kind kind, policy::Role role,
                             const mpc::ProblemConfig& cfg,
                             const TrainConfig& tc, int attempt,
                             std::uint64_t seed);

}  // namespace pdpl::train

#endif  // PDPL_TRAIN_HPP_
