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

#ifndef PDPL_EVAL_HPP_
#define PDPL_EVAL_HPP_

#include <cstdint>
#include <string>

#include "pdpl/policy.hpp"
#include "pdpl/qp.hpp"

namespace pdpl::eval {

struct MetricStats {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

/// Monte Carlo evaluation against the exact QP oracle. Violation events:
///   primal: not (H U~ <= h and p - J* <= t_p*)
///   dual:   not (lam~ >= 0 and J* - d <= t_d*)
///   compound: not (primal feasible and dual feasible and gap <= t_max)
/// The compound event is the one the backup-frequency guarantee speaks about;
/// it is not derived from the two marginal rates.
struct EvalReport {
  MetricStats t_p;
  MetricStats t_d;
  MetricStats t_gap;
  double eps_p = 0.0;
  double eps_d = 0.0;
  double eps_compound = 0.0;
  std::int64_t samples = 0;
  std::int64_t negative_tp_errors = 0;  // t_p below -1e-6*scale (oracle bug)
  double min_tp = 0.0;
  double t_max = 0.0;
  std::string config_hash;

  std::string to_json() const;
};

EvalReport monte_carlo_eval(const mpc::ProblemConfig& cfg,
                            const policy::Policy& primal,
                            const policy::Policy& dual, std::int64_t M,
                            std::uint64_t seed, double t_max,
                            const qp::SolverConfig& solver = {});

struct TimingStats {
  double min_us = 0.0;
  double max_us = 0.0;
  double mean_us = 0.0;
  double std_us = 0.0;
};

struct BenchReport {
  TimingStats policy_path;  // primal eval + dual eval + certify arithmetic
  TimingStats qp_path;      // condense + online QP solve
  double speedup = 0.0;     // qp mean / policy mean
  std::int64_t samples = 0;
  std::string machine;
  std::string config_hash;

  std::string to_json() const;
};

/// Times the certify path against the online QP solve on the same M
/// parameters: monotonic clock, warmup excluded, per-call times taken as
/// batch means (median-of-batches reported as the distribution statistics).
/// Runs single-threaded.
BenchReport bench(const mpc::ProblemConfig& cfg, const policy::Policy& primal,
                  const policy::Policy& dual, std::int64_t M,
                  std::uint64_t seed, const qp::SolverConfig& solver = {});

}  // namespace pdpl::eval

#endif  // PDPL_EVAL_HPP_
