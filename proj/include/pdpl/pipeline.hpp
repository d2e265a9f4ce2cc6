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

#ifndef PDPL_PIPELINE_HPP_
#define PDPL_PIPELINE_HPP_

#include <cstdint>
#include <string>

#include "pdpl/eval.hpp"
#include "pdpl/train.hpp"

namespace pdpl::pipeline {

/// Offline-phase settings: the admissible backup frequency epsilon and
/// confidence beta are split equally between the primal and dual policies.
struct PipelineConfig {
  double epsilon = 0.1;
  double beta = 2e-7;
  double t_max = 4.0;
  policy::Kind kind = policy::Kind::rbn;
  std::uint64_t seed = 1;
  std::int64_t eval_samples = 100000;
  std::int64_t bench_samples = 2000;
  train::TrainConfig train;
  std::string out_dir = "out";
  bool run_bench = true;
  bool run_eval = true;

  void validate() const;
};

struct PipelineResult {
  bool success = false;
  int attempts_primal = 0;
  int attempts_dual = 0;
  double t_p_star = 0.0;
  double t_d_star = 0.0;
  std::int64_t N_p = 0;
  std::int64_t N_d = 0;
  std::int64_t primal_capacity = 0;  // n_rb or width at the endpoint
  std::int64_t dual_capacity = 0;
  std::string manifest_path;
  std::string message;
};

/// Full offline phase: sample-size computation, dataset generation, training
/// with capacity-growth retries (the policy with the larger certified level
/// grows after each failed attempt), Monte Carlo evaluation and the timing
/// benchmark. Writes all artifacts plus a manifest with seeds and content
/// hashes; succeeds only when t_p* + t_d* <= t_max within the retry budget.
PipelineResult run_pipeline(const mpc::ProblemConfig& problem,
                            const PipelineConfig& cfg);

/// Re-runs a pipeline from its manifest (same config, seeds and settings);
/// used to check byte-identical reproducibility.
PipelineResult replay_manifest(const std::string& manifest_path,
                               const std::string& out_dir);

}  // namespace pdpl::pipeline

#endif  // PDPL_PIPELINE_HPP_
