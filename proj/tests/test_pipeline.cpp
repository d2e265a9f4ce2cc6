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

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pdpl/pipeline.hpp"

using namespace pdpl;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("pipeline");

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

mpc::ProblemConfig small_problem() {
  return mpc::ProblemConfig::from_ini_text(R"(
[box]
beta = -0.02, 0.02
r = -0.1, 0.1
phi = -0.02, 0.02
phi_dot = -0.1, 0.1
v = 8, 12
y_ref_beta = -0.02, 0.02
y_ref_r = -0.1, 0.1
y_ref_phi = -0.02, 0.02
delta = -0.02, 0.02
)");
}

pipeline::PipelineConfig small_pipeline(const std::string& out) {
  pipeline::PipelineConfig cfg;
  // Deliberately loose statistical targets keep the sampled problems tiny;
  // the protocol under test is unchanged.
  cfg.epsilon = 0.5;
  cfg.beta = 1e-3;
  cfg.t_max = 4.0;
  cfg.seed = 11;
  cfg.eval_samples = 400;
  cfg.bench_samples = 0;
  cfg.run_bench = false;
  cfg.train.epochs_per_stage = 60;
  cfg.train.penalty_stages = 3;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("pipeline produces certified artifacts and a manifest") {
  const auto dir = fs::temp_directory_path() / "pdpl_pipeline_a";
  fs::remove_all(dir);
  const auto cfg = small_pipeline(dir.string());
  const auto res = pipeline::run_pipeline(small_problem(), cfg);

  REQUIRE(res.success);
  CHECK(res.t_p_star + res.t_d_star <= cfg.t_max);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "primal.policy"));
  CHECK(fs::exists(dir / "dual.policy"));
  CHECK(fs::exists(dir / "primal_data.csv"));
  CHECK(fs::exists(dir / "eval_report.json"));

  // The trained policies carry their certificates and sample sizes.
  const auto primal = policy::load_policy((dir / "primal.policy").string());
  CHECK(primal.is_certified());
  CHECK(primal.certified_t == res.t_p_star);

  // epsilon/beta are split equally between the two learning problems.
  const std::string manifest = slurp(dir / "manifest.json");
  CHECK(manifest.find("\"epsilon_p\": 0.25") != std::string::npos);
  CHECK(manifest.find("\"beta_p\": 0.0005") != std::string::npos);
}

TEST_CASE("replay from the manifest is byte identical") {
  const auto dir_a = fs::temp_directory_path() / "pdpl_pipeline_b1";
  const auto dir_b = fs::temp_directory_path() / "pdpl_pipeline_b2";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  const auto cfg = small_pipeline(dir_a.string());
  const auto res_a = pipeline::run_pipeline(small_problem(), cfg);
  REQUIRE(res_a.success);

  const auto res_b =
      pipeline::replay_manifest(res_a.manifest_path, dir_b.string());
  REQUIRE(res_b.success);

  for (const char* name : {"primal_data.csv", "dual_data.csv",
                           "primal.policy", "dual.policy",
                           "eval_report.json", "manifest.json"}) {
    CHECK(slurp(dir_a / name) == slurp(dir_b / name));
  }
}

TEST_CASE("retry budget exhaustion is reported as failure") {
  auto cfg = small_pipeline(
      (fs::temp_directory_path() / "pdpl_pipeline_c").string());
  cfg.t_max = 1e-9;  // unreachable certificate
  cfg.train.max_growth_retries = 1;
  cfg.train.epochs_per_stage = 10;
  cfg.train.penalty_stages = 2;
  cfg.run_eval = false;
  const auto res = pipeline::run_pipeline(small_problem(), cfg);
  CHECK_FALSE(res.success);
  CHECK(!res.message.empty());
}

TEST_SUITE_END();
