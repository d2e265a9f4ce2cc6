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

#include <cmath>
#include <cstring>

#include "pdpl/dataset.hpp"
#include "pdpl/train.hpp"

using namespace pdpl;
using namespace pdpl::train;
using policy::Kind;
using policy::Policy;
using policy::Role;

TEST_SUITE_BEGIN("train");

namespace {

mpc::ProblemConfig tight_config() {
  // Narrow box keeps the tiny-capacity training runs fast and reliable.
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

TrainConfig quick_tc(std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs_per_stage = 60;
  tc.penalty_stages = 4;
  return tc;
}

}  // namespace

TEST_CASE("one-sample dataset is fit exactly by a one-center basis") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 1, 91);

  TrainConfig tc = quick_tc(5);
  tc.rbn_start = 1;
  Policy pol = train::make_template(Kind::rbn, Role::primal, cfg, tc, 0, 5);
  // Center the single basis on the sample itself: phi = 1 there.
  pol.rbn.centers.row(0) = ds.rows[0].p_flat.transpose();

  const TrainReport rep = train_primal(cfg, ds.rows, pol, tc);
  CHECK(rep.success);
  CHECK(rep.t_star <= 1e-9);
  CHECK(rep.max_violation <= 1e-9);
  CHECK(pol.is_certified());

  // Dual counterpart interpolates the multiplier label the same way.
  Policy dpol = train::make_template(Kind::rbn, Role::dual, cfg, tc, 0, 6);
  dpol.rbn.centers.row(0) = ds.rows[0].p_flat.transpose();
  const TrainReport drep = train_dual(cfg, ds.rows, dpol, tc);
  CHECK(drep.success);
  CHECK(drep.t_star <= 1e-9);
}

TEST_CASE("zero dual policy certifies the unconstrained-bound gap") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 32, 17);

  Policy zero;
  zero.kind = Kind::rbn;
  zero.role = Role::dual;
  TrainConfig tc = quick_tc(0);
  tc.rbn_start = 2;
  zero = train::make_template(Kind::rbn, Role::dual, cfg, tc, 0, 3);
  zero.coefficients.setZero();

  const CertCheck chk = recompute_certificate(cfg, ds.rows, zero);
  double expect = 0.0;
  for (const auto& row : ds.rows) {
    const auto P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
    const auto qp = cfg.condense_for(P);
    const qp::DualEvaluator de(qp);
    expect = std::max(expect, row.J_star - de.gt());
  }
  CHECK(chk.t_star == doctest::Approx(expect).epsilon(1e-12));
  CHECK(chk.max_violation == 0.0);
}

TEST_CASE("training is reproducible bit for bit under a fixed seed") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 200, 123);
  const TrainConfig tc = quick_tc(77);

  auto run = [&](Role role) {
    Policy pol = train::make_template(Kind::rbn, role, cfg, tc, 0, 55);
    const TrainReport rep = role == Role::primal
                                ? train_primal(cfg, ds.rows, pol, tc)
                                : train_dual(cfg, ds.rows, pol, tc);
    return std::make_pair(pol, rep);
  };
  const auto [pol_a, rep_a] = run(Role::primal);
  const auto [pol_b, rep_b] = run(Role::primal);
  CHECK(std::memcmp(&rep_a.t_star, &rep_b.t_star, sizeof(double)) == 0);
  CHECK(policy::serialize_policy(pol_a) == policy::serialize_policy(pol_b));

  const auto [dual_a, drep_a] = run(Role::dual);
  const auto [dual_b, drep_b] = run(Role::dual);
  CHECK(std::memcmp(&drep_a.t_star, &drep_b.t_star, sizeof(double)) == 0);
  CHECK(policy::serialize_policy(dual_a) == policy::serialize_policy(dual_b));
}

TEST_CASE("certified level matches an independent recomputation") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 300, 321);
  TrainConfig tc = quick_tc(8);
  tc.rbn_start = 8;

  Policy pol = train::make_template(Kind::rbn, Role::primal, cfg, tc, 0, 4);
  const TrainReport rep = train_primal(cfg, ds.rows, pol, tc);
  REQUIRE(rep.success);
  const CertCheck chk = recompute_certificate(cfg, ds.rows, pol);
  CHECK(std::abs(chk.t_star - rep.t_star) <= 1e-9);
  CHECK(chk.max_violation <= 1e-9);
  CHECK(pol.certified_t == rep.t_star);

  Policy dpol = train::make_template(Kind::rbn, Role::dual, cfg, tc, 0, 9);
  const TrainReport drep = train_dual(cfg, ds.rows, dpol, tc);
  REQUIRE(drep.success);
  const CertCheck dchk = recompute_certificate(cfg, ds.rows, dpol);
  CHECK(std::abs(dchk.t_star - drep.t_star) <= 1e-9);
}

TEST_CASE("hard feasibility on every sample after success") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 400, 55);
  TrainConfig tc = quick_tc(13);
  tc.rbn_start = 10;
  Policy pol = train::make_template(Kind::rbn, Role::primal, cfg, tc, 0, 2);
  const TrainReport rep = train_primal(cfg, ds.rows, pol, tc);
  REQUIRE(rep.success);
  for (const auto& row : ds.rows) {
    const auto P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
    const auto qp = cfg.condense_for(P);
    const Vec U = policy::eval_policy(pol, row.p_flat);
    CHECK((qp.H * U - qp.h).maxCoeff() <= 1e-9);
  }
}

TEST_CASE("refinement never worsens a feasible regression start") {
  // Convexity invariant: with fixed features the stage-2 refinement has
  // monotone acceptance, so its result cannot be worse than any feasible
  // incumbent it saw, in particular the phase-A fit when that was feasible.
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 150, 2024);
  TrainConfig tc = quick_tc(3);
  tc.rbn_start = 6;

  Policy pol = train::make_template(Kind::rbn, Role::dual, cfg, tc, 0, 31);
  Policy phase_a_only = pol;
  {
    // Phase A alone: a single stage with no refinement budget.
    TrainConfig stub = tc;
    stub.epochs_per_stage = 1;
    stub.penalty_stages = 1;
    train_dual(cfg, ds.rows, phase_a_only, stub);
  }
  const TrainReport rep = train_dual(cfg, ds.rows, pol, tc);
  REQUIRE(rep.success);
  const CertCheck base = recompute_certificate(cfg, ds.rows, phase_a_only);
  CHECK(rep.t_star <= base.t_star + 1e-9);
}

TEST_CASE("mlp capacity protocol: width 5 depth 3 growing by 5") {
  const auto cfg = mpc::ProblemConfig::defaults();
  TrainConfig tc;
  for (int attempt = 0; attempt < 3; ++attempt) {
    const Policy pol =
        train::make_template(Kind::mlp, Role::primal, cfg, tc, attempt, 1);
    REQUIRE(pol.mlp.shape.dims.size() == 4);  // depth 3 = two hidden layers
    CHECK(pol.mlp.shape.dims[0] == 20);
    CHECK(pol.mlp.shape.dims[1] == 5 + 5 * attempt);
    CHECK(pol.mlp.shape.dims[2] == 5 + 5 * attempt);
    CHECK(pol.mlp.shape.dims[3] == 9);
  }
  // Radial-basis growth starts at 10 and adds 10 per failed attempt, with
  // the earlier centers kept as a prefix under a fixed template seed.
  const Policy r0 =
      train::make_template(Kind::rbn, Role::primal, cfg, tc, 0, 9);
  const Policy r1 =
      train::make_template(Kind::rbn, Role::primal, cfg, tc, 1, 9);
  CHECK(r0.rbn.n_rb() == 10);
  CHECK(r1.rbn.n_rb() == 20);
  CHECK((r1.rbn.centers.topRows(10) - r0.rbn.centers).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("mlp training certifies on a small dataset") {
  const auto cfg = tight_config();
  const auto ds = data::generate_dataset(cfg, 150, 77);
  TrainConfig tc = quick_tc(21);
  tc.phase_a_epochs = 60;
  tc.epochs_per_stage = 80;
  Policy pol = train::make_template(Kind::mlp, Role::primal, cfg, tc, 0, 12);
  const TrainReport rep = train_primal(cfg, ds.rows, pol, tc);
  CHECK(rep.success);
  CHECK(rep.max_violation <= 1e-9);
  CHECK(std::isfinite(rep.t_star));
}

TEST_CASE("gradient check: linear network with quadratic probe is exact") {
  bounds::MlpShape shape;
  shape.dims = {4, 3};
  const auto net = policy::MlpPolicy::random_init(shape, Vec::Ones(4), 3);
  SplitMix64 rng(8);
  Vec p(4), target(3);
  for (int i = 0; i < 4; ++i) p(i) = rng.next_normal();
  for (int i = 0; i < 3; ++i) target(i) = rng.next_normal();
  const GradCheckResult res = grad_check(net, p, target);
  CHECK(res.max_rel_error <= 1e-9);
  CHECK_FALSE(res.resampled);
}

TEST_CASE("gradient check: deep relu network within 1e-4") {
  bounds::MlpShape shape;
  shape.dims = {20, 15, 15, 9};
  SplitMix64 rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = policy::MlpPolicy::random_init(
        shape, Vec::Ones(20), 100 + trial);
    Vec p(20), target(9);
    for (int i = 0; i < 20; ++i) p(i) = rng.next_normal();
    for (int i = 0; i < 9; ++i) target(i) = rng.next_normal();
    auto resample = [&](std::uint64_t) {
      Vec q(20);
      for (int i = 0; i < 20; ++i) q(i) = rng.next_normal();
      return q;
    };
    const GradCheckResult res = grad_check(net, p, target, 1e-5, 1e-6,
                                           resample);
    worst = std::max(worst, res.max_rel_error);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("gradient check reports the resampling path at a kink") {
  bounds::MlpShape shape;
  shape.dims = {2, 2, 1};
  auto net = policy::MlpPolicy::zeros(shape);
  net.weights[0] << 1.0, 0.0, 0.0, 1.0;
  net.weights[1] << 1.0, 1.0;
  // Pre-activation is exactly zero at p = 0: a deliberate kink.
  Vec p = Vec::Zero(2);
  SplitMix64 rng(5);
  auto resample = [&](std::uint64_t) {
    Vec q(2);
    q << 1.0 + rng.next_uniform(), 1.0 + rng.next_uniform();
    return q;
  };
  const GradCheckResult res =
      grad_check(net, p, Vec::Ones(1), 1e-5, 1e-6, resample);
  CHECK(res.resampled);
  CHECK(res.attempts > 1);
  CHECK(res.max_rel_error <= 1e-6);
}

TEST_SUITE_END();
