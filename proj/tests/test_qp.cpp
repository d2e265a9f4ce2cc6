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

#include "oracles.hpp"
#include "pdpl/qp.hpp"
#include "pdpl/rng.hpp"

using namespace pdpl;
using namespace pdpl::qp;
using mpc::CondensedQp;

TEST_SUITE_BEGIN("qp");

namespace {

CondensedQp scalar_qp(double Q, double c, double H, double h) {
  CondensedQp qp;
  qp.Q = Mat::Constant(1, 1, Q);
  qp.c = Vec::Constant(1, c);
  qp.H = Mat::Constant(1, 1, H);
  qp.h = Vec::Constant(1, h);
  return qp;
}

CondensedQp random_icc_qp(std::uint64_t seed) {
  const auto cfg = mpc::ProblemConfig::defaults();
  const auto P = mpc::sample_parameter(cfg.box, seed, cfg.mpc.T);
  return cfg.condense_for(P);
}

}  // namespace

TEST_CASE("inactive constraint leaves the unconstrained optimum") {
  // min u^2 - 2u s.t. u <= 1: the unconstrained optimum u = 1 sits exactly
  // on the boundary with lambda* = 0 (weakly active), so the primal point is
  // only determined to about sqrt(tol) while J* and the KKT residuals stay
  // at full precision.
  const QpSolution sol = solve_primal(scalar_qp(2.0, -2.0, 1.0, 1.0));
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.kkt.max() <= 1e-8);
  CHECK(sol.U_star(0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(sol.J_star == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(sol.lambda_star(0) <= 1e-4);

  // Pushed strictly inside (h = 2) the same data give the interior optimum
  // at machine-level accuracy.
  const QpSolution interior = solve_primal(scalar_qp(2.0, -2.0, 1.0, 2.0));
  CHECK(interior.U_star(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(interior.J_star == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(interior.lambda_star(0) <= 1e-9);
}

TEST_CASE("active constraint recovers the hand KKT point") {
  // min u^2 s.t. u >= 1: stationarity 2u - lambda = 0 at u = 1.
  const QpSolution sol = solve_primal(scalar_qp(2.0, 0.0, -1.0, -1.0));
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.U_star(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.J_star == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.lambda_star(0) == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("ICC instance matches a long projected-gradient oracle") {
  const CondensedQp qp = random_icc_qp(2026);
  const QpSolution sol = solve_primal(qp);
  REQUIRE(sol.status == SolveStatus::optimal);
  const double oracle =
      test_oracles::dual_projected_gradient(qp.Q, qp.c, qp.H, qp.h, 1000000);
  // Strong duality: the dual ascent value converges to J* from below.
  CHECK(std::abs(sol.J_star - oracle) <=
        1e-6 * std::max(1.0, std::abs(sol.J_star)));
}

TEST_CASE("small random instances match active-set enumeration") {
  for (int trial = 0; trial < 25; ++trial) {
    Mat Q, H;
    Vec c, h;
    test_oracles::random_small_qp(500 + trial, 3, 6, Q, c, H, h);
    CondensedQp qp{Q, c, H, h, 0.0};
    const QpSolution sol = solve_primal(qp);
    REQUIRE(sol.status == SolveStatus::optimal);
    const auto oracle = test_oracles::active_set_enumeration(Q, c, H, h);
    REQUIRE(oracle.feasible_found);
    CHECK(std::abs(sol.J_star - oracle.value) <=
          1e-7 * std::max(1.0, std::abs(oracle.value)));
  }
}

TEST_CASE("primal infeasibility is reported through the status") {
  // u <= -1 and -u <= -1 cannot hold together.
  CondensedQp qp;
  qp.Q = Mat::Identity(1, 1);
  qp.c = Vec::Zero(1);
  qp.H = Mat(2, 1);
  qp.H << 1.0, -1.0;
  qp.h = Vec(2);
  qp.h << -1.0, -1.0;
  const QpSolution sol = solve_primal(qp);
  CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("identical inputs give bit-identical solutions") {
  const CondensedQp qp = random_icc_qp(7);
  const QpSolution a = solve_primal(qp);
  const QpSolution b = solve_primal(qp);
  CHECK(std::memcmp(a.U_star.data(), b.U_star.data(),
                    sizeof(double) * a.U_star.size()) == 0);
  CHECK(std::memcmp(a.lambda_star.data(), b.lambda_star.data(),
                    sizeof(double) * a.lambda_star.size()) == 0);
  CHECK(std::memcmp(&a.J_star, &b.J_star, sizeof(double)) == 0);
}

TEST_CASE("dual data of the hand example") {
  const CondensedQp qp = scalar_qp(2.0, 0.0, -1.0, -1.0);
  const DualQp d = build_dual(qp);
  CHECK(d.Qt(0, 0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(d.ct(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.gt == doctest::Approx(0.0).epsilon(1e-15));
  // max over lam >= 0 of -lam^2/4 + lam is at lam = 2 with value 1 = J*.
  CHECK(eval_dual_cost(d, Vec::Constant(1, 2.0)) ==
        doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("vacuous constraints leave the unconstrained dual") {
  CondensedQp qp;
  qp.Q = Mat::Constant(1, 1, 2.0);
  qp.c = Vec::Constant(1, -2.0);
  qp.H = Mat::Zero(2, 1);
  qp.h = Vec::Constant(2, 0.5);
  const DualQp d = build_dual(qp);
  CHECK(d.Qt.cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.ct + qp.h).cwiseAbs().maxCoeff() == 0.0);  // ct = -h <= 0
  // Dual maximized at lam = 0 with the unconstrained value -c'Q^{-1}c/2.
  CHECK(eval_dual_cost(d, Vec::Zero(2)) == doctest::Approx(-1.0));
  CHECK(d.gt == doctest::Approx(-1.0));
}

TEST_CASE("strong duality across random ICC instances") {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const CondensedQp qp = random_icc_qp(3000 + trial);
    const QpSolution sol = solve_primal(qp);
    REQUIRE(sol.status == SolveStatus::optimal);
    const DualQp d = build_dual(qp);
    const double D = eval_dual_cost(d, sol.lambda_star);
    worst = std::max(worst, std::abs(sol.J_star - D) /
                                std::max(1.0, std::abs(sol.J_star)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("ill-conditioned and indefinite Q are rejected") {
  CondensedQp qp;
  qp.Q = Mat(2, 2);
  qp.Q << 1.0, 0.0, 0.0, 1e-13;
  qp.c = Vec::Zero(2);
  qp.H = Mat::Zero(1, 2);
  qp.h = Vec::Ones(1);
  CHECK_THROWS_AS(build_dual(qp), NumericalError);
  qp.Q << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(build_dual(qp), NumericalError);
}

TEST_CASE("primal cost evaluation") {
  const CondensedQp qp = scalar_qp(2.0, -2.0, 1.0, 10.0);
  CHECK(eval_primal_cost(qp, Vec::Zero(1)) == 0.0);
  CHECK(eval_primal_cost(qp, Vec::Constant(1, 1.0)) == doctest::Approx(-1.0));
  const QpSolution sol = solve_primal(qp);
  CHECK(std::abs(eval_primal_cost(qp, sol.U_star) - sol.J_star) <= 1e-12);
}

TEST_CASE("dual cost at the origin and at the optimizer") {
  const CondensedQp qp = random_icc_qp(11);
  const DualQp d = build_dual(qp);
  CHECK(eval_dual_cost(d, Vec::Zero(qp.H.rows())) == doctest::Approx(d.gt));
  const QpSolution sol = solve_primal(qp);
  CHECK(std::abs(eval_dual_cost(d, sol.lambda_star) - sol.J_star) <=
        1e-6 * std::max(1.0, std::abs(sol.J_star)));
}

TEST_CASE("kkt residuals at and away from the optimum") {
  // Exact KKT point of the hand example.
  const CondensedQp qp = scalar_qp(2.0, 0.0, -1.0, -1.0);
  {
    const KktResidual r =
        kkt_residuals(qp, Vec::Constant(1, 1.0), Vec::Constant(1, 2.0));
    CHECK(r.stationarity <= 1e-12);
    CHECK(r.primal_feas <= 1e-12);
    CHECK(r.dual_feas == 0.0);
    CHECK(r.complementarity <= 1e-12);
  }
  {
    // Perturbing U* by +0.1 moves stationarity by at least 0.1*min_eig(Q).
    const KktResidual r =
        kkt_residuals(qp, Vec::Constant(1, 1.1), Vec::Constant(1, 2.0));
    CHECK(r.stationarity >= 0.1 * 2.0 - 1e-12);
  }
  {
    // Zeroing the multiplier at an active row kills complementarity but
    // leaves a stationarity residual.
    const KktResidual r =
        kkt_residuals(qp, Vec::Constant(1, 1.0), Vec::Zero(1));
    CHECK(r.complementarity == 0.0);
    CHECK(r.stationarity > 0.0);
  }
}

TEST_CASE("weak duality fuzz on random instances") {
  SplitMix64 rng(606);
  for (int trial = 0; trial < 20; ++trial) {
    const CondensedQp qp = random_icc_qp(7000 + trial);
    const DualQp d = build_dual(qp);
    const auto cfg = mpc::ProblemConfig::defaults();
    const auto P =
        mpc::sample_parameter(cfg.box, 7000 + trial, cfg.mpc.T);
    for (int k = 0; k < 100; ++k) {
      // Constructively feasible primal point.
      Vec U(cfg.mpc.n_dec());
      Eigen::Vector3d prev = P.u_prev;
      for (int s = 0; s < cfg.mpc.T; ++s) {
        for (int j = 0; j < 3; ++j) {
          const double lo =
              std::max(-cfg.mpc.u_bar(j), prev(j) - cfg.mpc.du_bar(j));
          const double hi =
              std::min(cfg.mpc.u_bar(j), prev(j) + cfg.mpc.du_bar(j));
          U(3 * s + j) = rng.next_uniform(lo, hi);
        }
        prev = U.segment<3>(3 * s);
      }
      REQUIRE((qp.H * U - qp.h).maxCoeff() <= 1e-9);
      Vec lam(qp.H.rows());
      for (int r = 0; r < lam.size(); ++r) {
        lam(r) = rng.next_uniform(0.0, 0.01);
      }
      const double p = eval_primal_cost(qp, U);
      const double dv = eval_dual_cost(d, lam);
      const double scale = std::max({1.0, std::abs(p), std::abs(dv)});
      CHECK(dv <= p + 1e-9 * scale);
    }
  }
}

TEST_CASE("max_iters status when starved of iterations") {
  SolverConfig cfg;
  cfg.max_iters = 1;
  const QpSolution sol = solve_primal(random_icc_qp(5), cfg);
  CHECK(sol.status == SolveStatus::max_iters);
}

TEST_CASE("dimension mismatches throw") {
  CondensedQp qp = scalar_qp(2.0, 0.0, -1.0, -1.0);
  CHECK_THROWS_AS(eval_primal_cost(qp, Vec::Zero(2)), DimensionError);
  qp.c = Vec::Zero(2);
  CHECK_THROWS_AS(solve_primal(qp), DimensionError);
}

TEST_SUITE_END();
