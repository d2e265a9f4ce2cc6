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

#include "pdpl/lpv_mpc.hpp"
#include "pdpl/rng.hpp"

using namespace pdpl;
using namespace pdpl::mpc;

TEST_SUITE_BEGIN("lpv_mpc");

namespace {

ParameterVector random_parameter(const ProblemConfig& cfg, std::uint64_t seed) {
  return sample_parameter(cfg.box, seed, cfg.mpc.T);
}

}  // namespace

TEST_CASE("zero step size gives the identity update") {
  VehicleParams vp;
  vp.dt = 0.0;
  const LpvMatrices sys = build_icc_matrices(vp, 10.0);
  CHECK((sys.A_d - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sys.B_d.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sys.E_d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("roll-angle row is a pure integrator of roll rate") {
  VehicleParams vp;
  const LpvMatrices sys = build_icc_matrices(vp, 10.0);
  CHECK(sys.A_d(2, 3) == doctest::Approx(vp.dt).epsilon(1e-15));
  CHECK(sys.A_d(2, 0) == 0.0);
  CHECK(sys.A_d(2, 1) == 0.0);
  CHECK(sys.A_d(2, 2) == 1.0);
}

TEST_CASE("side-slip/yaw coupling scales with 1/v^2") {
  VehicleParams vp;
  const LpvMatrices at10 = build_icc_matrices(vp, 10.0);
  const LpvMatrices at20 = build_icc_matrices(vp, 20.0);
  // Entry (0,1) of A_c is -1 + I_x*C1/(f v^2); strip the constant parts.
  auto coupling = [&](const LpvMatrices& sys) {
    const double a_c = (sys.A_d(0, 1) - 0.0) / vp.dt;  // A_d = I + A_c dt
    return a_c + 1.0;                                  // the 1/v^2 term
  };
  CHECK(coupling(at10) / coupling(at20) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("model entries are continuous in velocity") {
  VehicleParams vp;
  // Finite-difference continuity probe across the velocity interval.
  for (double v = 3.0; v < 25.0; v += 0.5) {
    const LpvMatrices a = build_icc_matrices(vp, v);
    const LpvMatrices b = build_icc_matrices(vp, v + 1e-6);
    CHECK((a.A_d - b.A_d).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((a.B_d - b.B_d).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((a.E_d - b.E_d).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("degenerate model inputs are rejected") {
  VehicleParams vp;
  CHECK_THROWS_AS(build_icc_matrices(vp, 0.0), NumericalError);
  vp.m = 1.0;  // makes m*I_x - m_s^2 h_s^2 negative but far from zero
  vp.I_x = vp.m_s * vp.m_s * vp.h_s * vp.h_s / vp.m;  // exactly degenerate
  CHECK_THROWS_AS(build_icc_matrices(vp, 10.0), NumericalError);
}

TEST_CASE("scalar sanity instance condenses by hand") {
  // 1-state/1-input x+ = x + u, T = 1, cost (x1)^2 + u^2:
  // (x0 + u)^2 + u^2 = 1/2*4*u^2 + 2*x0*u + x0^2.
  const Mat A = Mat::Constant(1, 1, 1.0);
  const Mat B = Mat::Constant(1, 1, 1.0);
  const Mat E = Mat::Zero(1, 1);
  const Mat C = Mat::Constant(1, 1, 1.0);
  const Mat Qs = Mat::Constant(1, 1, 1.0);
  const Mat Rs = Mat::Constant(1, 1, 1.0);
  const Vec u_bar = Vec::Constant(1, 1e9);
  const Vec du_bar = Vec::Constant(1, 1e9);
  const double x0 = 0.7;

  const CondensedQp qp = condense_system(
      A, B, E, C, Qs, Rs, u_bar, du_bar, std::nullopt,
      Vec::Constant(1, x0), Mat::Zero(1, 1), Vec::Zero(1), Vec::Zero(1));

  CHECK(qp.Q(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(qp.c(0) == doctest::Approx(2.0 * x0).epsilon(1e-15));
  CHECK(qp.const_offset == doctest::Approx(x0 * x0).epsilon(1e-15));
}

TEST_CASE("zero u_prev with du_bar = u_bar makes first rate rows redundant") {
  ProblemConfig cfg = ProblemConfig::defaults();
  cfg.mpc.du_bar = cfg.mpc.u_bar;
  ParameterVector P = random_parameter(cfg, 5);
  P.u_prev.setZero();
  const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
  const int n = cfg.mpc.n_dec();
  // Rate rows for k = 0 duplicate the input rows: same coefficients, same h.
  for (int j = 0; j < kNu; ++j) {
    CHECK((qp.H.row(2 * n + j) - qp.H.row(j)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(qp.h(2 * n + j) == qp.h(j));
    CHECK((qp.H.row(3 * n + j) - qp.H.row(n + j)).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(qp.h(3 * n + j) == qp.h(n + j));
  }
}

TEST_CASE("condensed objective equals the simulated tracking objective") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  SplitMix64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const ParameterVector P = random_parameter(cfg, 1000 + trial);
    const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
    for (int k = 0; k < 10; ++k) {
      Vec U(cfg.mpc.n_dec());
      for (int i = 0; i < U.size(); ++i) {
        U(i) = rng.next_uniform(-2000.0, 2000.0);
      }
      const double via_qp = 0.5 * U.dot(qp.Q * U) + qp.c.dot(U) +
                            qp.const_offset;
      const double via_sim = simulate_objective(cfg.mpc, cfg.vehicle, P, U);
      CHECK(std::abs(via_qp - via_sim) <=
            1e-10 * std::max(1.0, std::abs(via_sim)));
    }
  }
}

TEST_CASE("feasible sequences respect the bounds when rolled out") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  SplitMix64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const ParameterVector P = random_parameter(cfg, 400 + trial);
    const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
    // Constructively feasible: walk each step inside the intersected boxes.
    Vec U(cfg.mpc.n_dec());
    Eigen::Vector3d prev = P.u_prev;
    for (int k = 0; k < cfg.mpc.T; ++k) {
      for (int j = 0; j < kNu; ++j) {
        const double lo = std::max(-cfg.mpc.u_bar(j),
                                   prev(j) - cfg.mpc.du_bar(j));
        const double hi =
            std::min(cfg.mpc.u_bar(j), prev(j) + cfg.mpc.du_bar(j));
        U(kNu * k + j) = rng.next_uniform(lo, hi);
      }
      prev = U.segment<kNu>(kNu * k);
    }
    CHECK((qp.H * U - qp.h).maxCoeff() <= 1e-9);
    // Roll out and check the physical bounds directly.
    prev = P.u_prev;
    for (int k = 0; k < cfg.mpc.T; ++k) {
      const Eigen::Vector3d u = U.segment<kNu>(kNu * k);
      CHECK((u.cwiseAbs() - cfg.mpc.u_bar).maxCoeff() <= 1e-9);
      CHECK(((u - prev).cwiseAbs() - cfg.mpc.du_bar).maxCoeff() <= 1e-9);
      prev = u;
    }
  }
}

TEST_CASE("condensed Q is symmetric positive definite") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  const double min_eig_R =
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cfg.mpc.R_s)
          .eigenvalues()
          .minCoeff();
  for (int trial = 0; trial < 50; ++trial) {
    const ParameterVector P = random_parameter(cfg, 9000 + trial);
    const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
    CHECK((qp.Q - qp.Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> es(qp.Q);
    CHECK(es.eigenvalues().minCoeff() >= min_eig_R - 1e-9);
  }
}

TEST_CASE("row ordering contract of (H, h)") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  const ParameterVector P = random_parameter(cfg, 321);
  const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
  const int n = cfg.mpc.n_dec();
  REQUIRE(qp.H.rows() == 4 * n);
  for (int k = 0; k < cfg.mpc.T; ++k) {
    for (int j = 0; j < kNu; ++j) {
      const int col = kNu * k + j;
      // Input upper rows then input lower rows: unit coefficients.
      CHECK(qp.H(col, col) == 1.0);
      CHECK(qp.h(col) == cfg.mpc.u_bar(j));
      CHECK(qp.H(n + col, col) == -1.0);
      CHECK(qp.h(n + col) == cfg.mpc.u_bar(j));
      // Rate rows: first difference against u_{k-1} (u_prev at k = 0).
      CHECK(qp.H(2 * n + col, col) == 1.0);
      CHECK(qp.H(3 * n + col, col) == -1.0);
      if (k == 0) {
        CHECK(qp.h(2 * n + col) ==
              doctest::Approx(cfg.mpc.du_bar(j) + P.u_prev(j)));
        CHECK(qp.h(3 * n + col) ==
              doctest::Approx(cfg.mpc.du_bar(j) - P.u_prev(j)));
      } else {
        CHECK(qp.H(2 * n + col, col - kNu) == -1.0);
        CHECK(qp.H(3 * n + col, col - kNu) == 1.0);
        CHECK(qp.h(2 * n + col) == cfg.mpc.du_bar(j));
        CHECK(qp.h(3 * n + col) == cfg.mpc.du_bar(j));
      }
    }
  }
}

TEST_CASE("terminal half-spaces append after the input rows") {
  ProblemConfig cfg = ProblemConfig::defaults();
  Mat F(2, 4);
  F << 1, 0, 0, 0, -1, 0, 0, 0;
  Vec f(2);
  f << 10.0, 10.0;
  cfg.mpc.terminal = std::make_pair(F, f);
  const ParameterVector P = random_parameter(cfg, 7);
  const CondensedQp qp = condense(cfg.mpc, cfg.vehicle, P);
  REQUIRE(qp.H.rows() == 4 * cfg.mpc.n_dec() + 2);

  // The terminal rows must bound F x_T: verify against a rollout.
  SplitMix64 rng(8);
  Vec U(cfg.mpc.n_dec());
  for (int i = 0; i < U.size(); ++i) U(i) = rng.next_uniform(-500.0, 500.0);
  const LpvMatrices sys = build_icc_matrices(cfg.vehicle, P.v);
  Eigen::Vector4d x = P.x0;
  for (int k = 0; k < cfg.mpc.T; ++k) {
    x = sys.A_d * x + sys.B_d * U.segment<3>(3 * k) + sys.E_d * P.delta(k);
  }
  // H_term U - (h_term - f) reconstructs F x_T.
  const Vec lhs = qp.H.bottomRows(2) * U;
  const Vec rhs_direct = F * x;
  for (int r = 0; r < 2; ++r) {
    CHECK(lhs(r) - (qp.h(4 * cfg.mpc.n_dec() + r) - f(r)) ==
          doctest::Approx(rhs_direct(r)).epsilon(1e-9));
  }
}

TEST_CASE("sampling: degenerate box returns its midpoint") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  ParameterBox box = cfg.box;
  box.lower = box.mid();
  box.upper = box.lower;
  const Vec p = sample_parameter_flat(box, 12345);
  CHECK((p - box.lower).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampling: deterministic in the seed") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  const Vec a = sample_parameter_flat(cfg.box, 42);
  const Vec b = sample_parameter_flat(cfg.box, 42);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  const Vec c = sample_parameter_flat(cfg.box, 43);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("sampling: componentwise mean matches the box midpoint") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  const int n = 100000;
  Vec mean = Vec::Zero(cfg.box.dim());
  for (int i = 0; i < n; ++i) {
    mean += sample_parameter_flat(cfg.box, substream_seed(5150, i));
  }
  mean /= n;
  const Vec hw = cfg.box.half_width();
  const Vec mid = cfg.box.mid();
  for (int d = 0; d < cfg.box.dim(); ++d) {
    if (hw(d) == 0.0) continue;
    // Standard error of a uniform mean: hw/sqrt(3n); allow three of them.
    const double se = hw(d) / std::sqrt(3.0 * n);
    CHECK(std::abs(mean(d) - mid(d)) <= 3.0 * se);
  }
}

TEST_CASE("parameter flattening round trip and dimension") {
  const ProblemConfig cfg = ProblemConfig::defaults();
  CHECK(ParameterVector::flat_dim(3) == 20);
  const ParameterVector P = random_parameter(cfg, 99);
  const Vec flat = P.flatten();
  const ParameterVector back = ParameterVector::unflatten(flat, cfg.mpc.T);
  CHECK((back.flatten() - flat).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(ParameterVector::unflatten(Vec::Zero(19), 3),
                  DimensionError);
}

TEST_CASE("config file parsing, hashing and validation") {
  const std::string ini = R"(
# test config
[vehicle]
m = 1900
dt = 0.01

[mpc]
q_s = 2000, 400, 2000
u_bar = 2500, 2500, 2500

[box]
v = 5, 20
)";
  const ProblemConfig cfg = ProblemConfig::from_ini_text(ini);
  CHECK(cfg.vehicle.m == 1900);
  CHECK(cfg.mpc.u_bar(0) == 2500);
  CHECK(cfg.box.lower(kNx) == 5.0);
  CHECK(cfg.box.upper(kNx) == 20.0);

  // Hash must be stable and sensitive to every field.
  const ProblemConfig cfg2 = ProblemConfig::from_ini_text(ini);
  CHECK(cfg.hash_hex() == cfg2.hash_hex());
  CHECK(cfg.hash_hex() != ProblemConfig::defaults().hash_hex());

  CHECK_THROWS_AS(ProblemConfig::from_ini_text("[vehicle]\nbogus = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(ProblemConfig::from_ini_text("[box]\nv = -1, 20\n"),
                  ConfigError);
  CHECK_THROWS_AS(
      ProblemConfig::from_ini_text("[mpc]\nu_bar = -1, 1, 1\n"), ConfigError);
}

TEST_SUITE_END();
