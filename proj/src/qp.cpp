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

#include "pdpl/qp.hpp"

#include <algorithm>
#include <cmath>

namespace pdpl::qp {

double KktResidual::max() const {
  return std::max(std::max(stationarity, primal_feas),
                  std::max(dual_feas, complementarity));
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iters: return "max_iters";
  }
  return "unknown";
}

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ConfigError("solver tol must be positive");
  if (max_iters < 1) throw ConfigError("solver max_iters must be >= 1");
  if (regularization < 0.0) throw ConfigError("regularization must be >= 0");
}

double eval_primal_cost(const CondensedQp& qp, const Vec& U) {
  if (U.size() != qp.Q.rows() || qp.c.size() != qp.Q.rows()) {
    throw DimensionError("eval_primal_cost: dimension mismatch");
  }
  return 0.5 * U.dot(qp.Q * U) + qp.c.dot(U);
}

double eval_dual_cost(const DualQp& dqp, const Vec& lam) {
  if (lam.size() != dqp.Qt.rows() || dqp.ct.size() != dqp.Qt.rows()) {
    throw DimensionError("eval_dual_cost: dimension mismatch");
  }
  return 0.5 * lam.dot(dqp.Qt * lam) + dqp.ct.dot(lam) + dqp.gt;
}

KktResidual kkt_residuals(const CondensedQp& qp, const Vec& U, const Vec& lam) {
  if (U.size() != qp.Q.rows() || lam.size() != qp.H.rows()) {
    throw DimensionError("kkt_residuals: dimension mismatch");
  }
  KktResidual r;
  r.stationarity = (qp.Q * U + qp.c + qp.H.transpose() * lam)
                       .cwiseAbs()
                       .maxCoeff();
  const Vec slack_viol = qp.H * U - qp.h;
  r.primal_feas = std::max(0.0, slack_viol.maxCoeff());
  r.dual_feas = std::max(0.0, (-lam).maxCoeff());
  r.complementarity = (lam.array() * slack_viol.array()).abs().maxCoeff();
  return r;
}

DualQp build_dual(const CondensedQp& qp) {
  const auto n = qp.Q.rows();
  if (qp.Q.cols() != n || qp.c.size() != n || qp.H.cols() != n ||
      qp.h.size() != qp.H.rows()) {
    throw DimensionError("build_dual: dimension mismatch");
  }
  if ((qp.Q - qp.Q.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, qp.Q.cwiseAbs().maxCoeff())) {
    throw NumericalError("build_dual: Q is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(qp.Q);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) {
    throw NumericalError("build_dual: Q is not positive definite");
  }
  if (hi / lo > 1e12) {
    throw NumericalError("build_dual: Q condition number exceeds 1e12");
  }
  const Eigen::LLT<Mat> llt(qp.Q);
  const Mat Qinv_Ht = llt.solve(qp.H.transpose());
  const Vec Qinv_c = llt.solve(qp.c);

  DualQp d;
  d.Qt = -(qp.H * Qinv_Ht);
  d.Qt = 0.5 * (d.Qt + d.Qt.transpose().eval());
  d.ct = -(qp.H * Qinv_c) - qp.h;
  d.gt = -0.5 * qp.c.dot(Qinv_c);
  return d;
}

DualEvaluator::DualEvaluator(const CondensedQp& qp) : qp_(&qp), llt_(qp.Q) {
  if (llt_.info() != Eigen::Success) {
    throw NumericalError("DualEvaluator: Q is not positive definite");
  }
  gt_ = -0.5 * qp.c.dot(llt_.solve(qp.c));
}

double DualEvaluator::value(const Vec& lam) const {
  const Vec w = qp_->c + qp_->H.transpose() * lam;
  return -0.5 * w.dot(llt_.solve(w)) - lam.dot(qp_->h);
}

Vec DualEvaluator::gradient(const Vec& lam) const {
  const Vec w = qp_->c + qp_->H.transpose() * lam;
  return -(qp_->H * llt_.solve(w)) - qp_->h;
}

// ---------------------------------------------------------------------------
// Mehrotra predictor-corrector on
//   min 1/2 x'Qx + c'x  s.t.  Hx + s = h, s >= 0, lam >= 0.
// The Newton system is reduced to (Q + H' D H) dx = rhs with D = lam/s.
// ---------------------------------------------------------------------------

QpSolution solve_primal(const CondensedQp& qp, const SolverConfig& cfg) {
  cfg.validate();
  const auto n = qp.Q.rows();
  const auto m = qp.H.rows();
  if (qp.Q.cols() != n || qp.c.size() != n || qp.H.cols() != n ||
      qp.h.size() != m) {
    throw DimensionError("solve_primal: dimension mismatch");
  }

  QpSolution sol;
  sol.U_star = Vec::Zero(n);
  sol.lambda_star = Vec::Zero(m);

  Eigen::LLT<Mat> lltQ(qp.Q);
  if (lltQ.info() != Eigen::Success) {
    throw NumericalError("solve_primal: Q is not positive definite");
  }

  // Unconstrained minimizer as the primal start.
  Vec x = -lltQ.solve(qp.c);

  if (m == 0) {
    sol.U_star = x;
    sol.lambda_star = Vec::Zero(0);
    sol.J_star = eval_primal_cost(qp, x);
    sol.status = SolveStatus::optimal;
    sol.kkt = KktResidual{};
    return sol;
  }

  const double h_scale = std::max(1.0, qp.h.cwiseAbs().maxCoeff());
  const double s_floor = 1e-3 * h_scale;

  Vec s = (qp.h - qp.H * x).cwiseMax(s_floor);
  const double obj_scale =
      std::max(1.0, std::abs(eval_primal_cost(qp, x)));
  Vec lam = Vec::Constant(m, obj_scale / (static_cast<double>(m) * h_scale));

  Vec rd(n), rp(m), dx(n), dlam(m), ds(m);
  Vec dx_aff(n), dlam_aff(m), ds_aff(m);
  Mat K(n, n);

  const double tau = 0.995;  // fraction-to-boundary
  auto step_length = [&](const Vec& z, const Vec& dz) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (dz(i) < 0.0) a = std::min(a, -tau * z(i) / dz(i));
    }
    return a;
  };

  auto solve_newton = [&](const Vec& rcomp, Vec& out_dx, Vec& out_dlam,
                          Vec& out_ds) {
    // D = lam/s, capped to keep the normal matrix finite near the boundary.
    Vec D(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      D(i) = std::min(lam(i) / std::max(s(i), 1e-300), 1e14);
    }
    K = qp.Q;
    K.diagonal().array() += cfg.regularization;
    K.noalias() += qp.H.transpose() * D.asDiagonal() * qp.H;
    Eigen::LLT<Mat> lltK(K);
    if (lltK.info() != Eigen::Success) {
      K.diagonal().array() += 1e-8 * K.diagonal().maxCoeff();
      lltK.compute(K);
    }
    // rhs = -rd - H'(D rp - rcomp/s)
    const Vec tmp = D.asDiagonal() * rp - (rcomp.array() / s.array()).matrix();
    out_dx = lltK.solve(-rd - qp.H.transpose() * tmp);
    out_dlam = (D.asDiagonal() * (qp.H * out_dx + rp)) -
               (rcomp.array() / s.array()).matrix();
    out_ds = -rp - qp.H * out_dx;
  };

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    rd = qp.Q * x + qp.c + qp.H.transpose() * lam;
    rp = qp.H * x + s - qp.h;
    const double mu = s.dot(lam) / static_cast<double>(m);

    sol.kkt = kkt_residuals(qp, x, lam);
    sol.iters = iter;
    // Terminate below 0.3x the contract tolerance; Mehrotra converges
    // superlinearly here, so the extra iteration buys a wide margin.
    if (sol.kkt.max() <= 0.3 * cfg.tol && mu <= 0.3 * cfg.tol) {
      sol.status = SolveStatus::optimal;
      break;
    }

    // Primal infeasibility <=> dual unboundedness. The scaled multipliers
    // approach a Farkas certificate: H'y ~ 0, h'y < 0, y >= 0.
    const double lam_norm = lam.lpNorm<1>();
    if (lam_norm > 1e8 * obj_scale / h_scale) {
      const Vec y = lam / lam_norm;
      const double farkas_res = (qp.H.transpose() * y).cwiseAbs().maxCoeff();
      const double farkas_gap = qp.h.dot(y);
      if (farkas_res < 1e-6 && farkas_gap < -1e-10 * h_scale) {
        sol.status = SolveStatus::infeasible;
        break;
      }
    }

    // Predictor (affine scaling) direction.
    Vec rcomp = (lam.array() * s.array()).matrix();
    solve_newton(rcomp, dx_aff, dlam_aff, ds_aff);

    const double a_pri_aff = step_length(s, ds_aff);
    const double a_dua_aff = step_length(lam, dlam_aff);
    const double mu_aff = (s + a_pri_aff * ds_aff)
                              .dot(lam + a_dua_aff * dlam_aff) /
                          static_cast<double>(m);
    const double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3);

    // Corrector with centering.
    rcomp = (lam.array() * s.array() + dlam_aff.array() * ds_aff.array() -
             sigma * mu)
                .matrix();
    solve_newton(rcomp, dx, dlam, ds);

    const double a_pri = step_length(s, ds);
    const double a_dua = step_length(lam, dlam);
    x += a_pri * dx;
    s += a_pri * ds;
    lam += a_dua * dlam;

    sol.iters = iter + 1;
    if (sol.iters == cfg.max_iters) {
      sol.kkt = kkt_residuals(qp, x, lam);
      sol.status = sol.kkt.max() <= cfg.tol ? SolveStatus::optimal
                                            : SolveStatus::max_iters;
    }
  }

  sol.U_star = x;
  sol.lambda_star = lam.cwiseMax(0.0);
  sol.J_star = eval_primal_cost(qp, x);
  if (sol.status == SolveStatus::optimal) {
    sol.kkt = kkt_residuals(qp, sol.U_star, sol.lambda_star);
  }
  return sol;
}

}  // namespace pdpl::qp
