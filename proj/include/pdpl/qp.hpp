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

#ifndef PDPL_QP_HPP_
#define PDPL_QP_HPP_

#include "pdpl/common.hpp"
#include "pdpl/lpv_mpc.hpp"

namespace pdpl::qp {

using mpc::CondensedQp;

/// Explicit dual of the condensed QP:
///   max over lam >= 0 of 1/2 lam'Qt lam + ct'lam + gt
/// with Qt = -H Q^{-1} H', ct = -H Q^{-1} c - h, gt = -1/2 c'Q^{-1} c.
struct DualQp {
  Mat Qt;
  Vec ct;
  double gt = 0.0;
};

struct KktResidual {
  double stationarity = 0.0;    // ||QU + c + H'lam||_inf
  double primal_feas = 0.0;     // max(HU - h, 0)
  double dual_feas = 0.0;       // max(-lam, 0)
  double complementarity = 0.0; // ||lam .* (HU - h)||_inf

  double max() const;
};

enum class SolveStatus { optimal, infeasible, max_iters };

const char* to_string(SolveStatus s);

struct QpSolution {
  Vec U_star;
  Vec lambda_star;
  double J_star = 0.0;
  SolveStatus status = SolveStatus::max_iters;
  KktResidual kkt;
  int iters = 0;
};

struct SolverConfig {
  double tol = 1e-8;
  int max_iters = 50;
  double regularization = 1e-10;

  void validate() const;
};

/// Dense primal-dual interior-point solve (Mehrotra predictor-corrector).
/// Infeasibility is reported through `status`, never thrown; the returned
/// multipliers are the dual optimizer when status == optimal.
QpSolution solve_primal(const CondensedQp& qp, const SolverConfig& cfg = {});

/// Builds the explicit dual data. Throws NumericalError when Q is not
/// symmetric positive definite or its condition number exceeds 1e12.
DualQp build_dual(const CondensedQp& qp);

/// p(P; U) = 1/2 U'QU + c'U (no constant term).
double eval_primal_cost(const CondensedQp& qp, const Vec& U);

/// d(P; lam) = 1/2 lam'Qt lam + ct'lam + gt.
double eval_dual_cost(const DualQp& dqp, const Vec& lam);

KktResidual kkt_residuals(const CondensedQp& qp, const Vec& U, const Vec& lam);
inline KktResidual kkt_residuals(const CondensedQp& qp, const QpSolution& sol) {
  return kkt_residuals(qp, sol.U_star, sol.lambda_star);
}

/// Dual objective and gradient without materializing Qt, via a cached
/// Cholesky factor of Q: d = -1/2 w'Q^{-1}w - lam'h with w = c + H'lam.
/// This is the arithmetic the online certification path runs.
class DualEvaluator {
 public:
  explicit DualEvaluator(const CondensedQp& qp);

  double value(const Vec& lam) const;
  Vec gradient(const Vec& lam) const;
  double gt() const { return gt_; }

 private:
  const CondensedQp* qp_;
  Eigen::LLT<Mat> llt_;
  double gt_ = 0.0;
};

}  // namespace pdpl::qp

#endif  // PDPL_QP_HPP_
