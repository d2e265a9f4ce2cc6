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

#include "pdpl/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pdpl/parallel.hpp"
#include "pdpl/rng.hpp"

namespace pdpl::train {

using policy::Kind;
using policy::Policy;
using policy::Role;

void TrainConfig::validate() const {
  if (!(penalty_init > 0.0) || !(penalty_growth > 1.0) || penalty_stages < 1 ||
      !(learning_rate > 0.0) || !(lr_decay > 0.0) || epochs_per_stage < 1 ||
      batch_size < 1 || phase_a_epochs < 0 || feasibility_margin < 0.0 ||
      !(t_max > 0.0) || rbn_start < 1 || rbn_increment < 1 ||
      mlp_start_width < 1 || mlp_depth < 2 || mlp_width_increment < 1 ||
      max_growth_retries < 0) {
    throw ConfigError("invalid TrainConfig");
  }
}

namespace {

// ---------------------------------------------------------------------------
// Per-sample cache. Q is kept as its Cholesky factor L so both the primal
// cost 1/2 ||L'U||^2 + c'U and the dual cost -1/2 ||L^{-1}w||^2 - lam'h can
// be evaluated without materializing Q or its inverse.
// ---------------------------------------------------------------------------

struct SampleCache {
  Mat L;   // lower Cholesky factor of Q
  Vec c;
  Vec h;
  double J_star = 0.0;
  Vec U_star;
  Vec lambda_star;
  Vec features;  // rbn only
};

struct TrainData {
  std::vector<SampleCache> samples;
  Mat H_shared;
  std::vector<Mat> H_each;  // only filled when rows differ across samples
  int n = 0;
  int m = 0;
  Vec p_mid;       // box midpoints / halfwidths for sanity-scaled init
  Vec p_halfwidth;
  std::vector<Vec> p_flats;
  Vec out_scale;   // per-output-row label magnitude

  const Mat& H(std::size_t i) const {
    return H_each.empty() ? H_shared : H_each[i];
  }
};

TrainData build_cache(const mpc::ProblemConfig& cfg,
                      const std::vector<SampleRow>& data, const Policy& pol) {
  if (data.empty()) throw DimensionError("training data is empty");
  TrainData td;
  td.n = cfg.mpc.n_dec();
  td.m = cfg.mpc.n_rows();
  td.samples.resize(data.size());
  td.p_flats.resize(data.size());
  td.p_mid = cfg.box.mid();
  td.p_halfwidth = cfg.box.half_width();
  const bool varying_rows = cfg.mpc.terminal.has_value();
  if (varying_rows) td.H_each.resize(data.size());

  const bool want_features = pol.kind == Kind::rbn;
  par::parallel_for(data.size(), [&](std::size_t i) {
    const SampleRow& row = data[i];
    const auto P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
    const mpc::CondensedQp qp = cfg.condense_for(P);
    SampleCache& sc = td.samples[i];
    Eigen::LLT<Mat> llt(qp.Q);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("training cache: Q not positive definite");
    }
    sc.L = llt.matrixL();
    sc.c = qp.c;
    sc.h = qp.h;
    sc.J_star = row.J_star;
    sc.U_star = row.U_star;
    sc.lambda_star = row.lambda_star;
    td.p_flats[i] = row.p_flat;
    if (want_features) sc.features = policy::rbn_features(pol.rbn, row.p_flat);
    if (varying_rows) td.H_each[i] = qp.H;
    if (i == 0 && !varying_rows) td.H_shared = qp.H;
  });
  if (varying_rows) {
    td.H_shared = td.H_each[0];
  } else if (td.H_shared.rows() == 0) {
    const auto P = mpc::ParameterVector::unflatten(data[0].p_flat, cfg.mpc.T);
    td.H_shared = cfg.condense_for(P).H;
  }

  // Per-output-row label magnitude; rows whose label is uniformly tiny are
  // floored against the global scale so the optimizer can still move them.
  const Eigen::Index out_dim =
      pol.role == Role::primal ? td.n : td.m;
  td.out_scale = Vec::Zero(out_dim);
  for (const SampleRow& row : data) {
    const Vec& y = pol.role == Role::primal ? row.U_star : row.lambda_star;
    td.out_scale = td.out_scale.cwiseMax(y.cwiseAbs());
  }
  const double global = std::max(td.out_scale.maxCoeff(), 1e-9);
  td.out_scale = td.out_scale.cwiseMax(0.05 * global);
  return td;
}

// Per-parameter magnitude used to run the optimizer in normalized variables:
// coefficients feeding output row r inherit that row's label scale.
Vec build_param_scale(const Policy& pol, const TrainData& td) {
  if (pol.kind == Kind::rbn) {
    const Eigen::Index n_rb = pol.coefficients.cols();
    Vec s(pol.coefficients.size());
    for (Eigen::Index r = 0; r < pol.coefficients.rows(); ++r) {
      s.segment(r * n_rb, n_rb).setConstant(td.out_scale(r));
    }
    return s;
  }
  Vec s = Vec::Ones(static_cast<Eigen::Index>(pol.param_count()));
  Eigen::Index at = 0;
  const std::size_t L = pol.mlp.weights.size();
  for (std::size_t l = 0; l + 1 < L; ++l) {
    at += pol.mlp.weights[l].size() + pol.mlp.biases[l].size();
  }
  const Mat& WL = pol.mlp.weights[L - 1];
  for (Eigen::Index r = 0; r < WL.rows(); ++r) {
    s.segment(at + r * WL.cols(), WL.cols()).setConstant(td.out_scale(r));
  }
  s.segment(at + WL.size(), WL.rows()) = td.out_scale;
  return s;
}

// ---------------------------------------------------------------------------
// Flat parameter vector <-> policy parameters
// ---------------------------------------------------------------------------

Eigen::Index pack_size(const Policy& pol) {
  return static_cast<Eigen::Index>(pol.param_count());
}

Vec pack_params(const Policy& pol) {
  Vec theta(pack_size(pol));
  Eigen::Index at = 0;
  if (pol.kind == Kind::rbn) {
    for (Eigen::Index r = 0; r < pol.coefficients.rows(); ++r) {
      for (Eigen::Index c = 0; c < pol.coefficients.cols(); ++c) {
        theta(at++) = pol.coefficients(r, c);
      }
    }
  } else {
    for (std::size_t l = 0; l < pol.mlp.weights.size(); ++l) {
      const Mat& W = pol.mlp.weights[l];
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        for (Eigen::Index c = 0; c < W.cols(); ++c) theta(at++) = W(r, c);
      }
      const Vec& b = pol.mlp.biases[l];
      for (Eigen::Index i = 0; i < b.size(); ++i) theta(at++) = b(i);
    }
  }
  return theta;
}

void unpack_params(const Vec& theta, Policy& pol) {
  Eigen::Index at = 0;
  if (pol.kind == Kind::rbn) {
    for (Eigen::Index r = 0; r < pol.coefficients.rows(); ++r) {
      for (Eigen::Index c = 0; c < pol.coefficients.cols(); ++c) {
        pol.coefficients(r, c) = theta(at++);
      }
    }
  } else {
    for (std::size_t l = 0; l < pol.mlp.weights.size(); ++l) {
      Mat& W = pol.mlp.weights[l];
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = theta(at++);
      }
      Vec& b = pol.mlp.biases[l];
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = theta(at++);
    }
  }
}

// Policy output and parameter-gradient chain for one sample.
Vec forward_sample(const Policy& pol, const TrainData& td, std::size_t i) {
  if (pol.kind == Kind::rbn) return pol.coefficients * td.samples[i].features;
  return pol.mlp.forward(td.p_flats[i]);
}

// Accumulates d(loss)/d(theta) for sample i given g = d(loss)/d(raw output).
void backprop_sample(const Policy& pol, const TrainData& td, std::size_t i,
                     const Vec& g, Vec& grad) {
  if (pol.kind == Kind::rbn) {
    const Vec& phi = td.samples[i].features;
    const Eigen::Index n_rb = phi.size();
    for (Eigen::Index r = 0; r < g.size(); ++r) {
      grad.segment(r * n_rb, n_rb) += g(r) * phi;
    }
    return;
  }
  const policy::MlpPolicy& net = pol.mlp;
  const std::size_t L = net.weights.size();
  std::vector<Vec> acts(L + 1);
  std::vector<Vec> pre(L);
  acts[0] = td.p_flats[i];
  for (std::size_t l = 0; l < L; ++l) {
    pre[l] = net.weights[l] * acts[l] + net.biases[l];
    acts[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0) : pre[l];
  }
  // Flat layout mirrors pack_params: per layer W row-major then b.
  std::vector<Eigen::Index> offs(L);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offs[l] = at;
    at += net.weights[l].size() + net.biases[l].size();
  }
  Vec delta = g;
  for (std::size_t l = L; l-- > 0;) {
    const Mat& W = net.weights[l];
    Eigen::Index base = offs[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      grad.segment(base + r * W.cols(), W.cols()) += delta(r) * acts[l];
    }
    grad.segment(base + W.size(), delta.size()) += delta;
    if (l > 0) {
      Vec next = W.transpose() * delta;
      for (Eigen::Index k = 0; k < next.size(); ++k) {
        if (pre[l - 1](k) <= 0.0) next(k) = 0.0;
      }
      delta = std::move(next);
    }
  }
}

// ---------------------------------------------------------------------------
// Per-sample losses
// ---------------------------------------------------------------------------

double primal_cost(const SampleCache& sc, const Vec& U) {
  const Vec LtU = sc.L.transpose() * U;
  return 0.5 * LtU.squaredNorm() + sc.c.dot(U);
}

Vec primal_cost_grad(const SampleCache& sc, const Vec& U) {
  return sc.L * (sc.L.transpose() * U) + sc.c;
}

double dual_cost(const SampleCache& sc, const Vec& lam, const Mat& H) {
  Vec w = sc.c + H.transpose() * lam;
  sc.L.triangularView<Eigen::Lower>().solveInPlace(w);
  return -0.5 * w.squaredNorm() - lam.dot(sc.h);
}

Vec dual_cost_grad(const SampleCache& sc, const Vec& lam, const Mat& H) {
  Vec w = sc.c + H.transpose() * lam;
  sc.L.triangularView<Eigen::Lower>().solveInPlace(w);
  sc.L.transpose().triangularView<Eigen::Upper>().solveInPlace(w);
  return -(H * w) - sc.h;
}

struct SampleEval {
  double subopt = 0.0;
  double max_viol = -std::numeric_limits<double>::infinity();
  double penalty = 0.0;
};

// Primal sample: suboptimality p - J* and constraint violations of H U <= h.
// The penalty hinge works on row-scale-normalized violations with a relative
// margin, so rows with bounds of a few thousand and rows near zero are pushed
// with comparable force.
SampleEval eval_primal_sample(const Policy& pol, const TrainData& td,
                              std::size_t i, double margin) {
  const SampleCache& sc = td.samples[i];
  const Vec U = forward_sample(pol, td, i);
  SampleEval ev;
  ev.subopt = primal_cost(sc, U) - sc.J_star;
  const Vec viol = td.H(i) * U - sc.h;
  ev.max_viol = viol.maxCoeff();
  for (Eigen::Index r = 0; r < viol.size(); ++r) {
    const double scale = std::max(1.0, std::abs(sc.h(r)));
    const double a = viol(r) / scale + margin;
    if (a > 0.0) ev.penalty += a * a;
  }
  return ev;
}

// Dual sample: certified-bound gap J* - d at the clamped output.
SampleEval eval_dual_sample(const Policy& pol, const TrainData& td,
                            std::size_t i) {
  const SampleCache& sc = td.samples[i];
  const Vec lam = forward_sample(pol, td, i).cwiseMax(0.0);
  SampleEval ev;
  ev.subopt = sc.J_star - dual_cost(sc, lam, td.H(i));
  ev.max_viol = 0.0;  // clamp keeps the dual feasible by construction
  return ev;
}

struct ExactEval {
  double t_star = -std::numeric_limits<double>::infinity();
  double max_viol = -std::numeric_limits<double>::infinity();
  bool finite = true;
};

ExactEval exact_eval(const Policy& pol, const TrainData& td, Role role,
                     std::vector<double>* subopts = nullptr) {
  const std::size_t N = td.samples.size();
  std::vector<double> s(N), v(N);
  par::parallel_for(N, [&](std::size_t i) {
    const SampleEval ev = role == Role::primal
                              ? eval_primal_sample(pol, td, i, 0.0)
                              : eval_dual_sample(pol, td, i);
    s[i] = ev.subopt;
    v[i] = ev.max_viol;
  });
  ExactEval out;
  for (std::size_t i = 0; i < N; ++i) {
    if (!std::isfinite(s[i]) || !std::isfinite(v[i])) out.finite = false;
    out.t_star = std::max(out.t_star, s[i]);
    out.max_viol = std::max(out.max_viol, v[i]);
  }
  if (subopts) *subopts = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Adam (full-batch in phase B, minibatch in MLP phase A)
// ---------------------------------------------------------------------------

struct Adam {
  Vec m, v;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;

  explicit Adam(Eigen::Index dim) : m(Vec::Zero(dim)), v(Vec::Zero(dim)) {}

  void step(Vec& theta, const Vec& grad, double lr) {
    ++t;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    theta -= (lr / c1) * m.cwiseQuotient(
                             ((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

// ---------------------------------------------------------------------------
// Phase A: regression onto the optimizer labels
// ---------------------------------------------------------------------------

// Weighted ridge regression of the optimizer labels onto the basis features;
// closed-form, so the reweighted rounds of the refinement phase can re-solve
// it outright instead of taking gradient steps.
void weighted_ridge_rbn(const TrainData& td, Role role,
                        const std::vector<double>& weights, Policy& pol) {
  const Eigen::Index n_rb = pol.rbn.n_rb();
  const Eigen::Index out_dim = pol.output_dim();
  const std::size_t N = td.samples.size();

  struct NormAcc {
    Mat KtK;
    Mat KtY;
    NormAcc& operator+=(const NormAcc& o) {
      KtK += o.KtK;
      KtY += o.KtY;
      return *this;
    }
  };
  NormAcc init{Mat::Zero(n_rb, n_rb), Mat::Zero(n_rb, out_dim)};
  NormAcc acc = par::chunked_reduce(
      N,
      [&](std::size_t i) {
        const SampleCache& sc = td.samples[i];
        const double w = weights.empty() ? 1.0 : weights[i];
        const Vec phi = w * sc.features;
        NormAcc a{phi * sc.features.transpose(),
                  phi * (role == Role::primal ? sc.U_star : sc.lambda_star)
                            .transpose()};
        return a;
      },
      init);

  const double ridge =
      1e-10 * std::max(1.0, acc.KtK.trace() / static_cast<double>(n_rb));
  acc.KtK.diagonal().array() += ridge;
  pol.coefficients = acc.KtK.ldlt().solve(acc.KtY).transpose();
}

void phase_a_rbn(const TrainData& td, Role role, Policy& pol) {
  weighted_ridge_rbn(td, role, {}, pol);
}

void phase_a_mlp(const TrainData& td, Role role, Policy& pol,
                 const TrainConfig& tc, const std::vector<double>& sample_w,
                 int epochs) {
  const std::size_t N = td.samples.size();
  const Eigen::Index dim = pack_size(pol);
  // Optimize in normalized variables (see build_param_scale) and measure the
  // regression error in units of the per-row label magnitude; otherwise the
  // output-layer weights, which need magnitudes of the label scale, would be
  // out of reach for any sane step size.
  const Vec pscale = build_param_scale(pol, td);
  Vec theta_hat = pack_params(pol).cwiseQuotient(pscale);
  Adam adam(dim);
  SplitMix64 shuffle_rng(substream_seed(tc.seed, "phase-a-shuffle"));
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);

  const Vec inv_scale_sq =
      td.out_scale.cwiseProduct(td.out_scale).cwiseInverse();

  const std::size_t B = static_cast<std::size_t>(tc.batch_size);
  const int decay_every = std::max(1, epochs / 4);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr =
        tc.learning_rate * std::pow(tc.lr_decay, epoch / decay_every);
    for (std::size_t i = N; i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(shuffle_rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < N; start += B) {
      const std::size_t end = std::min(N, start + B);
      Vec grad = Vec::Zero(dim);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const SampleCache& sc = td.samples[i];
        const Vec& y = role == Role::primal ? sc.U_star : sc.lambda_star;
        const Vec out = forward_sample(pol, td, i);
        Vec g = (out - y).cwiseProduct(inv_scale_sq);
        if (!sample_w.empty()) g *= sample_w[i];
        backprop_sample(pol, td, i, g, grad);
      }
      grad /= static_cast<double>(end - start);
      grad = grad.cwiseProduct(pscale);
      adam.step(theta_hat, grad, lr);
      unpack_params(theta_hat.cwiseProduct(pscale), pol);
    }
  }
}

// ---------------------------------------------------------------------------
// Phase B: penalized max-suboptimality refinement with monotone acceptance
// ---------------------------------------------------------------------------

struct PhaseBResult {
  bool have_best = false;
  Vec best_theta;
  double best_t = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int stages = 0;
  bool diverged = false;
};

PhaseBResult phase_b(const TrainData& td, Role role, Policy& pol,
                     const TrainConfig& tc) {
  const std::size_t N = td.samples.size();
  const Eigen::Index dim = pack_size(pol);
  const double margin = tc.feasibility_margin;  // relative to the row scale
  const double logN = std::log(static_cast<double>(N) + 1.0);

  // The optimizer runs in normalized variables theta_hat = theta / scale so
  // a unit Adam step moves every output by a comparable physical amount.
  const Vec pscale = build_param_scale(pol, td);
  Vec theta_hat = pack_params(pol).cwiseQuotient(pscale);
  auto sync_policy = [&]() {
    unpack_params(theta_hat.cwiseProduct(pscale), pol);
  };

  PhaseBResult res;
  auto consider_best = [&](const ExactEval& ev) {
    if (!ev.finite) return;
    const bool feasible = role == Role::dual || ev.max_viol <= 0.0;
    if (feasible && ev.t_star < res.best_t) {
      res.best_t = ev.t_star;
      res.best_theta = theta_hat.cwiseProduct(pscale);
      res.have_best = true;
    }
  };

  // Exact-penalty merit: max_i subopt_i + kappa * sum of normalized hinge
  // violations (l1). The line search enforces monotone merit decrease, so the
  // iterate sequence cannot oscillate across the constraint boundary.
  struct MeritStats {
    double max_subopt = -std::numeric_limits<double>::infinity();
    double viol_l1 = 0.0;
    double viol_sq = 0.0;
    double max_viol = -std::numeric_limits<double>::infinity();
    bool finite = true;

    MeritStats& operator+=(const MeritStats& o) {
      max_subopt = std::max(max_subopt, o.max_subopt);
      viol_l1 += o.viol_l1;
      viol_sq += o.viol_sq;
      max_viol = std::max(max_viol, o.max_viol);
      finite = finite && o.finite;
      return *this;
    }
  };

  auto merit_stats = [&](double margin_used) {
    return par::chunked_reduce(
        N,
        [&](std::size_t i) {
          MeritStats ms;
          const SampleCache& sc = td.samples[i];
          if (role == Role::primal) {
            const Vec U = forward_sample(pol, td, i);
            ms.max_subopt = primal_cost(sc, U) - sc.J_star;
            const Vec viol = td.H(i) * U - sc.h;
            ms.max_viol = viol.maxCoeff();
            for (Eigen::Index r = 0; r < viol.size(); ++r) {
              const double scale = std::max(1.0, std::abs(sc.h(r)));
              const double a = viol(r) / scale + margin_used;
              if (a > 0.0) {
                ms.viol_l1 += a;
                ms.viol_sq += a * a;
              }
            }
          } else {
            const SampleEval ev = eval_dual_sample(pol, td, i);
            ms.max_subopt = ev.subopt;
            ms.max_viol = 0.0;
          }
          ms.finite = std::isfinite(ms.max_subopt);
          return ms;
        },
        MeritStats{});
  };

  consider_best(exact_eval(pol, td, role));

  std::vector<double> subopts(N);

  // Fixed-block gradient accumulation: zero one buffer per block, fill the
  // blocks in parallel, combine serially in block order.
  const std::size_t nblocks = std::min<std::size_t>(N, par::kReduceBlocks);
  const std::size_t chunk = (N + nblocks - 1) / nblocks;
  std::vector<Vec> block_grads(nblocks);

  // Direction from the merit subgradient, softmax-smoothed at temperature
  // tau. feas_only drops the suboptimality term (pure violation descent).
  auto build_direction = [&](double tau, double kappa, bool feas_only,
                             double margin_used) {
    double smax = -std::numeric_limits<double>::infinity();
    for (double s : subopts) smax = std::max(smax, s);
    const double Z = feas_only
                         ? 1.0
                         : par::chunked_reduce(
                               N,
                               [&](std::size_t i) {
                                 return std::exp((subopts[i] - smax) / tau);
                               },
                               0.0);
    par::parallel_for(nblocks, [&](std::size_t b) {
      Vec& g = block_grads[b];
      if (g.size() != dim) g = Vec::Zero(dim);
      else g.setZero();
      const std::size_t lo = b * chunk;
      const std::size_t hi = std::min(N, lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) {
        const SampleCache& sc = td.samples[i];
        const double w =
            feas_only ? 0.0 : std::exp((subopts[i] - smax) / tau) / Z;
        if (role == Role::primal) {
          const Vec U = forward_sample(pol, td, i);
          Vec g_out = Vec::Zero(U.size());
          bool nonzero = false;
          if (w > 1e-14) {
            g_out += w * primal_cost_grad(sc, U);
            nonzero = true;
          }
          const Vec viol = td.H(i) * U - sc.h;
          Vec coef = Vec::Zero(viol.size());
          bool any = false;
          for (Eigen::Index r = 0; r < viol.size(); ++r) {
            const double scale = std::max(1.0, std::abs(sc.h(r)));
            const double a = viol(r) / scale + margin_used;
            if (a > 0.0) {
              // Smooth hinge^2 gradient while restoring feasibility, l1
              // subgradient as the guard inside the minimax refinement.
              coef(r) = feas_only ? 2.0 * a / scale : kappa / scale;
              any = true;
            }
          }
          if (any) {
            g_out += td.H(i).transpose() * coef;
            nonzero = true;
          }
          if (nonzero) backprop_sample(pol, td, i, g_out, g);
        } else if (w > 1e-14) {
          const Vec raw = forward_sample(pol, td, i);
          const Vec lam = raw.cwiseMax(0.0);
          Vec g_lam = -w * dual_cost_grad(sc, lam, td.H(i));
          // Leaky mask through the clamp: rows currently negative keep a
          // reduced gradient, otherwise multipliers the worst samples need
          // could never come back above zero.
          for (Eigen::Index r = 0; r < g_lam.size(); ++r) {
            if (raw(r) < 0.0) g_lam(r) *= 0.1;
          }
          backprop_sample(pol, td, i, g_lam, g);
        }
      }
    });
    Vec grad = Vec::Zero(dim);
    for (std::size_t b = 0; b < nblocks; ++b) grad += block_grads[b];
    Vec direction = -grad.cwiseProduct(pscale.cwiseProduct(pscale));
    const double dir_norm = direction.cwiseQuotient(pscale).norm();
    if (dir_norm > 0.0 && std::isfinite(dir_norm)) direction /= dir_norm;
    else direction.setZero();
    return direction;
  };

  auto refresh_subopts = [&]() {
    par::parallel_for(N, [&](std::size_t i) {
      const SampleEval ev = role == Role::primal
                                ? eval_primal_sample(pol, td, i, 0.0)
                                : eval_dual_sample(pol, td, i);
      subopts[i] = ev.subopt;
    });
  };

  const int total_budget = tc.penalty_stages * tc.epochs_per_stage;
  double step = tc.learning_rate;

  // Blend restore (primal): scaling the output-layer parameters toward zero
  // restores feasibility in one shot when h >= 0, because the zero sequence
  // is feasible. Used to turn reweighted-regression iterates into certified
  // candidates without walking the penalty descent.
  bool blend_ok = role == Role::primal;
  if (blend_ok) {
    for (const SampleCache& sc : td.samples) {
      if (sc.h.minCoeff() < 0.0) {
        blend_ok = false;
        break;
      }
    }
  }
  Eigen::Index out_seg_begin = 0, out_seg_len = theta_hat.size();
  if (pol.kind == Kind::mlp) {
    out_seg_len = pol.mlp.weights.back().size() + pol.mlp.biases.back().size();
    out_seg_begin = theta_hat.size() - out_seg_len;
  }
  auto blend_factor = [&]() {
    return par::chunked_reduce(
        N,
        [&](std::size_t i) {
          const SampleCache& sc = td.samples[i];
          const Vec HU = td.H(i) * forward_sample(pol, td, i);
          double s_i = 0.0;
          for (Eigen::Index r = 0; r < HU.size(); ++r) {
            const double scale = std::max(1.0, std::abs(sc.h(r)));
            const double room =
                sc.h(r) - std::min(margin * scale, 0.5 * sc.h(r));
            if (HU(r) > room && HU(r) > 0.0) {
              s_i = std::max(s_i, 1.0 - room / HU(r));
            }
          }
          return s_i;
        },
        0.0, [](double a, double b) { return std::max(a, b); });
  };
  // Evaluates the blended copy of the current iterate and records it as an
  // incumbent candidate; the unblended iterate stays in place.
  auto consider_blended = [&]() {
    if (!blend_ok) {
      consider_best(exact_eval(pol, td, role));
      return;
    }
    const Vec saved = theta_hat;
    const double s = blend_factor();
    if (s > 0.0 && s < 1.0) {
      theta_hat.segment(out_seg_begin, out_seg_len) *= (1.0 - s);
      sync_policy();
    }
    consider_best(exact_eval(pol, td, role));
    theta_hat = saved;
    sync_policy();
  };

  // Subphase R: reweighted regression rounds with the weights concentrating
  // on the worst samples. For the radial basis each round is a closed-form
  // re-solve; for the network it is a short weighted regression run. Either
  // way the refit moves the parameters much further than a line-searched
  // step could.
  {
    std::vector<double> viol_norm(N, 0.0);
    auto refresh_viols = [&]() {
      if (role != Role::primal) return;
      par::parallel_for(N, [&](std::size_t i) {
        const SampleCache& sc = td.samples[i];
        const Vec viol = td.H(i) * forward_sample(pol, td, i) - sc.h;
        double v = 0.0;
        for (Eigen::Index r = 0; r < viol.size(); ++r) {
          v = std::max(v, viol(r) / std::max(1.0, std::abs(sc.h(r))));
        }
        viol_norm[i] = v;
      });
    };
    refresh_subopts();
    refresh_viols();
    double smax = -std::numeric_limits<double>::infinity(), mean = 0.0;
    for (double s : subopts) {
      smax = std::max(smax, s);
      mean += s;
    }
    mean /= static_cast<double>(N);
    double tau_r = std::max(1e-9, smax - mean);
    std::vector<double> weights(N);
    for (int round = 0; round < 10; ++round) {
      // Weight the worst-suboptimality samples, and (primal) the violating
      // samples: the labels are feasible, so pulling the fit toward them
      // shrinks the violations as well.
      for (std::size_t i = 0; i < N; ++i) {
        weights[i] = std::max(std::exp((subopts[i] - smax) / tau_r), 1e-3) +
                     4.0 * std::min(1.0, viol_norm[i]);
      }
      if (pol.kind == Kind::rbn) {
        weighted_ridge_rbn(td, role, weights, pol);
      } else {
        phase_a_mlp(td, role, pol, tc, weights,
                    std::max(2, tc.phase_a_epochs / 4));
      }
      theta_hat = pack_params(pol).cwiseQuotient(pscale);
      if (role == Role::primal) {
        consider_blended();
      } else {
        consider_best(exact_eval(pol, td, role));
      }
      refresh_subopts();
      refresh_viols();
      smax = -std::numeric_limits<double>::infinity();
      for (double s : subopts) smax = std::max(smax, s);
      tau_r = std::max(tau_r * 0.6, 1e-9);
      ++res.iterations;
    }
    // The dual continues from its best incumbent; the primal keeps the last
    // reweighted fit, which the feasibility subphase repairs in place.
    if (role == Role::dual && res.have_best) {
      theta_hat = res.best_theta.cwiseQuotient(pscale);
      sync_policy();
    }
  }

  // Subphase F (primal only): descend the smooth hinge^2 violation merit
  // until every sample is feasible with margin. The zero policy is strictly
  // feasible for boxes that keep u_prev inside the rate bounds, so this
  // subphase has a reachable target.
  MeritStats cur = merit_stats(margin);
  if (role == Role::primal && cur.viol_sq > 0.0) {
    int fails = 0;
    for (int it = 0; it < total_budget / 2 && cur.viol_sq > 0.0; ++it) {
      refresh_subopts();
      const Vec direction =
          build_direction(1.0, 1.0, /*feas_only=*/true, margin);
      if (direction.isZero()) break;
      const Vec theta_saved = theta_hat;
      double alpha = std::min(step * 2.0, 1.0e2);
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        theta_hat = theta_saved + alpha * direction.cwiseQuotient(pscale);
        sync_policy();
        const MeritStats trial = merit_stats(margin);
        if (trial.finite && trial.viol_sq < cur.viol_sq * (1.0 - 1e-9)) {
          cur = trial;
          step = alpha;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      ++res.iterations;
      if (!accepted) {
        theta_hat = theta_saved;
        sync_policy();
        if (++fails >= 3) break;
      } else {
        fails = 0;
      }
    }
    consider_best(exact_eval(pol, td, role));
    res.stages = 1;
  }

  // Subphase M: minimax refinement. Any violation beyond the margin costs
  // kappa_fix per normalized unit, which dwarfs every realizable
  // suboptimality gain, so accepted iterates stay feasible. When the line
  // search fails the softmax temperature is doubled to average a wider band
  // of near-worst samples; the run ends after repeated failures at the
  // widest temperature.
  refresh_subopts();
  double spread = 0.0;
  {
    double mx = -std::numeric_limits<double>::infinity(), mean = 0.0;
    for (double s : subopts) {
      mx = std::max(mx, s);
      mean += s;
    }
    mean /= static_cast<double>(N);
    spread = std::max(1e-9, mx - mean);
  }
  // The configured penalty schedule fixes the exact-penalty weight: its
  // final stage value, scaled by the objective spread, dominates any
  // realizable suboptimality gain.
  const double kappa_fix =
      tc.penalty_init * std::pow(tc.penalty_growth, tc.penalty_stages) *
      std::max(1.0, std::abs(spread) + std::abs(cur.max_subopt));
  const double tau_min = spread / (4.0 * logN);
  const double tau_max = 4.0 * spread;
  double tau = spread / logN;

  cur = merit_stats(0.0);
  double cur_merit = cur.max_subopt + kappa_fix * cur.viol_l1;
  int fails_at_max_tau = 0;
  step = tc.learning_rate;

  for (int it = res.iterations; it < total_budget; ++it) {
    refresh_subopts();
    const Vec direction = build_direction(tau, kappa_fix, false, 0.0);
    if (direction.isZero()) break;
    const Vec theta_saved = theta_hat;
    double alpha = std::min(step * 2.0, 1.0e2);
    bool accepted = false;
    for (int ls = 0; ls < 24; ++ls) {
      theta_hat = theta_saved + alpha * direction.cwiseQuotient(pscale);
      sync_policy();
      const MeritStats trial = merit_stats(0.0);
      const double trial_merit =
          trial.max_subopt + kappa_fix * trial.viol_l1;
      if (trial.finite && trial_merit < cur_merit - 1e-12) {
        cur = trial;
        cur_merit = trial_merit;
        step = alpha;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    ++res.iterations;
    if (accepted) {
      tau = std::max(tau_min, tau * 0.8);
      fails_at_max_tau = 0;
    } else {
      theta_hat = theta_saved;
      sync_policy();
      if (tau < tau_max) {
        tau = std::min(tau_max, tau * 4.0);
      } else if (++fails_at_max_tau >= 3) {
        break;
      }
      step = tc.learning_rate;
    }

    if (res.iterations % 10 == 0 || accepted) {
      const ExactEval ev = exact_eval(pol, td, role);
      consider_best(ev);
      if (tc.target_t > 0.0 && res.have_best && res.best_t <= tc.target_t) {
        break;
      }
    }
  }
  res.stages += 1;
  const ExactEval last = exact_eval(pol, td, role);
  consider_best(last);
  if (!last.finite && !res.have_best) res.diverged = true;
  return res;
}

TrainReport run_training(const mpc::ProblemConfig& cfg,
                         const std::vector<SampleRow>& data, Policy& pol,
                         const TrainConfig& tc, Role role) {
  tc.validate();
  pol.role = role;
  const TrainData td = build_cache(cfg, data, pol);

  if (pol.kind == Kind::rbn) {
    phase_a_rbn(td, role, pol);
  } else {
    phase_a_mlp(td, role, pol, tc, {}, tc.phase_a_epochs);
  }

  PhaseBResult pb = phase_b(td, role, pol, tc);

  TrainReport report;
  report.iterations = pb.iterations;
  report.stages_run = pb.stages;

  if (pb.have_best) {
    unpack_params(pb.best_theta, pol);
  }
  std::vector<double> subopts;
  const ExactEval final_ev = exact_eval(pol, td, role, &subopts);
  report.t_star = final_ev.t_star;
  report.max_violation = std::max(0.0, final_ev.max_viol);

  const bool feasible =
      role == Role::dual || final_ev.max_viol <= 1e-9;
  report.success = feasible && final_ev.finite && !pb.diverged;
  if (!report.success) {
    // Name the violating samples for the failure report.
    par::serial_for(td.samples.size(), [&](std::size_t i) {
      const SampleEval ev = role == Role::primal
                                ? eval_primal_sample(pol, td, i, 0.0)
                                : eval_dual_sample(pol, td, i);
      if (ev.max_viol > 1e-9 || !std::isfinite(ev.subopt)) {
        if (report.violating_samples.size() < 64) {
          report.violating_samples.push_back(static_cast<std::int64_t>(i));
        }
      }
    });
    report.message = pb.diverged ? "training diverged"
                                 : "infeasible samples after all stages";
    pol.certified_t = std::numeric_limits<double>::quiet_NaN();
  } else {
    pol.certified_t = report.t_star;
    pol.train_meta.seed = tc.seed;
    pol.train_meta.sample_size = static_cast<std::int64_t>(data.size());
  }
  return report;
}

}  // namespace

TrainReport train_primal(const mpc::ProblemConfig& cfg,
                         const std::vector<SampleRow>& data, Policy& pol,
                         const TrainConfig& tc) {
  return run_training(cfg, data, pol, tc, Role::primal);
}

TrainReport train_dual(const mpc::ProblemConfig& cfg,
                       const std::vector<SampleRow>& data, Policy& pol,
                       const TrainConfig& tc) {
  return run_training(cfg, data, pol, tc, Role::dual);
}

CertCheck recompute_certificate(const mpc::ProblemConfig& cfg,
                                const std::vector<SampleRow>& data,
                                const policy::Policy& pol) {
  CertCheck out;
  out.t_star = -std::numeric_limits<double>::infinity();
  for (const SampleRow& row : data) {
    const auto P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
    const mpc::CondensedQp qp = cfg.condense_for(P);
    const Vec out_vec = policy::eval_policy(pol, row.p_flat);
    if (pol.role == Role::primal) {
      out.t_star = std::max(
          out.t_star, qp::eval_primal_cost(qp, out_vec) - row.J_star);
      out.max_violation =
          std::max(out.max_violation, (qp.H * out_vec - qp.h).maxCoeff());
    } else {
      const qp::DualEvaluator dual(qp);
      out.t_star = std::max(out.t_star, row.J_star - dual.value(out_vec));
      out.max_violation =
          std::max(out.max_violation, std::max(0.0, -out_vec.minCoeff()));
    }
  }
  return out;
}

GradCheckResult grad_check(const policy::MlpPolicy& net, const Vec& p_flat,
                           const Vec& probe_target, double fd_step,
                           double kink_tol,
                           const std::function<Vec(std::uint64_t)>& resample) {
  net.validate();
  GradCheckResult res;
  Vec point = p_flat;

  auto kinked = [&](const Vec& p) {
    std::vector<Vec> pre;
    net.forward_cached(p, pre);
    for (std::size_t l = 0; l + 1 < pre.size(); ++l) {
      if ((pre[l].cwiseAbs().array() < kink_tol).any()) return true;
    }
    return false;
  };

  std::uint64_t attempt = 0;
  while (kinked(point) && resample && attempt < 100) {
    point = resample(attempt++);
    res.resampled = true;
  }
  res.attempts = static_cast<int>(attempt) + 1;

  // Probe loss: 1/2 ||f(p) - target||^2. Analytic gradient via backprop.
  Policy wrapper;
  wrapper.kind = Kind::mlp;
  wrapper.role = Role::primal;
  wrapper.mlp = net;
  TrainData td;
  td.p_flats = {point};
  td.samples.resize(1);

  const Eigen::Index dim = pack_size(wrapper);
  Vec analytic = Vec::Zero(dim);
  const Vec out = net.forward(point);
  backprop_sample(wrapper, td, 0, out - probe_target, analytic);

  Vec theta = pack_params(wrapper);
  const double gscale = analytic.cwiseAbs().maxCoeff();
  double max_rel = 0.0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double keep = theta(j);
    theta(j) = keep + fd_step;
    unpack_params(theta, wrapper);
    const double fp = 0.5 * (wrapper.mlp.forward(point) - probe_target)
                                .squaredNorm();
    theta(j) = keep - fd_step;
    unpack_params(theta, wrapper);
    const double fm = 0.5 * (wrapper.mlp.forward(point) - probe_target)
                                .squaredNorm();
    theta(j) = keep;
    const double fd = (fp - fm) / (2.0 * fd_step);
    const double denom =
        std::max({std::abs(analytic(j)), std::abs(fd), 1e-8 * (1.0 + gscale)});
    max_rel = std::max(max_rel, std::abs(analytic(j) - fd) / denom);
  }
  unpack_params(theta, wrapper);
  res.max_rel_error = max_rel;
  return res;
}

policy::Policy make_template(policy::Kind kind, policy::Role role,
                             const mpc::ProblemConfig& cfg,
                             const TrainConfig& tc, int attempt,
                             std::uint64_t seed) {
  const int T = cfg.mpc.T;
  const int in_dim = mpc::ParameterVector::flat_dim(T);
  const int out_dim =
      role == Role::primal ? cfg.mpc.n_dec() : cfg.mpc.n_rows();

  Policy pol;
  pol.kind = kind;
  pol.role = role;
  if (kind == Kind::rbn) {
    const int n_rb = tc.rbn_start + attempt * tc.rbn_increment;
    pol.rbn.centers.resize(n_rb, in_dim);
    SplitMix64 rng(substream_seed(seed, "rbn-centers"));
    for (int j = 0; j < n_rb; ++j) {
      for (int d = 0; d < in_dim; ++d) {
        pol.rbn.centers(j, d) =
            rng.next_uniform(cfg.box.lower(d), cfg.box.upper(d));
      }
    }
    const Vec hw = cfg.box.half_width();
    pol.rbn.scaling.resize(in_dim);
    for (int d = 0; d < in_dim; ++d) {
      pol.rbn.scaling(d) = hw(d) > 0.0 ? 1.0 / hw(d) : 0.0;
    }
    pol.rbn.output_dim = out_dim;
    pol.coefficients = Mat::Zero(out_dim, pol.rbn.n_rb());
  } else {
    const int width = tc.mlp_start_width + attempt * tc.mlp_width_increment;
    bounds::MlpShape shape;
    shape.dims.push_back(in_dim);
    for (int l = 0; l + 1 < tc.mlp_depth; ++l) shape.dims.push_back(width);
    shape.dims.push_back(out_dim);
    pol.mlp = policy::MlpPolicy::random_init(
        shape, cfg.box.half_width(), substream_seed(seed, "mlp-init"));
  }
  return pol;
}

}  // namespace pdpl::train
