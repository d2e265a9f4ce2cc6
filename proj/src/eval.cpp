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

#include "pdpl/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "pdpl/parallel.hpp"
#include "pdpl/rng.hpp"
#include "pdpl/runtime.hpp"

namespace pdpl::eval {

namespace {

MetricStats stats_of(std::vector<double>& v) {
  MetricStats s;
  if (v.empty()) return s;
  double acc = 0.0;
  s.max = v[0];
  for (double x : v) {
    acc += x;
    s.max = std::max(s.max, x);
  }
  s.mean = acc / static_cast<double>(v.size());
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  s.median = v[mid];
  if (v.size() % 2 == 0) {
    const double hi = v[mid];
    std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
    s.median = 0.5 * (hi + v[mid - 1]);
  }
  return s;
}

void put_metric(std::ostringstream& o, const char* name, const MetricStats& m,
                bool trailing_comma = true) {
  o << "  \"" << name << "\": {\"mean\": " << format_double(m.mean)
    << ", \"median\": " << format_double(m.median)
    << ", \"max\": " << format_double(m.max) << "}";
  o << (trailing_comma ? ",\n" : "\n");
}

}  // namespace

std::string EvalReport::to_json() const {
  std::ostringstream o;
  o << "{\n";
  put_metric(o, "t_p", t_p);
  put_metric(o, "t_d", t_d);
  put_metric(o, "t_gap", t_gap);
  o << "  \"eps_p\": " << format_double(eps_p) << ",\n";
  o << "  \"eps_d\": " << format_double(eps_d) << ",\n";
  o << "  \"eps_compound\": " << format_double(eps_compound) << ",\n";
  o << "  \"samples\": " << samples << ",\n";
  o << "  \"negative_tp_errors\": " << negative_tp_errors << ",\n";
  o << "  \"min_tp\": " << format_double(min_tp) << ",\n";
  o << "  \"t_max\": " << format_double(t_max) << ",\n";
  o << "  \"config\": \"" << config_hash << "\"\n";
  o << "}\n";
  return o.str();
}

EvalReport monte_carlo_eval(const mpc::ProblemConfig& cfg,
                            const policy::Policy& primal,
                            const policy::Policy& dual, std::int64_t M,
                            std::uint64_t seed, double t_max,
                            const qp::SolverConfig& solver) {
  if (M < 1) throw ConfigError("monte_carlo_eval needs M >= 1");
  const auto N = static_cast<std::size_t>(M);

  std::vector<double> tp(N), td(N), tg(N);
  std::vector<std::uint8_t> viol_p(N), viol_d(N), viol_c(N);
  const double feas_tol = 1e-6;
  const double tp_threshold = primal.is_certified()
                                  ? primal.certified_t
                                  : std::numeric_limits<double>::infinity();
  const double td_threshold = dual.is_certified()
                                  ? dual.certified_t
                                  : std::numeric_limits<double>::infinity();

  par::parallel_for(N, [&](std::size_t i) {
    const std::uint64_t sub = substream_seed(seed, i);
    const Vec p = mpc::sample_parameter_flat(cfg.box, sub);
    const auto P = mpc::ParameterVector::unflatten(p, cfg.mpc.T);
    const mpc::CondensedQp qp = cfg.condense_for(P);
    const qp::QpSolution sol = qp::solve_primal(qp, solver);

    const Vec U = policy::eval_policy(primal, p);
    const Vec lam = policy::eval_policy(dual, p);
    const double pcost = qp::eval_primal_cost(qp, U);
    const qp::DualEvaluator de(qp);
    const double dcost = de.value(lam);

    tp[i] = pcost - sol.J_star;
    td[i] = sol.J_star - dcost;
    tg[i] = pcost - dcost;

    const bool p_feas = (qp.H * U - qp.h).maxCoeff() <= feas_tol;
    const bool d_feas = lam.minCoeff() >= -feas_tol;
    viol_p[i] = !(p_feas && tp[i] <= tp_threshold);
    viol_d[i] = !(d_feas && td[i] <= td_threshold);
    viol_c[i] = !(p_feas && d_feas && tg[i] <= t_max);
  });

  EvalReport rep;
  rep.samples = M;
  rep.t_max = t_max;
  rep.config_hash = cfg.hash_hex();

  rep.min_tp = tp[0];
  double scale = 1.0;
  for (std::size_t i = 0; i < N; ++i) {
    rep.min_tp = std::min(rep.min_tp, tp[i]);
    scale = std::max(scale, std::abs(tg[i]));
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (tp[i] < -1e-6 * scale) ++rep.negative_tp_errors;
  }

  std::int64_t np = 0, nd = 0, nc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    np += viol_p[i];
    nd += viol_d[i];
    nc += viol_c[i];
  }
  rep.eps_p = static_cast<double>(np) / static_cast<double>(M);
  rep.eps_d = static_cast<double>(nd) / static_cast<double>(M);
  rep.eps_compound = static_cast<double>(nc) / static_cast<double>(M);

  rep.t_p = stats_of(tp);
  rep.t_d = stats_of(td);
  rep.t_gap = stats_of(tg);
  return rep;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

TimingStats time_batches(const std::vector<double>& per_call_us) {
  TimingStats t;
  if (per_call_us.empty()) return t;
  t.min_us = per_call_us[0];
  t.max_us = per_call_us[0];
  double acc = 0.0;
  for (double x : per_call_us) {
    t.min_us = std::min(t.min_us, x);
    t.max_us = std::max(t.max_us, x);
    acc += x;
  }
  t.mean_us = acc / static_cast<double>(per_call_us.size());
  double var = 0.0;
  for (double x : per_call_us) var += (x - t.mean_us) * (x - t.mean_us);
  t.std_us = std::sqrt(var / static_cast<double>(per_call_us.size()));
  return t;
}

}  // namespace

std::string BenchReport::to_json() const {
  auto put = [](std::ostringstream& o, const char* name,
                const TimingStats& t) {
    o << "  \"" << name << "\": {\"min_us\": " << format_double(t.min_us)
      << ", \"max_us\": " << format_double(t.max_us)
      << ", \"mean_us\": " << format_double(t.mean_us)
      << ", \"std_us\": " << format_double(t.std_us) << "},\n";
  };
  std::ostringstream o;
  o << "{\n";
  put(o, "policy_path", policy_path);
  put(o, "qp_path", qp_path);
  o << "  \"speedup\": " << format_double(speedup) << ",\n";
  o << "  \"samples\": " << samples << ",\n";
  o << "  \"machine\": \"" << machine << "\",\n";
  o << "  \"config\": \"" << config_hash << "\"\n";
  o << "}\n";
  return o.str();
}

BenchReport bench(const mpc::ProblemConfig& cfg, const policy::Policy& primal,
                  const policy::Policy& dual, std::int64_t M,
                  std::uint64_t seed, const qp::SolverConfig& solver) {
  BenchReport rep;
  rep.samples = M;
  rep.config_hash = cfg.hash_hex();
  {
    std::ostringstream m;
    m << "threads=" << par::max_threads() << " eigen=" << EIGEN_WORLD_VERSION
      << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION;
    rep.machine = m.str();
  }
  if (M == 0) return rep;
  if (M < 0) throw ConfigError("bench needs M >= 0");

  const auto N = static_cast<std::size_t>(M);
  std::vector<Vec> params(N);
  for (std::size_t i = 0; i < N; ++i) {
    params[i] = mpc::sample_parameter_flat(cfg.box, substream_seed(seed, i));
  }

  volatile double sink = 0.0;  // keeps the timed work alive

  runtime::ControllerContext ctx;
  ctx.primal = primal;
  ctx.dual = dual;
  ctx.problem = cfg;
  ctx.solver = solver;

  auto policy_call = [&](const Vec& p) {
    const auto P = mpc::ParameterVector::unflatten(p, cfg.mpc.T);
    const runtime::CertificationOutcome oc = runtime::certify(ctx, P);
    sink = sink + oc.gap +
           (oc.decision == runtime::Decision::apply ? 1.0 : 0.0);
  };
  auto qp_call = [&](const Vec& p) {
    const auto P = mpc::ParameterVector::unflatten(p, cfg.mpc.T);
    const mpc::CondensedQp qp = cfg.condense_for(P);
    const qp::QpSolution sol = qp::solve_primal(qp, solver);
    sink = sink + sol.J_star;
  };

  auto run = [&](auto&& call) {
    // Warmup on a prefix, then batches of calls timed with the monotonic
    // clock; each batch mean is one observation.
    const std::size_t warmup = std::min<std::size_t>(N, 32);
    for (std::size_t i = 0; i < warmup; ++i) call(params[i]);
    const std::size_t batch = 16;
    std::vector<double> per_call;
    for (std::size_t start = 0; start < N; start += batch) {
      const std::size_t end = std::min(N, start + batch);
      const auto t0 = Clock::now();
      for (std::size_t i = start; i < end; ++i) call(params[i]);
      const auto t1 = Clock::now();
      const double us =
          std::chrono::duration<double, std::micro>(t1 - t0).count() /
          static_cast<double>(end - start);
      per_call.push_back(us);
    }
    return time_batches(per_call);
  };

  rep.policy_path = run(policy_call);
  rep.qp_path = run(qp_call);
  rep.speedup = rep.policy_path.mean_us > 0.0
                    ? rep.qp_path.mean_us / rep.policy_path.mean_us
                    : 0.0;
  return rep;
}

}  // namespace pdpl::eval
