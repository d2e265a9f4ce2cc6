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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pdpl/bounds.hpp"
#include "pdpl/dataset.hpp"
#include "pdpl/eval.hpp"
#include "pdpl/pipeline.hpp"
#include "pdpl/runtime.hpp"

namespace {

using namespace pdpl;

mpc::ProblemConfig load_problem(const std::string& config_path) {
  if (config_path.empty()) return mpc::ProblemConfig::defaults();
  return mpc::ProblemConfig::load(config_path);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write: " + path);
  f << text;
}

std::vector<int> parse_shape(const std::string& s) {
  std::vector<int> dims;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) dims.push_back(std::stoi(item));
  return dims;
}

int cmd_sample_size(double epsilon, double beta, std::int64_t n_dec,
                    const std::string& shape_str) {
  const bounds::BoundSpec spec{epsilon, beta};
  if (!shape_str.empty()) {
    bounds::MlpShape shape;
    shape.dims = parse_shape(shape_str);
    const double xi = bounds::vc_upper_bound(shape);
    std::cout << "mlp shape: " << shape_str << "\n"
              << "weights+biases W = " << shape.param_count() << "\n"
              << "vc upper bound  = " << format_double(xi) << "\n"
              << "N (closed form) = "
              << bounds::learning_theory_sample_size(spec, xi) << "\n";
    return 0;
  }
  if (n_dec < 1) {
    std::cerr << "either --n-dec or --mlp-shape is required\n";
    return 2;
  }
  std::cout << "n_dec = " << n_dec << "\n"
            << "N (closed form) = " << bounds::scenario_sample_size(spec, n_dec)
            << "\n"
            << "N (exact tail)  = "
            << bounds::exact_tail_sample_size(spec, n_dec) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Primal-dual policy learning for parameter-varying MPC: dataset "
      "generation, certified training, online duality-gap certification"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "problem config (INI)")
      ->envname("PDPL_CONFIG");

  // --- sample-size ---------------------------------------------------------
  auto* ss = app.add_subcommand(
      "sample-size", "scenario / learning-theory training-set sizes");
  double ss_eps = 0.05, ss_beta = 1e-7;
  std::int64_t ss_ndec = 0;
  std::string ss_shape;
  ss->add_option("--epsilon", ss_eps, "violation probability")->required();
  ss->add_option("--beta", ss_beta, "confidence parameter")->required();
  ss->add_option("--n-dec", ss_ndec, "decision-variable count (convex case)");
  ss->add_option("--mlp-shape", ss_shape,
                 "comma-separated layer sizes, e.g. 20,15,15,9");

  // --- generate-data -------------------------------------------------------
  auto* gen = app.add_subcommand("generate-data",
                                 "draw parameters and label them with exact "
                                 "QP solutions");
  std::int64_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "dataset.csv";
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output CSV path");

  // --- train ---------------------------------------------------------------
  auto* tr = app.add_subcommand(
      "train", "train one policy at fixed capacity from a dataset");
  std::string tr_data, tr_out = "policy.bin", tr_role = "primal",
              tr_kind = "rbn";
  std::uint64_t tr_seed = 1;
  int tr_capacity = 10;
  double tr_tmax = 4.0;
  tr->add_option("--data", tr_data, "dataset CSV")->required();
  tr->add_option("--out", tr_out, "output policy path");
  tr->add_option("--role", tr_role, "primal|dual")
      ->check(CLI::IsMember({"primal", "dual"}));
  tr->add_option("--kind", tr_kind, "rbn|mlp")
      ->check(CLI::IsMember({"rbn", "mlp"}));
  tr->add_option("--capacity", tr_capacity, "n_rb (rbn) or width (mlp)");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--t-max", tr_tmax, "admissible suboptimality budget");

  // --- evaluate ------------------------------------------------------------
  auto* ev = app.add_subcommand(
      "evaluate", "Monte Carlo suboptimality/violation report");
  std::string ev_primal, ev_dual, ev_out = "eval_report.json";
  std::int64_t ev_m = 100000;
  std::uint64_t ev_seed = 99;
  double ev_tmax = 4.0;
  ev->add_option("--primal", ev_primal, "primal policy file")->required();
  ev->add_option("--dual", ev_dual, "dual policy file")->required();
  ev->add_option("--m", ev_m, "number of Monte Carlo samples");
  ev->add_option("--seed", ev_seed, "rng seed");
  ev->add_option("--t-max", ev_tmax, "certification threshold");
  ev->add_option("--out", ev_out, "output JSON path");

  // --- bench ---------------------------------------------------------------
  auto* be = app.add_subcommand(
      "bench", "time the certify path against the online QP solve");
  std::string be_primal, be_dual, be_out = "bench_report.json";
  std::int64_t be_m = 2000;
  std::uint64_t be_seed = 7;
  be->add_option("--primal", be_primal, "primal policy file")->required();
  be->add_option("--dual", be_dual, "dual policy file")->required();
  be->add_option("--m", be_m, "number of timed parameters");
  be->add_option("--seed", be_seed, "rng seed");
  be->add_option("--out", be_out, "output JSON path");

  // --- simulate ------------------------------------------------------------
  auto* sim = app.add_subcommand(
      "simulate", "closed-loop lane-change run with certification");
  std::string sim_primal, sim_dual, sim_trace = "trace.csv",
              sim_summary = "sim_summary.json";
  int sim_steps = 1200, sim_t0 = 100, sim_duration = 600;
  double sim_v0 = 3.0, sim_v1 = 21.5, sim_delta = 0.05, sim_tmax = 4.0;
  bool sim_oracle = false;
  sim->add_option("--primal", sim_primal, "primal policy file")->required();
  sim->add_option("--dual", sim_dual, "dual policy file")->required();
  sim->add_option("--steps", sim_steps, "number of 100 Hz steps");
  sim->add_option("--v0", sim_v0, "initial velocity [m/s]");
  sim->add_option("--v1", sim_v1, "final velocity [m/s]");
  sim->add_option("--delta-max", sim_delta, "steering amplitude [rad]");
  sim->add_option("--lc-start", sim_t0, "lane change start step");
  sim->add_option("--lc-duration", sim_duration, "lane change length [steps]");
  sim->add_option("--t-max", sim_tmax, "certification threshold");
  sim->add_flag("--oracle", sim_oracle,
                "solve the QP each step and record relative suboptimality");
  sim->add_option("--trace", sim_trace, "trace CSV path");
  sim->add_option("--summary", sim_summary, "summary JSON path");

  // --- pipeline --------------------------------------------------------------
  auto* pl = app.add_subcommand(
      "pipeline", "full offline phase: bounds, data, training with capacity "
                  "growth, evaluation, benchmark");
  pipeline::PipelineConfig pcfg;
  std::string pl_kind = "rbn", pl_manifest;
  pl->add_option("--epsilon", pcfg.epsilon, "backup-frequency budget");
  pl->add_option("--beta", pcfg.beta, "confidence parameter");
  pl->add_option("--t-max", pcfg.t_max, "admissible suboptimality budget");
  pl->add_option("--kind", pl_kind, "rbn|mlp")
      ->check(CLI::IsMember({"rbn", "mlp"}));
  pl->add_option("--seed", pcfg.seed, "master seed");
  pl->add_option("--m-eval", pcfg.eval_samples, "Monte Carlo sample count");
  pl->add_option("--m-bench", pcfg.bench_samples, "benchmark sample count");
  pl->add_option("--max-retries", pcfg.train.max_growth_retries,
                 "capacity growth budget");
  pl->add_option("--out-dir", pcfg.out_dir, "artifact directory");
  pl->add_option("--manifest", pl_manifest,
                 "replay a previous run from its manifest");
  bool pl_no_bench = false;
  pl->add_flag("--no-bench", pl_no_bench, "skip the timing benchmark");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ss->parsed()) {
      return cmd_sample_size(ss_eps, ss_beta, ss_ndec, ss_shape);
    }

    if (gen->parsed()) {
      const auto cfg = load_problem(config_path);
      data::GenerateStats stats;
      const data::Dataset ds = data::generate_dataset(cfg, gen_n, gen_seed,
                                                      &stats);
      data::save_csv(ds, gen_out);
      std::cout << "wrote " << gen_out << ": accepted " << stats.accepted
                << ", rejected " << stats.rejected << " of "
                << stats.attempted << " draws\n";
      return 0;
    }

    if (tr->parsed()) {
      const auto cfg = load_problem(config_path);
      const data::Dataset ds = data::load_csv(tr_data, cfg);
      train::TrainConfig tc;
      tc.seed = tr_seed;
      tc.t_max = tr_tmax;
      const auto kind = tr_kind == "rbn" ? policy::Kind::rbn : policy::Kind::mlp;
      const auto role =
          tr_role == "primal" ? policy::Role::primal : policy::Role::dual;
      if (kind == policy::Kind::rbn) {
        tc.rbn_start = tr_capacity;
      } else {
        tc.mlp_start_width = tr_capacity;
      }
      policy::Policy pol = train::make_template(kind, role, cfg, tc, 0, tr_seed);
      const auto need =
          kind == policy::Kind::rbn
              ? bounds::scenario_sample_size({0.05, 1e-7}, pol.n_dec())
              : bounds::learning_theory_sample_size(
                    {0.05, 1e-7}, bounds::vc_upper_bound(pol.mlp.shape));
      if (static_cast<std::int64_t>(ds.rows.size()) < need) {
        std::cout << "note: dataset has " << ds.rows.size()
                  << " rows; the eps=0.05, beta=1e-7 bound asks for " << need
                  << " — certificates from this run are not covered\n";
      }
      const train::TrainReport rep =
          role == policy::Role::primal
              ? train::train_primal(cfg, ds.rows, pol, tc)
              : train::train_dual(cfg, ds.rows, pol, tc);
      std::cout << (rep.success ? "trained" : "FAILED") << ": t* = "
                << rep.t_star << ", max violation = " << rep.max_violation
                << ", iterations = " << rep.iterations << "\n";
      if (!rep.success) return 1;
      policy::save_policy(pol, tr_out);
      std::cout << "wrote " << tr_out << "\n";
      return 0;
    }

    if (ev->parsed()) {
      const auto cfg = load_problem(config_path);
      const auto primal = policy::load_policy(ev_primal);
      const auto dual = policy::load_policy(ev_dual);
      const auto rep =
          eval::monte_carlo_eval(cfg, primal, dual, ev_m, ev_seed, ev_tmax);
      write_file(ev_out, rep.to_json());
      std::cout << rep.to_json();
      return rep.negative_tp_errors == 0 ? 0 : 1;
    }

    if (be->parsed()) {
      const auto cfg = load_problem(config_path);
      const auto primal = policy::load_policy(be_primal);
      const auto dual = policy::load_policy(be_dual);
      const auto rep = eval::bench(cfg, primal, dual, be_m, be_seed);
      write_file(be_out, rep.to_json());
      std::cout << rep.to_json();
      return 0;
    }

    if (sim->parsed()) {
      const auto cfg = load_problem(config_path);
      runtime::ControllerContext ctx;
      ctx.primal = policy::load_policy(sim_primal);
      ctx.dual = policy::load_policy(sim_dual);
      ctx.t_max = sim_tmax;
      ctx.problem = cfg;
      const auto scenario = runtime::Scenario::lane_change(
          sim_steps, sim_v0, sim_v1, sim_delta, sim_t0, sim_duration);
      const auto trace = runtime::closed_loop_sim(
          ctx, scenario, Eigen::Vector4d::Zero(), sim_oracle);
      write_file(sim_trace, trace.to_csv());
      write_file(sim_summary, trace.summary_json());
      std::cout << trace.summary_json();
      return trace.aborted ? 1 : 0;
    }

    if (pl->parsed()) {
      if (!pl_manifest.empty()) {
        const auto res = pipeline::replay_manifest(pl_manifest, pcfg.out_dir);
        std::cout << "replayed pipeline: success = " << res.success
                  << ", manifest " << res.manifest_path << "\n";
        return res.success ? 0 : 1;
      }
      const auto cfg = load_problem(config_path);
      pcfg.kind = pl_kind == "rbn" ? policy::Kind::rbn : policy::Kind::mlp;
      pcfg.run_bench = !pl_no_bench;
      const auto res = pipeline::run_pipeline(cfg, pcfg);
      std::cout << "pipeline " << (res.success ? "succeeded" : "FAILED")
                << ": t_p* = " << res.t_p_star << ", t_d* = " << res.t_d_star
                << " (budget " << pcfg.t_max << "), N_p = " << res.N_p
                << ", N_d = " << res.N_d << "\n";
      return res.success ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
