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

#include "pdpl/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pdpl/dataset.hpp"
#include "pdpl/parallel.hpp"
#include "pdpl/rng.hpp"

namespace pdpl::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using policy::Kind;
using policy::Policy;
using policy::Role;

void PipelineConfig::validate() const {
  bounds::BoundSpec{epsilon, beta}.validate();
  if (!(t_max > 0.0)) throw ConfigError("t_max must be positive");
  if (eval_samples < 0 || bench_samples < 0) {
    throw ConfigError("sample counts must be nonnegative");
  }
  train.validate();
}

namespace {

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    if (!f) break;
  }
  return to_hex(h);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json problem_to_json(const mpc::ProblemConfig& p) {
  json j;
  j["vehicle"] = {
      {"m", p.vehicle.m},          {"m_s", p.vehicle.m_s},
      {"h_s", p.vehicle.h_s},      {"i_x", p.vehicle.I_x},
      {"i_z", p.vehicle.I_z},      {"c_phi", p.vehicle.C_phi},
      {"k_phi", p.vehicle.k_phi},  {"g", p.vehicle.g},
      {"l_front", p.vehicle.l_front}, {"l_rear", p.vehicle.l_rear},
      {"c_front", p.vehicle.C_front}, {"c_rear", p.vehicle.C_rear},
      {"dt", p.vehicle.dt}};
  j["mpc"]["horizon"] = p.mpc.T;
  for (int i = 0; i < 3; ++i) {
    j["mpc"]["q_s"].push_back(p.mpc.Q_s(i, i));
    j["mpc"]["r_s"].push_back(p.mpc.R_s(i, i));
    j["mpc"]["u_bar"].push_back(p.mpc.u_bar(i));
    j["mpc"]["du_bar"].push_back(p.mpc.du_bar(i));
  }
  for (int i = 0; i < p.box.dim(); ++i) {
    j["box"]["lower"].push_back(p.box.lower(i));
    j["box"]["upper"].push_back(p.box.upper(i));
  }
  return j;
}

mpc::ProblemConfig problem_from_json(const json& j) {
  mpc::ProblemConfig p;
  const json& v = j.at("vehicle");
  p.vehicle.m = v.at("m");
  p.vehicle.m_s = v.at("m_s");
  p.vehicle.h_s = v.at("h_s");
  p.vehicle.I_x = v.at("i_x");
  p.vehicle.I_z = v.at("i_z");
  p.vehicle.C_phi = v.at("c_phi");
  p.vehicle.k_phi = v.at("k_phi");
  p.vehicle.g = v.at("g");
  p.vehicle.l_front = v.at("l_front");
  p.vehicle.l_rear = v.at("l_rear");
  p.vehicle.C_front = v.at("c_front");
  p.vehicle.C_rear = v.at("c_rear");
  p.vehicle.dt = v.at("dt");
  p.mpc.T = j.at("mpc").at("horizon");
  Eigen::Vector3d qs, rs, ub, dub;
  for (int i = 0; i < 3; ++i) {
    qs(i) = j.at("mpc").at("q_s").at(i);
    rs(i) = j.at("mpc").at("r_s").at(i);
    ub(i) = j.at("mpc").at("u_bar").at(i);
    dub(i) = j.at("mpc").at("du_bar").at(i);
  }
  p.mpc.Q_s = qs.asDiagonal();
  p.mpc.R_s = rs.asDiagonal();
  p.mpc.u_bar = ub;
  p.mpc.du_bar = dub;
  const auto& lo = j.at("box").at("lower");
  const auto& hi = j.at("box").at("upper");
  p.box.lower.resize(static_cast<Eigen::Index>(lo.size()));
  p.box.upper.resize(static_cast<Eigen::Index>(hi.size()));
  for (std::size_t i = 0; i < lo.size(); ++i) {
    p.box.lower(static_cast<Eigen::Index>(i)) = lo.at(i);
    p.box.upper(static_cast<Eigen::Index>(i)) = hi.at(i);
  }
  p.vehicle.validate();
  p.mpc.validate();
  p.box.validate();
  return p;
}

struct AttemptLog {
  std::string role;
  int attempt = 0;
  std::int64_t capacity = 0;
  std::int64_t n_dec = 0;
  std::int64_t N = 0;
  double t_star = std::numeric_limits<double>::quiet_NaN();
  bool success = false;
};

std::int64_t capacity_of(const Policy& pol, const train::TrainConfig& tc,
                         int attempt) {
  if (pol.kind == Kind::rbn) return tc.rbn_start + attempt * tc.rbn_increment;
  return tc.mlp_start_width + attempt * tc.mlp_width_increment;
}

std::int64_t sample_size_for(const Policy& pol, const bounds::BoundSpec& spec) {
  if (pol.kind == Kind::rbn) {
    return bounds::scenario_sample_size(spec, pol.n_dec());
  }
  return bounds::learning_theory_sample_size(
      spec, bounds::vc_upper_bound(pol.mlp.shape));
}

}  // namespace

PipelineResult run_pipeline(const mpc::ProblemConfig& problem,
                            const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const auto path = [&](const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
  };

  const bounds::BoundSpec spec_p{cfg.epsilon / 2.0, cfg.beta / 2.0};
  const bounds::BoundSpec spec_d = spec_p;

  PipelineResult res;
  std::vector<AttemptLog> attempts;

  Policy primal, dual;
  data::Dataset ds_p, ds_d;
  double t_p = std::numeric_limits<double>::infinity();
  double t_d = std::numeric_limits<double>::infinity();

  auto train_one = [&](Role role, int attempt) {
    const bool is_primal = role == Role::primal;
    const char* tag = is_primal ? "primal" : "dual";
    const bounds::BoundSpec& spec = is_primal ? spec_p : spec_d;

    train::TrainConfig tc = cfg.train;
    tc.t_max = cfg.t_max;
    tc.seed = substream_seed(cfg.seed,
                             (std::string(tag) + "-train").c_str()) +
              static_cast<std::uint64_t>(attempt);
    if (is_primal) {
      tc.target_t = 0.45 * cfg.t_max;
    } else {
      const double remaining =
          std::isfinite(t_p) ? cfg.t_max - t_p : 0.55 * cfg.t_max;
      tc.target_t = std::max(0.05 * cfg.t_max, 0.9 * remaining);
    }

    // Template seed is attempt-independent: a grown radial basis keeps the
    // previous centers as a prefix and only adds fresh ones.
    Policy pol = train::make_template(
        cfg.kind, role, problem, tc, attempt,
        substream_seed(cfg.seed, (std::string(tag) + "-template").c_str()));

    const std::int64_t N = sample_size_for(pol, spec);
    std::cout << "[pipeline] " << tag << " attempt " << attempt
              << ": capacity " << capacity_of(pol, tc, attempt) << ", N = "
              << N << std::endl;
    data::Dataset ds = data::generate_dataset(
        problem, N, substream_seed(cfg.seed, (std::string(tag) + "-data").c_str()));

    const train::TrainReport rep =
        is_primal ? train::train_primal(problem, ds.rows, pol, tc)
                  : train::train_dual(problem, ds.rows, pol, tc);

    pol.train_meta.epsilon = spec.epsilon;
    pol.train_meta.beta = spec.beta;

    AttemptLog log;
    log.role = tag;
    log.attempt = attempt;
    log.capacity = capacity_of(pol, tc, attempt);
    log.n_dec = pol.n_dec();
    log.N = N;
    log.t_star = rep.t_star;
    log.success = rep.success;
    attempts.push_back(log);
    std::cout << "[pipeline] " << tag << " attempt " << attempt
              << (rep.success ? " certified t* = " : " FAILED, t* = ")
              << rep.t_star << std::endl;

    if (is_primal) {
      primal = pol;
      ds_p = std::move(ds);
      t_p = rep.success ? rep.t_star : std::numeric_limits<double>::infinity();
      res.attempts_primal = attempt + 1;
      res.N_p = N;
      res.primal_capacity = log.capacity;
    } else {
      dual = pol;
      ds_d = std::move(ds);
      t_d = rep.success ? rep.t_star : std::numeric_limits<double>::infinity();
      res.attempts_dual = attempt + 1;
      res.N_d = N;
      res.dual_capacity = log.capacity;
    }
  };

  int attempt_p = 0, attempt_d = 0;
  train_one(Role::primal, attempt_p);
  train_one(Role::dual, attempt_d);

  int retries = 0;
  while (!(t_p + t_d <= cfg.t_max) && retries < cfg.train.max_growth_retries) {
    ++retries;
    // Grow whichever policy is binding and retrain it at the new capacity.
    if (t_p >= t_d) {
      train_one(Role::primal, ++attempt_p);
    } else {
      train_one(Role::dual, ++attempt_d);
    }
  }

  res.t_p_star = t_p;
  res.t_d_star = t_d;
  res.success = std::isfinite(t_p) && std::isfinite(t_d) &&
                t_p + t_d <= cfg.t_max;
  if (!res.success) {
    res.message = "capacity growth budget exhausted before certification";
  }

  // Artifacts: final datasets, policies, reports, manifest.
  data::save_csv(ds_p, path("primal_data.csv"));
  data::save_csv(ds_d, path("dual_data.csv"));
  policy::save_policy(primal, path("primal.policy"));
  policy::save_policy(dual, path("dual.policy"));

  std::vector<std::pair<std::string, std::string>> artifacts = {
      {"primal_data.csv", file_hash(path("primal_data.csv"))},
      {"dual_data.csv", file_hash(path("dual_data.csv"))},
      {"primal.policy", file_hash(path("primal.policy"))},
      {"dual.policy", file_hash(path("dual.policy"))},
  };

  if (res.success && cfg.run_eval && cfg.eval_samples > 0) {
    const eval::EvalReport er = eval::monte_carlo_eval(
        problem, primal, dual, cfg.eval_samples,
        substream_seed(cfg.seed, "eval"), cfg.t_max);
    write_text(path("eval_report.json"), er.to_json());
    artifacts.emplace_back("eval_report.json",
                           file_hash(path("eval_report.json")));
  }
  if (res.success && cfg.run_bench && cfg.bench_samples > 0) {
    const eval::BenchReport br =
        eval::bench(problem, primal, dual, cfg.bench_samples,
                    substream_seed(cfg.seed, "bench"));
    // Timing output is a machine measurement, deliberately not part of the
    // deterministic artifact list.
    write_text(path("bench_report.json"), br.to_json());
  }

  json manifest;
  manifest["format"] = "pdpl-manifest-v1";
  manifest["problem"] = problem_to_json(problem);
  manifest["config_hash"] = problem.hash_hex();
  manifest["pipeline"] = {
      {"epsilon", cfg.epsilon},
      {"beta", cfg.beta},
      {"epsilon_p", spec_p.epsilon},
      {"epsilon_d", spec_d.epsilon},
      {"beta_p", spec_p.beta},
      {"beta_d", spec_d.beta},
      {"t_max", cfg.t_max},
      {"kind", policy::to_string(cfg.kind)},
      {"seed", cfg.seed},
      {"eval_samples", cfg.eval_samples},
      {"bench_samples", cfg.bench_samples},
      {"run_bench", cfg.run_bench},
      {"run_eval", cfg.run_eval},
  };
  manifest["train"] = {
      {"penalty_init", cfg.train.penalty_init},
      {"penalty_growth", cfg.train.penalty_growth},
      {"penalty_stages", cfg.train.penalty_stages},
      {"learning_rate", cfg.train.learning_rate},
      {"lr_decay", cfg.train.lr_decay},
      {"epochs_per_stage", cfg.train.epochs_per_stage},
      {"batch_size", cfg.train.batch_size},
      {"phase_a_epochs", cfg.train.phase_a_epochs},
      {"feasibility_margin", cfg.train.feasibility_margin},
      {"rbn_start", cfg.train.rbn_start},
      {"rbn_increment", cfg.train.rbn_increment},
      {"mlp_start_width", cfg.train.mlp_start_width},
      {"mlp_depth", cfg.train.mlp_depth},
      {"mlp_width_increment", cfg.train.mlp_width_increment},
      {"max_growth_retries", cfg.train.max_growth_retries},
  };
  manifest["result"] = {
      {"success", res.success},
      {"t_p_star", res.t_p_star},
      {"t_d_star", res.t_d_star},
      {"N_p", res.N_p},
      {"N_d", res.N_d},
      {"primal_capacity", res.primal_capacity},
      {"dual_capacity", res.dual_capacity},
      {"growth_retries", retries},
  };
  for (const AttemptLog& a : attempts) {
    manifest["attempts"].push_back({{"role", a.role},
                                    {"attempt", a.attempt},
                                    {"capacity", a.capacity},
                                    {"n_dec", a.n_dec},
                                    {"N", a.N},
                                    {"t_star", a.t_star},
                                    {"success", a.success}});
  }
  for (const auto& [name, hash] : artifacts) {
    manifest["artifacts"].push_back({{"file", name}, {"fnv1a64", hash}});
  }
  manifest["threads"] = par::max_threads();

  res.manifest_path = path("manifest.json");
  write_text(res.manifest_path, manifest.dump(2) + "\n");
  return res;
}

PipelineResult replay_manifest(const std::string& manifest_path,
                               const std::string& out_dir) {
  std::ifstream f(manifest_path);
  if (!f) throw ConfigError("cannot open manifest: " + manifest_path);
  json manifest = json::parse(f);
  if (manifest.at("format") != "pdpl-manifest-v1") {
    throw ConfigError("unsupported manifest format");
  }

  const mpc::ProblemConfig problem = problem_from_json(manifest.at("problem"));

  PipelineConfig cfg;
  const json& pj = manifest.at("pipeline");
  cfg.epsilon = pj.at("epsilon");
  cfg.beta = pj.at("beta");
  cfg.t_max = pj.at("t_max");
  cfg.kind = pj.at("kind") == "rbn" ? Kind::rbn : Kind::mlp;
  cfg.seed = pj.at("seed");
  cfg.eval_samples = pj.at("eval_samples");
  cfg.bench_samples = pj.at("bench_samples");
  cfg.run_bench = pj.at("run_bench");
  cfg.run_eval = pj.at("run_eval");
  const json& tj = manifest.at("train");
  cfg.train.penalty_init = tj.at("penalty_init");
  cfg.train.penalty_growth = tj.at("penalty_growth");
  cfg.train.penalty_stages = tj.at("penalty_stages");
  cfg.train.learning_rate = tj.at("learning_rate");
  cfg.train.lr_decay = tj.at("lr_decay");
  cfg.train.epochs_per_stage = tj.at("epochs_per_stage");
  cfg.train.batch_size = tj.at("batch_size");
  cfg.train.phase_a_epochs = tj.at("phase_a_epochs");
  cfg.train.feasibility_margin = tj.at("feasibility_margin");
  cfg.train.rbn_start = tj.at("rbn_start");
  cfg.train.rbn_increment = tj.at("rbn_increment");
  cfg.train.mlp_start_width = tj.at("mlp_start_width");
  cfg.train.mlp_depth = tj.at("mlp_depth");
  cfg.train.mlp_width_increment = tj.at("mlp_width_increment");
  cfg.train.max_growth_retries = tj.at("max_growth_retries");
  cfg.out_dir = out_dir;
  return run_pipeline(problem, cfg);
}

}  // namespace pdpl::pipeline
