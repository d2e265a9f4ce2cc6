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

#include "pdpl/dataset.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pdpl/parallel.hpp"
#include "pdpl/rng.hpp"

namespace pdpl::data {

namespace {

constexpr int kMaxRejectionsPerSample = 64;

// Deterministic per-index draw: rejected parameters are replaced inside the
// sample's own substream, so the accepted row never depends on other rows.
train::SampleRow label_one(const mpc::ProblemConfig& cfg,
                           const qp::SolverConfig& solver, std::uint64_t seed,
                           std::int64_t index, std::int64_t& rejections) {
  for (int attempt = 0; attempt < kMaxRejectionsPerSample; ++attempt) {
    const std::uint64_t sub = substream_seed(
        seed, static_cast<std::uint64_t>(index) * 1000003ULL +
                  static_cast<std::uint64_t>(attempt));
    const Vec p = mpc::sample_parameter_flat(cfg.box, sub);
    const auto P = mpc::ParameterVector::unflatten(p, cfg.mpc.T);
    const mpc::CondensedQp qp = cfg.condense_for(P);
    const qp::QpSolution sol = qp::solve_primal(qp, solver);
    if (sol.status == qp::SolveStatus::optimal) {
      train::SampleRow row;
      row.p_flat = p;
      row.J_star = sol.J_star;
      row.U_star = sol.U_star;
      row.lambda_star = sol.lambda_star;
      return row;
    }
    ++rejections;
  }
  throw NumericalError("dataset generation: sample " + std::to_string(index) +
                       " kept rejecting; the parameter box looks infeasible");
}

}  // namespace

Dataset generate_dataset(const mpc::ProblemConfig& cfg, std::int64_t N,
                         std::uint64_t seed, GenerateStats* stats,
                         const qp::SolverConfig& solver) {
  if (N < 1) throw ConfigError("dataset size must be >= 1");
  Dataset ds;
  ds.rows.resize(static_cast<std::size_t>(N));
  std::vector<std::int64_t> rejections(static_cast<std::size_t>(N), 0);

  par::parallel_for(static_cast<std::size_t>(N), [&](std::size_t i) {
    ds.rows[i] = label_one(cfg, solver, seed, static_cast<std::int64_t>(i),
                           rejections[i]);
  });

  std::int64_t rejected = 0;
  for (auto r : rejections) rejected += r;
  if (rejected > N / 10) {
    throw NumericalError(
        "dataset generation: rejection rate above 10%, fix the parameter box");
  }

  ds.header.config_hash = cfg.hash_hex();
  ds.header.seed = seed;
  ds.header.n = N;
  ds.header.T = cfg.mpc.T;
  ds.header.param_dim = mpc::ParameterVector::flat_dim(cfg.mpc.T);
  ds.header.n_dec = cfg.mpc.n_dec();
  ds.header.n_rows = cfg.mpc.n_rows();
  ds.header.rejected = rejected;
  if (stats) {
    stats->accepted = N;
    stats->rejected = rejected;
    stats->attempted = N + rejected;
  }
  return ds;
}

std::string to_csv(const Dataset& ds) {
  std::ostringstream o;
  const DatasetHeader& hd = ds.header;
  o << "# pdpl-dataset v1 config=" << hd.config_hash << " seed=" << hd.seed
    << " n=" << hd.n << " T=" << hd.T << " param_dim=" << hd.param_dim
    << " n_dec=" << hd.n_dec << " n_rows=" << hd.n_rows
    << " rejected=" << hd.rejected << "\n";
  for (int i = 0; i < hd.param_dim; ++i) o << "p" << i << ",";
  o << "J_star";
  for (int i = 0; i < hd.n_dec; ++i) o << ",u" << i;
  for (int i = 0; i < hd.n_rows; ++i) o << ",lam" << i;
  o << "\n";
  for (const train::SampleRow& row : ds.rows) {
    for (int i = 0; i < hd.param_dim; ++i) {
      o << format_double(row.p_flat(i)) << ",";
    }
    o << format_double(row.J_star);
    for (int i = 0; i < hd.n_dec; ++i) {
      o << "," << format_double(row.U_star(i));
    }
    for (int i = 0; i < hd.n_rows; ++i) {
      o << "," << format_double(row.lambda_star(i));
    }
    o << "\n";
  }
  return o.str();
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write dataset file: " + path);
  const std::string text = to_csv(ds);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw ConfigError("short write to dataset file: " + path);
}

Dataset load_csv(const std::string& path, const mpc::ProblemConfig& cfg,
                 double spot_check_fraction, const qp::SolverConfig& solver) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("# pdpl-dataset v1", 0) != 0) {
    throw ConfigError("not a pdpl dataset file: " + path);
  }

  Dataset ds;
  DatasetHeader& hd = ds.header;
  {
    std::istringstream hs(line);
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "config") hd.config_hash = val;
      else if (key == "seed") hd.seed = std::stoull(val);
      else if (key == "n") hd.n = std::stoll(val);
      else if (key == "T") hd.T = std::stoi(val);
      else if (key == "param_dim") hd.param_dim = std::stoi(val);
      else if (key == "n_dec") hd.n_dec = std::stoi(val);
      else if (key == "n_rows") hd.n_rows = std::stoi(val);
      else if (key == "rejected") hd.rejected = std::stoll(val);
    }
  }
  if (hd.T != cfg.mpc.T || hd.param_dim != mpc::ParameterVector::flat_dim(cfg.mpc.T) ||
      hd.n_dec != cfg.mpc.n_dec() || hd.n_rows != cfg.mpc.n_rows()) {
    throw ConfigError("dataset dimensions do not match the config");
  }
  if (hd.config_hash != cfg.hash_hex()) {
    throw ConfigError("dataset was generated under a different config");
  }

  if (!std::getline(f, line)) throw ConfigError("dataset missing column row");

  ds.rows.reserve(static_cast<std::size_t>(hd.n));
  const int ncols = hd.param_dim + 1 + hd.n_dec + hd.n_rows;
  std::vector<double> vals;
  vals.reserve(ncols);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    vals.clear();
    const char* p = line.c_str();
    char* end = nullptr;
    for (int i = 0; i < ncols; ++i) {
      vals.push_back(std::strtod(p, &end));
      if (end == p) throw ConfigError("malformed dataset row");
      p = (*end == ',') ? end + 1 : end;
    }
    train::SampleRow row;
    row.p_flat = Eigen::Map<const Vec>(vals.data(), hd.param_dim);
    row.J_star = vals[hd.param_dim];
    row.U_star =
        Eigen::Map<const Vec>(vals.data() + hd.param_dim + 1, hd.n_dec);
    row.lambda_star = Eigen::Map<const Vec>(
        vals.data() + hd.param_dim + 1 + hd.n_dec, hd.n_rows);
    ds.rows.push_back(std::move(row));
  }
  if (static_cast<std::int64_t>(ds.rows.size()) != hd.n) {
    throw ConfigError("dataset row count does not match its header");
  }

  // Spot-check a fraction of the rows against the KKT conditions.
  if (spot_check_fraction > 0.0 && !ds.rows.empty()) {
    const auto stride = static_cast<std::size_t>(
        std::max(1.0, 1.0 / spot_check_fraction));
    for (std::size_t i = 0; i < ds.rows.size(); i += stride) {
      const train::SampleRow& row = ds.rows[i];
      const auto P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
      const mpc::CondensedQp qp = cfg.condense_for(P);
      const qp::KktResidual r =
          qp::kkt_residuals(qp, row.U_star, row.lambda_star);
      if (r.max() > 100.0 * solver.tol) {
        throw NumericalError("dataset row " + std::to_string(i) +
                             " fails the KKT spot check");
      }
      const double J = qp::eval_primal_cost(qp, row.U_star);
      if (std::abs(J - row.J_star) > 1e-6 * std::max(1.0, std::abs(J))) {
        throw NumericalError("dataset row " + std::to_string(i) +
                             " J_star mismatch");
      }
    }
  }
  return ds;
}

train::LabeledSample expand_row(const mpc::ProblemConfig& cfg,
                                const train::SampleRow& row) {
  train::LabeledSample s;
  s.P = mpc::ParameterVector::unflatten(row.p_flat, cfg.mpc.T);
  s.qp = cfg.condense_for(s.P);
  s.dqp = qp::build_dual(s.qp);
  s.J_star = row.J_star;
  s.U_star = row.U_star;
  s.lambda_star = row.lambda_star;
  return s;
}

}  // namespace pdpl::data
