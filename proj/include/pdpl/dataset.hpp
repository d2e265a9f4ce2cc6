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

#ifndef PDPL_DATASET_HPP_
#define PDPL_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "pdpl/qp.hpp"
#include "pdpl/train.hpp"

namespace pdpl::data {

struct DatasetHeader {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::int64_t n = 0;
  int T = 0;
  int param_dim = 0;
  int n_dec = 0;
  int n_rows = 0;
  std::int64_t rejected = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<train::SampleRow> rows;
};

struct GenerateStats {
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  std::int64_t attempted = 0;
};

/// Draws N i.i.d. parameters from the config box and labels each with the
/// exact QP solution. Infeasible draws are rejected and replaced inside the
/// sample's own substream, so row i is a pure function of (config, seed, i).
/// Throws NumericalError when the rejection rate exceeds 10% (bad box).
Dataset generate_dataset(const mpc::ProblemConfig& cfg, std::int64_t N,
                         std::uint64_t seed, GenerateStats* stats = nullptr,
                         const qp::SolverConfig& solver = {});

/// CSV serialization with a typed header; doubles are written in shortest
/// exact form so files are byte-reproducible and lossless.
std::string to_csv(const Dataset& ds);
void save_csv(const Dataset& ds, const std::string& path);

/// Loads and validates a dataset; `spot_check_fraction` of the rows get their
/// labels re-verified against kkt_residuals at solver tolerance.
Dataset load_csv(const std::string& path, const mpc::ProblemConfig& cfg,
                 double spot_check_fraction = 0.01,
                 const qp::SolverConfig& solver = {});

/// LabeledSample view of one row (rebuilds qp/dqp from the config).
train::LabeledSample expand_row(const mpc::ProblemConfig& cfg,
                                const train::SampleRow& row);

}  // namespace pdpl::data

#endif  // PDPL_DATASET_HPP_
