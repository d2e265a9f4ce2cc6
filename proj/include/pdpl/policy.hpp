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

#ifndef PDPL_POLICY_HPP_
#define PDPL_POLICY_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "pdpl/bounds.hpp"
#include "pdpl/common.hpp"
#include "pdpl/lpv_mpc.hpp"

namespace pdpl::policy {

enum class Kind : std::uint8_t { rbn = 0, mlp = 1 };
enum class Role : std::uint8_t { primal = 0, dual = 1 };

const char* to_string(Kind k);
const char* to_string(Role r);

/// Radial basis network: output = Theta * kappa(P) with
/// kappa_j(P) = (1 - ||W_s (P - P_c^j)||_2 / 2)^3. The cubic is evaluated as
/// written and goes negative beyond distance 2 (no clamping).
struct RbnSpec {
  Mat centers;   // n_rb x dim
  Vec scaling;   // diagonal of W_s
  int output_dim = 0;

  int n_rb() const { return static_cast<int>(centers.rows()); }
  int input_dim() const { return static_cast<int>(centers.cols()); }
  void validate() const;
};

Vec rbn_features(const RbnSpec& spec, const Vec& p_flat);
/// Allocation-free variant for hot paths; `out` must have n_rb entries.
void rbn_features_into(const RbnSpec& spec, const Vec& p_flat, Vec& out);

/// ReLU network as a chain of affine layers with max(0, .) between them;
/// the final layer is affine with no output activation.
struct MlpPolicy {
  bounds::MlpShape shape;
  std::vector<Mat> weights;  // W_i: dims[i+1] x dims[i]
  std::vector<Vec> biases;   // b_i: dims[i+1]

  void validate() const;
  static MlpPolicy zeros(const bounds::MlpShape& shape);
  /// Scaled uniform init; the first layer is column-scaled by 1/input_scale
  /// so raw (unnormalized) parameter vectors land in a sane activation range.
  static MlpPolicy random_init(const bounds::MlpShape& shape,
                               const Vec& input_scale, std::uint64_t seed);

  Vec forward(const Vec& input) const;
  /// Forward pass that also stores per-layer pre-activations (training use).
  Vec forward_cached(const Vec& input, std::vector<Vec>& pre_acts) const;
};

struct TrainMeta {
  std::uint64_t seed = 0;
  std::int64_t sample_size = 0;
  double epsilon = 0.0;
  double beta = 0.0;
};

/// A trained (or in-training) policy of either parametrization. Dual-role
/// policies clamp their raw output at zero componentwise when evaluated, so
/// multiplier estimates are nonnegative by construction.
struct Policy {
  Kind kind = Kind::rbn;
  Role role = Role::primal;

  RbnSpec rbn;
  Mat coefficients;  // output_dim x n_rb (rbn kind)
  MlpPolicy mlp;     // (mlp kind)

  double certified_t = std::numeric_limits<double>::quiet_NaN();
  TrainMeta train_meta;

  bool is_certified() const { return std::isfinite(certified_t); }
  int input_dim() const;
  int output_dim() const;
  std::int64_t param_count() const;
  /// Decision-variable count of the corresponding learning problem
  /// (parameters + 1 for the suboptimality level).
  std::int64_t n_dec() const { return param_count() + 1; }

  /// Raw parametrized output, before any role-dependent repair.
  Vec eval_raw(const Vec& p_flat) const;
};

/// Policy output at parameter P; applies the dual clamp for role == dual.
Vec eval_policy(const Policy& policy, const Vec& p_flat);
Vec eval_policy(const Policy& policy, const mpc::ParameterVector& P);

/// Exact multiply-add count of one evaluation (input-independent by
/// construction; used by the instrumentation checks and the timing docs).
std::int64_t eval_flop_count(const Policy& policy);

// ---------------------------------------------------------------------------
// PDPL weight file: little-endian, magic "PDPL", u32 version, u8 kind,
// u8 role, u32 ndims + u32 dims[], f64 parameters, footer f64 certified_t
// (NaN when uncertified) + u64 training seed. Round-trips bit-exactly.
//
// Shape descriptor and parameter layout:
//   rbn: dims = [input_dim, n_rb, output_dim]; parameters = W_s diagonal
//        (input_dim), centers row-major (n_rb x input_dim), coefficients
//        row-major (output_dim x n_rb).
//   mlp: dims = layer sizes [input, hidden..., output]; parameters per layer
//        in order: W_i row-major, then b_i.
// ---------------------------------------------------------------------------

void save_policy(const Policy& policy, const std::string& path);
Policy load_policy(const std::string& path);

std::vector<std::uint8_t> serialize_policy(const Policy& policy);
Policy deserialize_policy(const std::vector<std::uint8_t>& bytes);

}  // namespace pdpl::policy

#endif  // PDPL_POLICY_HPP_
