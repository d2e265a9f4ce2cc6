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

#ifndef PDPL_BOUNDS_HPP_
#define PDPL_BOUNDS_HPP_

#include <cstdint>
#include <vector>

#include "pdpl/common.hpp"

namespace pdpl::bounds {

/// Violation probability epsilon and confidence parameter beta, both in (0,1).
struct BoundSpec {
  double epsilon = 0.1;
  double beta = 2e-7;

  void validate() const;
  BoundSpec half() const { return {epsilon / 2.0, beta / 2.0}; }
};

/// Layer sizes of a ReLU network: dims = [input, hidden..., output].
/// Every affine layer's output units count as activation units, including the
/// final linear layer (the one-layer network of a bare affine map has L = 1
/// and n_act = [output_dim]).
struct MlpShape {
  std::vector<int> dims;

  int depth() const { return static_cast<int>(dims.size()) - 1; }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  /// Total number of weights and biases.
  std::int64_t param_count() const;

  void validate() const;
};

/// Scenario-optimization sample size for a convex learning problem with
/// n_dec decision variables: ceil((2/eps) * ((n_dec - 1) + ln(1/beta))).
/// Natural logarithm throughout.
std::int64_t scenario_sample_size(const BoundSpec& spec, std::int64_t n_dec);

/// VC-dimension upper bound for a ReLU network,
///   xi(L, W) = L + L W log2(4e S1 log2(S2)),
/// with S1 = sum_i i n_act^i and S2 = sum_i 2e i n_act^i over layers 1..L.
double vc_upper_bound(const MlpShape& shape);

/// Statistical-learning sample size for VC dimension xi:
/// ceil((4/eps) * (xi ln(12/eps) + ln(2/beta))).
std::int64_t learning_theory_sample_size(const BoundSpec& spec, double xi);

/// log of the binomial tail B_{n,eps}(N) = sum_{i<n} C(N,i) eps^i (1-eps)^(N-i)
/// evaluated in log space.
double log_binomial_tail(std::int64_t n, double epsilon, std::int64_t N);

/// Smallest N with B_{n_dec,eps}(N) <= beta (bisection; always <= the
/// closed-form scenario_sample_size).
std::int64_t exact_tail_sample_size(const BoundSpec& spec, std::int64_t n_dec);

/// One-sided binomial test: log P[Bin(N, p) <= k].
double log_binomial_cdf(std::int64_t N, double p, std::int64_t k);

}  // namespace pdpl::bounds

#endif  // PDPL_BOUNDS_HPP_
