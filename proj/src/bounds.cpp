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

#include "pdpl/bounds.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace pdpl::bounds {

namespace {
constexpr double kE = 2.718281828459045;

std::int64_t ceil_to_count(double x, const char* what) {
  if (!std::isfinite(x) || x >= 9.2e18) {
    throw NumericalError(std::string("sample size overflow in ") + what);
  }
  const double c = std::ceil(x);
  return static_cast<std::int64_t>(c < 1.0 ? 1.0 : c);
}
}  // namespace

void BoundSpec::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ConfigError("epsilon must lie in (0,1)");
  }
  if (!(beta > 0.0 && beta < 1.0)) {
    throw ConfigError("beta must lie in (0,1)");
  }
}

std::int64_t MlpShape::param_count() const {
  std::int64_t w = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    w += static_cast<std::int64_t>(dims[i + 1]) * dims[i] + dims[i + 1];
  }
  return w;
}

void MlpShape::validate() const {
  if (dims.size() < 2) throw ConfigError("MLP shape needs >= 1 layer");
  for (int d : dims) {
    if (d < 1) throw ConfigError("MLP layer widths must be positive");
  }
}

std::int64_t scenario_sample_size(const BoundSpec& spec, std::int64_t n_dec) {
  spec.validate();
  if (n_dec < 1) throw ConfigError("n_dec must be >= 1");
  const double raw = (2.0 / spec.epsilon) *
                     (static_cast<double>(n_dec - 1) +
                      std::log(1.0 / spec.beta));
  return ceil_to_count(raw, "scenario_sample_size");
}

double vc_upper_bound(const MlpShape& shape) {
  shape.validate();
  const int L = shape.depth();
  const double W = static_cast<double>(shape.param_count());
  double s1 = 0.0;  // sum_i i * n_act^i
  double s2 = 0.0;  // sum_i 2e * i * n_act^i
  for (int i = 1; i <= L; ++i) {
    const double n_act = static_cast<double>(shape.dims[i]);
    s1 += i * n_act;
    s2 += 2.0 * kE * i * n_act;
  }
  return L + L * W * std::log2(4.0 * kE * s1 * std::log2(s2));
}

std::int64_t learning_theory_sample_size(const BoundSpec& spec, double xi) {
  spec.validate();
  if (!(xi >= 1.0)) throw ConfigError("VC dimension must be >= 1");
  const double raw =
      (4.0 / spec.epsilon) *
      (xi * std::log(12.0 / spec.epsilon) + std::log(2.0 / spec.beta));
  return ceil_to_count(raw, "learning_theory_sample_size");
}

double log_binomial_tail(std::int64_t n, double epsilon, std::int64_t N) {
  if (n < 1 || N < 0) throw ConfigError("log_binomial_tail: bad arguments");
  if (N < n) return 0.0;  // tail covers everything: probability 1
  return log_binomial_cdf(N, epsilon, n - 1);
}

double log_binomial_cdf(std::int64_t N, double p, std::int64_t k) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("binomial p must be in (0,1)");
  if (k < 0) return -std::numeric_limits<double>::infinity();
  if (k >= N) return 0.0;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  const double lgN = std::lgamma(static_cast<double>(N) + 1.0);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(k + 1));
  for (std::int64_t i = 0; i <= k; ++i) {
    const double t = lgN - std::lgamma(static_cast<double>(i) + 1.0) -
                     std::lgamma(static_cast<double>(N - i) + 1.0) +
                     static_cast<double>(i) * lp +
                     static_cast<double>(N - i) * lq;
    terms.push_back(t);
    if (t > max_term) max_term = t;
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  return max_term + std::log(acc);
}

std::int64_t exact_tail_sample_size(const BoundSpec& spec, std::int64_t n_dec) {
  spec.validate();
  if (n_dec < 1) throw ConfigError("n_dec must be >= 1");
  const double log_beta = std::log(spec.beta);
  std::int64_t lo = n_dec;
  std::int64_t hi = scenario_sample_size(spec, n_dec);
  if (log_binomial_tail(n_dec, spec.epsilon, lo) <= log_beta) return lo;
  // tail(hi) <= beta by the closed-form guarantee; bisect the crossing.
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (log_binomial_tail(n_dec, spec.epsilon, mid) <= log_beta) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

}  // namespace pdpl::bounds
