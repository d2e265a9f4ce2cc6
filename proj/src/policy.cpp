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

#include "pdpl/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pdpl/rng.hpp"

namespace pdpl::policy {

const char* to_string(Kind k) { return k == Kind::rbn ? "rbn" : "mlp"; }
const char* to_string(Role r) { return r == Role::primal ? "primal" : "dual"; }

void RbnSpec::validate() const {
  if (centers.rows() < 1 || centers.cols() < 1) {
    throw DimensionError("RBN needs at least one center");
  }
  if (scaling.size() != centers.cols()) {
    throw DimensionError("RBN scaling diagonal dimension mismatch");
  }
  if ((scaling.array() < 0.0).any()) {
    throw ConfigError("RBN scaling must be nonnegative");
  }
  if (output_dim < 1) throw DimensionError("RBN output dimension");
}

void rbn_features_into(const RbnSpec& spec, const Vec& p_flat, Vec& out) {
  if (p_flat.size() != spec.input_dim()) {
    throw DimensionError("rbn_features: parameter dimension mismatch");
  }
  const int n = spec.n_rb();
  const int d = spec.input_dim();
  for (int j = 0; j < n; ++j) {
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
      const double z = spec.scaling(k) * (p_flat(k) - spec.centers(j, k));
      sq += z * z;
    }
    const double b = 1.0 - 0.5 * std::sqrt(sq);
    out(j) = b * b * b;
  }
}

Vec rbn_features(const RbnSpec& spec, const Vec& p_flat) {
  Vec phi(spec.n_rb());
  rbn_features_into(spec, p_flat, phi);
  return phi;
}

void MlpPolicy::validate() const {
  shape.validate();
  const std::size_t L = static_cast<std::size_t>(shape.depth());
  if (weights.size() != L || biases.size() != L) {
    throw DimensionError("MLP layer count mismatch");
  }
  for (std::size_t i = 0; i < L; ++i) {
    if (weights[i].rows() != shape.dims[i + 1] ||
        weights[i].cols() != shape.dims[i] ||
        biases[i].size() != shape.dims[i + 1]) {
      throw DimensionError("MLP layer dimension mismatch");
    }
  }
}

MlpPolicy MlpPolicy::zeros(const bounds::MlpShape& shape) {
  shape.validate();
  MlpPolicy net;
  net.shape = shape;
  for (int i = 0; i + 1 < static_cast<int>(shape.dims.size()); ++i) {
    net.weights.push_back(Mat::Zero(shape.dims[i + 1], shape.dims[i]));
    net.biases.push_back(Vec::Zero(shape.dims[i + 1]));
  }
  return net;
}

MlpPolicy MlpPolicy::random_init(const bounds::MlpShape& shape,
                                 const Vec& input_scale, std::uint64_t seed) {
  MlpPolicy net = zeros(shape);
  SplitMix64 rng(seed);
  // The output layer starts at zero: the initial policy is the zero map,
  // which is dual feasible and (for boxes keeping u_prev inside the rate
  // bounds) primal feasible, so training starts from a valid incumbent.
  for (std::size_t l = 0; l + 1 < net.weights.size(); ++l) {
    Mat& W = net.weights[l];
    const double bound = std::sqrt(2.0 / static_cast<double>(W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        W(r, c) = rng.next_uniform(-bound, bound);
      }
    }
    if (l == 0 && input_scale.size() == W.cols()) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        const double s = input_scale(c);
        W.col(c) /= (s > 0.0 ? s : 1.0);
      }
    }
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      net.biases[l](r) = 0.1 * rng.next_uniform(-bound, bound);
    }
  }
  return net;
}

Vec MlpPolicy::forward(const Vec& input) const {
  Vec a = input;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    a = weights[l] * a + biases[l];
    if (l + 1 < weights.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

Vec MlpPolicy::forward_cached(const Vec& input,
                              std::vector<Vec>& pre_acts) const {
  pre_acts.clear();
  pre_acts.reserve(weights.size());
  Vec a = input;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    a = weights[l] * a + biases[l];
    pre_acts.push_back(a);
    if (l + 1 < weights.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

int Policy::input_dim() const {
  return kind == Kind::rbn ? rbn.input_dim() : mlp.shape.input_dim();
}

int Policy::output_dim() const {
  return kind == Kind::rbn ? rbn.output_dim : mlp.shape.output_dim();
}

std::int64_t Policy::param_count() const {
  if (kind == Kind::rbn) {
    return static_cast<std::int64_t>(coefficients.rows()) *
           coefficients.cols();
  }
  return mlp.shape.param_count();
}

Vec Policy::eval_raw(const Vec& p_flat) const {
  if (kind == Kind::rbn) {
    return coefficients * rbn_features(rbn, p_flat);
  }
  return mlp.forward(p_flat);
}

Vec eval_policy(const Policy& policy, const Vec& p_flat) {
  Vec out = policy.eval_raw(p_flat);
  if (policy.role == Role::dual) out = out.cwiseMax(0.0);
  return out;
}

Vec eval_policy(const Policy& policy, const mpc::ParameterVector& P) {
  return eval_policy(policy, P.flatten());
}

std::int64_t eval_flop_count(const Policy& policy) {
  if (policy.kind == Kind::rbn) {
    const std::int64_t n = policy.rbn.n_rb();
    const std::int64_t d = policy.rbn.input_dim();
    const std::int64_t o = policy.rbn.output_dim;
    // per center: d subs + d muls + d MACs for the norm, plus cube; then the
    // coefficient matvec.
    return n * (3 * d + 4) + 2 * o * n;
  }
  std::int64_t flops = 0;
  for (std::size_t l = 0; l < policy.mlp.weights.size(); ++l) {
    flops += 2 * policy.mlp.weights[l].rows() * policy.mlp.weights[l].cols() +
             policy.mlp.weights[l].rows();
  }
  return flops;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_bytes(out, &v, sizeof(T));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos + sizeof(T) > buf.size()) {
      throw NumericalError("policy file truncated");
    }
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

void put_matrix_rowmajor(std::vector<std::uint8_t>& out, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
  }
}

Mat get_matrix_rowmajor(Reader& in, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = in.get<double>();
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> serialize_policy(const Policy& policy) {
  std::vector<std::uint8_t> out;
  put_bytes(out, "PDPL", 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(policy.kind));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(policy.role));

  std::vector<std::uint32_t> dims;
  if (policy.kind == Kind::rbn) {
    dims = {static_cast<std::uint32_t>(policy.rbn.input_dim()),
            static_cast<std::uint32_t>(policy.rbn.n_rb()),
            static_cast<std::uint32_t>(policy.rbn.output_dim)};
  } else {
    for (int d : policy.mlp.shape.dims) {
      dims.push_back(static_cast<std::uint32_t>(d));
    }
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put(out, d);

  if (policy.kind == Kind::rbn) {
    for (Eigen::Index i = 0; i < policy.rbn.scaling.size(); ++i) {
      put(out, policy.rbn.scaling(i));
    }
    put_matrix_rowmajor(out, policy.rbn.centers);
    put_matrix_rowmajor(out, policy.coefficients);
  } else {
    for (std::size_t l = 0; l < policy.mlp.weights.size(); ++l) {
      put_matrix_rowmajor(out, policy.mlp.weights[l]);
      for (Eigen::Index i = 0; i < policy.mlp.biases[l].size(); ++i) {
        put(out, policy.mlp.biases[l](i));
      }
    }
  }

  put(out, policy.certified_t);
  put(out, policy.train_meta.seed);
  return out;
}

Policy deserialize_policy(const std::vector<std::uint8_t>& bytes) {
  Reader in{bytes};
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(in.get<std::uint8_t>());
  if (std::memcmp(magic, "PDPL", 4) != 0) {
    throw NumericalError("bad policy file magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw NumericalError("unsupported policy file version");
  }
  Policy pol;
  pol.kind = static_cast<Kind>(in.get<std::uint8_t>());
  pol.role = static_cast<Role>(in.get<std::uint8_t>());
  const auto ndims = in.get<std::uint32_t>();
  std::vector<std::uint32_t> dims(ndims);
  for (auto& d : dims) d = in.get<std::uint32_t>();

  if (pol.kind == Kind::rbn) {
    if (ndims != 3) throw NumericalError("rbn shape descriptor must be 3 dims");
    const Eigen::Index dim = dims[0], n_rb = dims[1], out_dim = dims[2];
    pol.rbn.scaling.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      pol.rbn.scaling(i) = in.get<double>();
    }
    pol.rbn.centers = get_matrix_rowmajor(in, n_rb, dim);
    pol.rbn.output_dim = static_cast<int>(out_dim);
    pol.coefficients = get_matrix_rowmajor(in, out_dim, n_rb);
  } else {
    if (ndims < 2) throw NumericalError("mlp shape descriptor needs 2+ dims");
    pol.mlp.shape.dims.assign(dims.begin(), dims.end());
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      pol.mlp.weights.push_back(get_matrix_rowmajor(in, dims[l + 1], dims[l]));
      Vec b(dims[l + 1]);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = in.get<double>();
      pol.mlp.biases.push_back(std::move(b));
    }
  }

  pol.certified_t = in.get<double>();
  pol.train_meta.seed = in.get<std::uint64_t>();
  if (in.pos != bytes.size()) {
    throw NumericalError("trailing bytes in policy file");
  }
  return pol;
}

void save_policy(const Policy& policy, const std::string& path) {
  const auto bytes = serialize_policy(policy);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write policy file: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("short write to policy file: " + path);
}

Policy load_policy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open policy file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_policy(bytes);
}

}  // namespace pdpl::policy
