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

#include "pdpl/lpv_mpc.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pdpl/ini.hpp"

namespace pdpl::mpc {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("vehicle parameter must be positive: ") + name);
  }
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(m, "m");
  require_positive(m_s, "m_s");
  require_positive(h_s, "h_s");
  require_positive(I_x, "I_x");
  require_positive(I_z, "I_z");
  require_positive(C_phi, "C_phi");
  require_positive(k_phi, "k_phi");
  require_positive(g, "g");
  require_positive(l_front, "l_front");
  require_positive(l_rear, "l_rear");
  require_positive(C_front, "C_front");
  require_positive(C_rear, "C_rear");
  if (dt < 0.0 || !std::isfinite(dt)) throw ConfigError("dt must be >= 0");
  if (std::abs(coupling_denominator()) < 1e-9) {
    throw NumericalError("degenerate coupling denominator m*I_x - m_s^2*h_s^2");
  }
}

void MpcSpec::validate() const {
  if (T < 1) throw ConfigError("horizon T must be >= 1");
  if (!Q_s.isApprox(Q_s.transpose(), 1e-12)) {
    throw ConfigError("Q_s must be symmetric");
  }
  if (!R_s.isApprox(R_s.transpose(), 1e-12)) {
    throw ConfigError("R_s must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eq(Q_s);
  if (eq.eigenvalues().minCoeff() < -1e-12) {
    throw ConfigError("Q_s must be positive semidefinite");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> er(R_s);
  if (er.eigenvalues().minCoeff() <= 0.0) {
    throw ConfigError("R_s must be positive definite");
  }
  if ((u_bar.array() <= 0.0).any() || (du_bar.array() <= 0.0).any()) {
    throw ConfigError("u_bar and du_bar must be elementwise positive");
  }
  if (terminal) {
    if (terminal->first.cols() != kNx ||
        terminal->first.rows() != terminal->second.size()) {
      throw DimensionError("terminal polytope dimensions mismatch");
    }
  }
}

Vec ParameterVector::flatten() const {
  const int T = horizon();
  Vec p(flat_dim(T));
  p.segment<kNx>(0) = x0;
  p(kNx) = v;
  for (int k = 0; k < T; ++k) {
    p.segment<kNy>(kNx + 1 + kNy * k) = y_ref.row(k).transpose();
  }
  p.segment(kNx + 1 + kNy * T, T) = delta;
  p.segment<kNu>(kNx + 1 + kNy * T + T) = u_prev;
  return p;
}

ParameterVector ParameterVector::unflatten(const Vec& p, int T) {
  if (p.size() != flat_dim(T)) {
    throw DimensionError("flattened parameter has wrong dimension");
  }
  ParameterVector P;
  P.x0 = p.segment<kNx>(0);
  P.v = p(kNx);
  P.y_ref.resize(T, kNy);
  for (int k = 0; k < T; ++k) {
    P.y_ref.row(k) = p.segment<kNy>(kNx + 1 + kNy * k).transpose();
  }
  P.delta = p.segment(kNx + 1 + kNy * T, T);
  P.u_prev = p.segment<kNu>(kNx + 1 + kNy * T + T);
  return P;
}

void ParameterBox::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw DimensionError("parameter box bounds dimension mismatch");
  }
  if (((upper - lower).array() < 0.0).any()) {
    throw ConfigError("parameter box requires lower <= upper");
  }
  if (!lower.allFinite() || !upper.allFinite()) {
    throw ConfigError("parameter box must be compact (finite bounds)");
  }
}

bool ParameterBox::contains(const Vec& p, double tol) const {
  if (p.size() != lower.size()) return false;
  return ((p - lower).array() >= -tol).all() &&
         ((upper - p).array() >= -tol).all();
}

LpvMatrices build_icc_matrices(const VehicleParams& vp, double v) {
  const double f = vp.coupling_denominator();
  if (std::abs(f) < 1e-9) {
    throw NumericalError("degenerate coupling denominator in ICC model");
  }
  if (std::abs(v) < 1e-9) {
    throw NumericalError("ICC model is singular at zero velocity");
  }

  const double C_bar = vp.C_front + vp.C_rear;
  const double C1 = vp.l_rear * vp.C_rear - vp.l_front * vp.C_front;
  const double C2 =
      vp.C_front * vp.l_front * vp.l_front + vp.C_rear * vp.l_rear * vp.l_rear;
  const double M_bar = vp.m_s * vp.g * vp.h_s - vp.k_phi;
  const double msh = vp.m_s * vp.h_s;

  Eigen::Matrix4d A_c;
  A_c << -C_bar * vp.I_x / (f * v), -1.0 + vp.I_x * C1 / (f * v * v),
      msh * M_bar / (f * v), msh * vp.C_phi / (f * v),
      C1 / vp.I_z, -C2 / (vp.I_z * v), 0.0, 0.0,
      0.0, 0.0, 0.0, 1.0,
      -msh * C_bar / f, -msh * C1 / (f * v), vp.m * M_bar / f,
      -vp.m * vp.C_phi / f;

  Eigen::Matrix<double, kNx, kNu> B_c;
  B_c << 0.0, msh / (f * v), vp.I_x / (f * v),
      1.0 / vp.I_z, 0.0, 0.0,
      0.0, 0.0, 0.0,
      0.0, vp.m / f, -msh / f;

  Eigen::Matrix<double, kNx, 1> E_c;
  E_c << vp.I_x * vp.C_front / (f * v), vp.C_front * vp.l_front / vp.I_z, 0.0,
      -msh * vp.C_front / f;

  LpvMatrices out;
  out.A_d = Eigen::Matrix4d::Identity() + A_c * vp.dt;
  out.B_d = B_c * vp.dt;
  out.E_d = E_c * vp.dt;
  if (!out.A_d.allFinite() || !out.B_d.allFinite() || !out.E_d.allFinite()) {
    throw NumericalError("non-finite ICC model entries");
  }
  return out;
}

CondensedQp condense_system(const Mat& A, const Mat& B, const Mat& E,
                            const Mat& C, const Mat& Q_s, const Mat& R_s,
                            const Vec& u_bar, const Vec& du_bar,
                            const std::optional<std::pair<Mat, Vec>>& terminal,
                            const Vec& x0, const Mat& y_ref, const Vec& delta,
                            const Vec& u_prev) {
  const int nx = static_cast<int>(A.rows());
  const int nu = static_cast<int>(B.cols());
  const int ny = static_cast<int>(C.rows());
  const int T = static_cast<int>(delta.size());
  if (A.cols() != nx || B.rows() != nx || E.rows() != nx || E.cols() != 1 ||
      C.cols() != nx || Q_s.rows() != ny || Q_s.cols() != ny ||
      R_s.rows() != nu || R_s.cols() != nu || u_bar.size() != nu ||
      du_bar.size() != nu || x0.size() != nx || y_ref.rows() != T ||
      y_ref.cols() != ny || u_prev.size() != nu || T < 1) {
    throw DimensionError("condense_system: inconsistent dimensions");
  }

  const int n = nu * T;

  // Prediction of the tracked outputs y_{k+1} = C x_{k+1}, k = 0..T-1:
  //   y = M_x x0 + M_u U + w,   w from the steering preview.
  Mat M_u = Mat::Zero(ny * T, n);
  Mat M_x(ny * T, nx);
  Vec w(ny * T);

  std::vector<Mat> Apow(T + 1);  // A^0 .. A^T
  Apow[0] = Mat::Identity(nx, nx);
  for (int k = 1; k <= T; ++k) Apow[k] = Apow[k - 1] * A;

  Vec free_state = Vec::Zero(nx);  // sum_j A^{k-j} E delta_j at step k+1
  for (int k = 0; k < T; ++k) {
    // x_{k+1} = A^{k+1} x0 + sum_{j<=k} A^{k-j} (B u_j + E delta_j)
    M_x.middleRows(ny * k, ny) = C * Apow[k + 1];
    for (int j = 0; j <= k; ++j) {
      M_u.block(ny * k, nu * j, ny, nu) = C * (Apow[k - j] * B);
    }
    free_state = A * free_state + E * delta(k);
    w.segment(ny * k, ny) = C * free_state;
  }

  Mat Qt = Mat::Zero(ny * T, ny * T);
  Mat Rt = Mat::Zero(n, n);
  for (int k = 0; k < T; ++k) {
    Qt.block(ny * k, ny * k, ny, ny) = Q_s;
    Rt.block(nu * k, nu * k, nu, nu) = R_s;
  }

  Vec r(ny * T);
  for (int k = 0; k < T; ++k) r.segment(ny * k, ny) = y_ref.row(k).transpose();

  const Vec e0 = M_x * x0 + w - r;  // tracking error at U = 0

  CondensedQp out;
  out.Q = 2.0 * (M_u.transpose() * Qt * M_u + Rt);
  out.Q = 0.5 * (out.Q + out.Q.transpose().eval());
  out.c = 2.0 * (M_u.transpose() * (Qt * e0));
  out.const_offset = e0.dot(Qt * e0);

  // Constraint rows: input upper, input lower, rate upper, rate lower,
  // each block k-major over the horizon, then optional terminal rows.
  const int m_base = 4 * n;
  const int m_term = terminal ? static_cast<int>(terminal->first.rows()) : 0;
  out.H = Mat::Zero(m_base + m_term, n);
  out.h = Vec::Zero(m_base + m_term);

  for (int k = 0; k < T; ++k) {
    for (int j = 0; j < nu; ++j) {
      const int col = nu * k + j;
      out.H(nu * k + j, col) = 1.0;             // u_k <= u_bar
      out.h(nu * k + j) = u_bar(j);
      out.H(n + nu * k + j, col) = -1.0;        // -u_k <= u_bar
      out.h(n + nu * k + j) = u_bar(j);

      const int up = 2 * n + nu * k + j;        // u_k - u_{k-1} <= du_bar
      const int lo = 3 * n + nu * k + j;        // u_{k-1} - u_k <= du_bar
      out.H(up, col) = 1.0;
      out.H(lo, col) = -1.0;
      if (k == 0) {
        out.h(up) = du_bar(j) + u_prev(j);
        out.h(lo) = du_bar(j) - u_prev(j);
      } else {
        out.H(up, col - nu) = -1.0;
        out.H(lo, col - nu) = 1.0;
        out.h(up) = du_bar(j);
        out.h(lo) = du_bar(j);
      }
    }
  }

  if (terminal) {
    const Mat& F = terminal->first;
    const Vec& fvec = terminal->second;
    // x_T = A^T x0 + sum_j A^{T-1-j} (B u_j + E delta_j)
    Vec x_free = Apow[T] * x0;
    {
      Vec acc = Vec::Zero(nx);
      for (int j = 0; j < T; ++j) acc = A * acc + E * delta(j);
      x_free += acc;
    }
    for (int j = 0; j < T; ++j) {
      out.H.block(m_base, nu * j, m_term, nu) = F * (Apow[T - 1 - j] * B);
    }
    out.h.segment(m_base, m_term) = fvec - F * x_free;
  }

  return out;
}

CondensedQp condense(const MpcSpec& spec, const VehicleParams& vp,
                     const ParameterVector& P) {
  if (P.horizon() != spec.T || P.y_ref.rows() != spec.T ||
      P.y_ref.cols() != kNy) {
    throw DimensionError("parameter horizon does not match MPC spec");
  }
  const LpvMatrices sys = build_icc_matrices(vp, P.v);
  return condense_system(sys.A_d, sys.B_d, sys.E_d, spec.C, spec.Q_s, spec.R_s,
                         spec.u_bar, spec.du_bar, spec.terminal, P.x0, P.y_ref,
                         P.delta, P.u_prev);
}

double simulate_objective(const MpcSpec& spec, const VehicleParams& vp,
                          const ParameterVector& P, const Vec& U) {
  if (U.size() != spec.n_dec()) throw DimensionError("input sequence size");
  const LpvMatrices sys = build_icc_matrices(vp, P.v);
  Eigen::Vector4d x = P.x0;
  double cost = 0.0;
  for (int k = 0; k < spec.T; ++k) {
    const Eigen::Vector3d u = U.segment<kNu>(kNu * k);
    x = sys.A_d * x + sys.B_d * u + sys.E_d * P.delta(k);
    const Eigen::Vector3d err = spec.C * x - P.y_ref.row(k).transpose();
    cost += err.dot(spec.Q_s * err) + u.dot(spec.R_s * u);
  }
  return cost;
}

Vec sample_parameter_flat(const ParameterBox& box, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Vec p(box.dim());
  for (int i = 0; i < box.dim(); ++i) {
    p(i) = rng.next_uniform(box.lower(i), box.upper(i));
  }
  return p;
}

ParameterVector sample_parameter(const ParameterBox& box, std::uint64_t seed,
                                 int T) {
  if (box.dim() != ParameterVector::flat_dim(T)) {
    throw DimensionError("box dimension does not match horizon");
  }
  return ParameterVector::unflatten(sample_parameter_flat(box, seed), T);
}

// --------------------------------------------------------------------------
// Config plumbing
// --------------------------------------------------------------------------

namespace {

ParameterBox default_box(const MpcSpec& spec) {
  const int T = spec.T;
  const int dim = ParameterVector::flat_dim(T);
  Vec lo(dim), hi(dim);
  const Eigen::Vector4d x_hw(0.055, 0.275, 0.055, 0.275);
  lo.segment<kNx>(0) = -x_hw;
  hi.segment<kNx>(0) = x_hw;
  lo(kNx) = 3.0;
  hi(kNx) = 25.0;
  const Eigen::Vector3d y_hw(0.055, 0.275, 0.055);
  for (int k = 0; k < T; ++k) {
    lo.segment<kNy>(kNx + 1 + kNy * k) = -y_hw;
    hi.segment<kNy>(kNx + 1 + kNy * k) = y_hw;
  }
  lo.segment(kNx + 1 + kNy * T, T).setConstant(-0.055);
  hi.segment(kNx + 1 + kNy * T, T).setConstant(0.055);
  // Previous input kept strictly inside the rate box so the zero sequence is
  // feasible with margin for every draw (the sampled learning problem then
  // always has a feasible policy, and the first-step rate bounds stay
  // bounded away from zero).
  const Eigen::Vector3d u_hw = 0.8 * spec.du_bar.cwiseMin(spec.u_bar);
  lo.segment<kNu>(kNx + 1 + kNy * T + T) = -u_hw;
  hi.segment<kNu>(kNx + 1 + kNy * T + T) = u_hw;
  return ParameterBox{lo, hi};
}

Eigen::Vector3d get_vec3(const ini::IniFile& f, const char* sec,
                         const char* key, const Eigen::Vector3d& fallback) {
  const std::vector<double> def{fallback(0), fallback(1), fallback(2)};
  const auto v = f.get_list(sec, key, def);
  if (v.size() != 3) {
    throw ConfigError(std::string(sec) + "." + key + " needs 3 entries");
  }
  return Eigen::Vector3d(v[0], v[1], v[2]);
}

void get_range(const ini::IniFile& f, const char* key, double& lo, double& hi) {
  const auto v = f.get_list("box", key, {lo, hi});
  if (v.size() != 2 || v[0] > v[1]) {
    throw ConfigError(std::string("box.") + key + " needs 'min, max'");
  }
  lo = v[0];
  hi = v[1];
}

}  // namespace

ProblemConfig ProblemConfig::defaults() {
  ProblemConfig cfg;
  cfg.box = default_box(cfg.mpc);
  cfg.vehicle.validate();
  cfg.mpc.validate();
  cfg.box.validate();
  return cfg;
}

ProblemConfig ProblemConfig::from_ini_text(const std::string& text) {
  const ini::IniFile f = ini::IniFile::parse(text);
  ProblemConfig cfg;

  VehicleParams& vp = cfg.vehicle;
  vp.m = f.get_double("vehicle", "m", vp.m);
  vp.m_s = f.get_double("vehicle", "m_s", vp.m_s);
  vp.h_s = f.get_double("vehicle", "h_s", vp.h_s);
  vp.I_x = f.get_double("vehicle", "i_x", vp.I_x);
  vp.I_z = f.get_double("vehicle", "i_z", vp.I_z);
  vp.C_phi = f.get_double("vehicle", "c_phi", vp.C_phi);
  vp.k_phi = f.get_double("vehicle", "k_phi", vp.k_phi);
  vp.g = f.get_double("vehicle", "g", vp.g);
  vp.l_front = f.get_double("vehicle", "l_front", vp.l_front);
  vp.l_rear = f.get_double("vehicle", "l_rear", vp.l_rear);
  vp.C_front = f.get_double("vehicle", "c_front", vp.C_front);
  vp.C_rear = f.get_double("vehicle", "c_rear", vp.C_rear);
  vp.dt = f.get_double("vehicle", "dt", vp.dt);

  MpcSpec& spec = cfg.mpc;
  spec.T = static_cast<int>(f.get_int("mpc", "horizon", spec.T));
  spec.Q_s = get_vec3(f, "mpc", "q_s", spec.Q_s.diagonal()).asDiagonal();
  spec.R_s = get_vec3(f, "mpc", "r_s", spec.R_s.diagonal()).asDiagonal();
  spec.u_bar = get_vec3(f, "mpc", "u_bar", spec.u_bar);
  spec.du_bar = get_vec3(f, "mpc", "du_bar", spec.du_bar);

  ParameterBox box = default_box(spec);
  const int T = spec.T;
  auto set_range = [&](const char* key, int offset, int count) {
    double lo = box.lower(offset), hi = box.upper(offset);
    get_range(f, key, lo, hi);
    for (int i = 0; i < count; ++i) {
      box.lower(offset + i) = lo;
      box.upper(offset + i) = hi;
    }
  };
  set_range("beta", 0, 1);
  set_range("r", 1, 1);
  set_range("phi", 2, 1);
  set_range("phi_dot", 3, 1);
  set_range("v", kNx, 1);
  for (int k = 0; k < T; ++k) {
    set_range("y_ref_beta", kNx + 1 + kNy * k + 0, 1);
    set_range("y_ref_r", kNx + 1 + kNy * k + 1, 1);
    set_range("y_ref_phi", kNx + 1 + kNy * k + 2, 1);
  }
  set_range("delta", kNx + 1 + kNy * T, T);
  set_range("u_prev_0", kNx + 1 + kNy * T + T + 0, 1);
  set_range("u_prev_1", kNx + 1 + kNy * T + T + 1, 1);
  set_range("u_prev_2", kNx + 1 + kNy * T + T + 2, 1);
  cfg.box = box;

  const auto leftover = f.unconsumed();
  if (!leftover.empty()) {
    throw ConfigError("unknown config key: " + leftover.front());
  }

  cfg.vehicle.validate();
  cfg.mpc.validate();
  cfg.box.validate();
  if (cfg.box.lower(kNx) <= 0.0) {
    throw ConfigError("velocity box must be strictly positive");
  }
  return cfg;
}

ProblemConfig ProblemConfig::load(const std::string& path) {
  std::ifstream fs(path);
  if (!fs) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << fs.rdbuf();
  return from_ini_text(buf.str());
}

std::string ProblemConfig::canonical_text() const {
  std::ostringstream o;
  auto put = [&](const char* k, double v) {
    o << k << " = " << format_double(v) << "\n";
  };
  o << "[vehicle]\n";
  put("c_front", vehicle.C_front);
  put("c_phi", vehicle.C_phi);
  put("c_rear", vehicle.C_rear);
  put("dt", vehicle.dt);
  put("g", vehicle.g);
  put("h_s", vehicle.h_s);
  put("i_x", vehicle.I_x);
  put("i_z", vehicle.I_z);
  put("k_phi", vehicle.k_phi);
  put("l_front", vehicle.l_front);
  put("l_rear", vehicle.l_rear);
  put("m", vehicle.m);
  put("m_s", vehicle.m_s);
  o << "[mpc]\n";
  o << "horizon = " << mpc.T << "\n";
  auto put3 = [&](const char* k, const Eigen::Vector3d& v) {
    o << k << " = " << format_double(v(0)) << ", " << format_double(v(1))
      << ", " << format_double(v(2)) << "\n";
  };
  put3("du_bar", mpc.du_bar);
  put3("q_s", mpc.Q_s.diagonal());
  put3("r_s", mpc.R_s.diagonal());
  put3("u_bar", mpc.u_bar);
  o << "[box]\n";
  for (int i = 0; i < box.dim(); ++i) {
    o << "b" << i << " = " << format_double(box.lower(i)) << ", "
      << format_double(box.upper(i)) << "\n";
  }
  return o.str();
}

std::string ProblemConfig::hash_hex() const {
  return to_hex(fnv1a64(canonical_text()));
}

}  // namespace pdpl::mpc
