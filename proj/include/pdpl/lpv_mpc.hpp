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

#ifndef PDPL_LPV_MPC_HPP_
#define PDPL_LPV_MPC_HPP_

#include <cstdint>
#include <optional>
#include <string>

#include "pdpl/common.hpp"
#include "pdpl/rng.hpp"

namespace pdpl::mpc {

inline constexpr int kNx = 4;  // [beta, r, phi, phi_dot]
inline constexpr int kNu = 3;  // [yaw moment, roll moment, lateral force]
inline constexpr int kNy = 3;

/// Chassis parameters of the single-track + roll vehicle model.
struct VehicleParams {
  double m = 1830.0;        // total mass [kg]
  double m_s = 1650.0;      // sprung mass [kg]
  double h_s = 0.53;        // roll moment arm [m]
  double I_x = 700.0;       // roll inertia [kg m^2]
  double I_z = 3200.0;      // yaw inertia [kg m^2]
  double C_phi = 4500.0;    // roll damping [N m s/rad]
  double k_phi = 140000.0;  // roll stiffness [N m/rad]
  double g = 9.81;          // gravity [m/s^2]
  double l_front = 1.4;     // CoG to front axle [m]
  double l_rear = 1.65;     // CoG to rear axle [m]
  double C_front = 90000.0;  // front cornering stiffness [N/rad]
  double C_rear = 110000.0;  // rear cornering stiffness [N/rad]
  double dt = 0.01;          // discretization step [s]

  /// m*I_x - m_s^2*h_s^2, the denominator shared by the model entries.
  double coupling_denominator() const { return m * I_x - m_s * m_s * h_s * h_s; }

  /// Throws ConfigError when a physical quantity is nonpositive (dt may be
  /// zero) or the coupling denominator degenerates.
  void validate() const;
};

/// Discrete-time LPV model at one longitudinal velocity.
struct LpvMatrices {
  Eigen::Matrix<double, kNx, kNx> A_d;
  Eigen::Matrix<double, kNx, kNu> B_d;
  Eigen::Matrix<double, kNx, 1> E_d;
};

/// Horizon, costs and constraint bounds of the tracking MPC.
struct MpcSpec {
  int T = 3;
  Eigen::Matrix3d Q_s = Eigen::Vector3d(2.0e3, 4.0e2, 2.0e3).asDiagonal();
  Eigen::Matrix3d R_s = Eigen::Vector3d(1e-6, 1e-6, 1e-6).asDiagonal();
  Eigen::Matrix<double, kNy, kNx> C =
      (Eigen::Matrix<double, kNy, kNx>() << 1, 0, 0, 0,
                                            0, 1, 0, 0,
                                            0, 0, 1, 0).finished();
  Eigen::Vector3d u_bar = Eigen::Vector3d(3000.0, 3000.0, 3000.0);
  Eigen::Vector3d du_bar = Eigen::Vector3d(1500.0, 1500.0, 1500.0);
  /// Optional terminal half-spaces F x_T <= f, appended after the input rows.
  std::optional<std::pair<Mat, Vec>> terminal;

  int n_dec() const { return kNu * T; }
  int n_rows() const {
    int rows = 4 * kNu * T;
    if (terminal) rows += static_cast<int>(terminal->first.rows());
    return rows;
  }

  void validate() const;
};

/// The MPC parameter: everything the condensed QP depends on.
struct ParameterVector {
  Eigen::Vector4d x0 = Eigen::Vector4d::Zero();
  double v = 10.0;
  Mat y_ref;    // T x 3, row k is the target for the output after input k
  Vec delta;    // T steering preview [rad]
  Eigen::Vector3d u_prev = Eigen::Vector3d::Zero();

  static int flat_dim(int T) { return kNx + 1 + kNy * T + T + kNu; }

  int horizon() const { return static_cast<int>(delta.size()); }

  /// Canonical flattening: [x0(4), v, y_ref row-major (3T), delta(T),
  /// u_prev(3)]. This order is the public contract for dataset columns,
  /// policy inputs and box bounds.
  Vec flatten() const;
  static ParameterVector unflatten(const Vec& p, int T);
};

/// Compact box the parameters are drawn from.
struct ParameterBox {
  Vec lower;
  Vec upper;

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
  bool contains(const Vec& p, double tol = 0.0) const;

  Vec mid() const { return 0.5 * (lower + upper); }
  Vec half_width() const { return 0.5 * (upper - lower); }
};

/// Condensed QP data: min 1/2 U'QU + c'U s.t. HU <= h. `const_offset` is the
/// parameter-dependent constant dropped from the objective; adding it back
/// recovers the tracking cost of the original horizon problem.
struct CondensedQp {
  Mat Q;
  Vec c;
  Mat H;
  Vec h;
  double const_offset = 0.0;
};

/// Discrete ICC model at velocity v: A_d = I + A_c(v) dt, B_d = B_c(v) dt,
/// E_d = E_c(v) dt (forward Euler at 100 Hz by default).
LpvMatrices build_icc_matrices(const VehicleParams& vp, double v);

/// Condenses the horizon problem for parameter P into a dense QP in the
/// stacked input sequence U = [u_0; ...; u_{T-1}].
///
/// Row order of (H, h): input upper bounds (k = 0..T-1), input lower bounds,
/// rate upper bounds, rate lower bounds, then any terminal rows. Each bound
/// block iterates k-major with the kNu input components inside.
CondensedQp condense(const MpcSpec& spec, const VehicleParams& vp,
                     const ParameterVector& P);

/// Generic condensation core for an arbitrary LTI system over the horizon;
/// the ICC path wraps this with build_icc_matrices. Tracked outputs are the
/// predicted outputs after each input, y_{k+1} = C x_{k+1}, matched against
/// y_ref row k.
CondensedQp condense_system(const Mat& A, const Mat& B, const Mat& E,
                            const Mat& C, const Mat& Q_s, const Mat& R_s,
                            const Vec& u_bar, const Vec& du_bar,
                            const std::optional<std::pair<Mat, Vec>>& terminal,
                            const Vec& x0, const Mat& y_ref, const Vec& delta,
                            const Vec& u_prev);

/// Componentwise-uniform draw from the box, a pure function of (box, seed).
ParameterVector sample_parameter(const ParameterBox& box, std::uint64_t seed,
                                 int T);
Vec sample_parameter_flat(const ParameterBox& box, std::uint64_t seed);

/// Everything needed to instantiate the problem; loadable from an INI file
/// with [vehicle], [mpc] and [box] sections.
struct ProblemConfig {
  VehicleParams vehicle;
  MpcSpec mpc;
  ParameterBox box;

  static ProblemConfig defaults();
  static ProblemConfig load(const std::string& path);
  static ProblemConfig from_ini_text(const std::string& text);

  /// Canonical key-sorted serialization; its FNV-1a hash identifies the
  /// config in every artifact file.
  std::string canonical_text() const;
  std::string hash_hex() const;

  CondensedQp condense_for(const ParameterVector& P) const {
    return condense(mpc, vehicle, P);
  }
};

/// Rolls the system forward from P.x0 applying the stacked input sequence U
/// and returns the tracking objective of the horizon problem (the value the
/// condensed objective plus const_offset must reproduce).
double simulate_objective(const MpcSpec& spec, const VehicleParams& vp,
                          const ParameterVector& P, const Vec& U);

}  // namespace pdpl::mpc

#endif  // PDPL_LPV_MPC_HPP_
