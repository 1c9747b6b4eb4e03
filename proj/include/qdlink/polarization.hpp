#pragma once

#include <array>
#include <cstdint>
#include <complex>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

/// Exact polarization and two-photon state calculus.
///
/// Conventions, fixed once for the whole project:
///  - Jones vectors are written in the (H, V) basis.
///  - Stokes components of a Jones vector (a, b) are
///      s1 = |a|^2 - |b|^2,  s2 = 2 Re(a* b),  s3 = 2 Im(a* b),
///    so H = +s1, D = +s2 and right-circular R = (H + iV)/sqrt(2) = +s3.
///  - A rotation by angle t about Stokes axis n corresponds to the Jones
///    operator U = cos(t/2) I - i sin(t/2) (n1 sz + n2 sx + n3 sy), where
///    (sx, sy, sz) are the Pauli matrices. Global phase is never stored.
///  - Two-photon kets are ordered (HH, HV, VH, VV) with the X photon first
///    and the XX photon second.
namespace qdlink::pol {

using Complex = std::complex<double>;
using Jones = Eigen::Vector2cd;
using JonesOperator = Eigen::Matrix2cd;
using Ket4 = Eigen::Vector4cd;
using Matrix4c = Eigen::Matrix4cd;

/// Tolerance applied when validating unit-norm inputs.
inline constexpr double kUnitTolerance = 1e-9;

class StokesVector {
 public:
  /// Throws std::domain_error unless (s1, s2, s3) is unit-norm.
  StokesVector(double s1, double s2, double s3);

  /// Normalizes an arbitrary non-zero vector.
  static StokesVector normalized(const Eigen::Vector3d& v);
  static StokesVector from_jones(const Jones& j);

  static StokesVector H() { return {1, 0, 0}; }
  static StokesVector V() { return {-1, 0, 0}; }
  static StokesVector D() { return {0, 1, 0}; }
  static StokesVector A() { return {0, -1, 0}; }
  static StokesVector R() { return {0, 0, 1}; }
  static StokesVector L() { return {0, 0, -1}; }

  double s1() const { return v_.x(); }
  double s2() const { return v_.y(); }
  double s3() const { return v_.z(); }
  const Eigen::Vector3d& vec() const { return v_; }

  double dot(const StokesVector& o) const { return v_.dot(o.v_); }
  /// Great-circle angle on the Poincare sphere, radians.
  double angle_to(const StokesVector& o) const;
  StokesVector operator-() const { return StokesVector(-v_, Unchecked{}); }

  /// Jones vector with this Stokes vector, up to global phase.
  Jones jones() const;

 private:
  struct Unchecked {};
  StokesVector(const Eigen::Vector3d& v, Unchecked) : v_(v) {}
  Eigen::Vector3d v_;
  friend class PolRotation;
};

/// Element of SO(3) acting on Stokes space, stored as a unit quaternion.
class PolRotation {
 public:
  PolRotation() : q_(Eigen::Quaterniond::Identity()) {}

  static PolRotation identity() { return {}; }
  static PolRotation about_axis(const StokesVector& axis, double angle);
  /// Rotation by |w| radians about w/|w|; zero vector gives identity.
  static PolRotation from_rotation_vector(const Eigen::Vector3d& w);

  StokesVector apply(const StokesVector& s) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& v) const { return q_ * v; }

  /// (a * b) applies b first, then a.
  PolRotation operator*(const PolRotation& o) const;
  PolRotation inverse() const;

  /// Rotation angle in [0, pi].
  double angle() const;
  /// Unit axis; +s1 for the identity.
  StokesVector axis() const;
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }

  /// SU(2) Jones operator representing this rotation.
  JonesOperator jones() const;

  /// Re-projects onto the unit quaternions after long products.
  void renormalize() { q_.normalize(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

 private:
  explicit PolRotation(const Eigen::Quaterniond& q) : q_(q) {}
  Eigen::Quaterniond q_;
};

enum class Arm { X, XX };

enum class Basis : std::uint8_t { HV = 0, DA = 1, RL = 2 };

inline constexpr std::array<Basis, 3> kAllBases{Basis::HV, Basis::DA, Basis::RL};

std::string_view to_string(Basis b);
/// Throws std::invalid_argument for unknown labels.
Basis parse_basis(std::string_view label);

/// Analyzer eigenstate for a basis port; port 0 is H/D/R, port 1 is V/A/L.
Jones basis_state(Basis b, int port);
StokesVector basis_axis(Basis b);

/// Hermitian, unit-trace, positive semidefinite 4x4 density matrix.
class TwoPhotonState {
 public:
  /// Validates the density-matrix invariants; throws std::domain_error.
  explicit TwoPhotonState(const Matrix4c& rho);

  static TwoPhotonState pure(const Ket4& ket);
  static TwoPhotonState phi_plus();
  static TwoPhotonState phi_minus();
  static TwoPhotonState psi_plus();
  static TwoPhotonState psi_minus();
  static TwoPhotonState maximally_mixed();
  /// p |Phi+><Phi+| + (1 - p) I/4.
  static TwoPhotonState werner(double p);
  /// Mixture of the four Bell projectors (Phi+, Phi-, Psi+, Psi-).
  static TwoPhotonState bell_diagonal(const std::array<double, 4>& weights);

  /// Skips validation; for producers whose output is valid by construction.
  static TwoPhotonState trusted(const Matrix4c& rho) { return TwoPhotonState(rho, Trusted{}); }

  const Matrix4c& matrix() const { return rho_; }

  /// Joint outcome probabilities in one analyzer basis, indexed
  /// [2 * port_x + port_xx].
  std::array<double, 4> joint_probabilities(Basis b) const;
  /// Same, with an additional unitary acting on the XX photon first.
  std::array<double, 4> joint_probabilities(Basis b, const JonesOperator& u_xx) const;
  /// Reduced single-photon outcome probabilities for one arm.
  std::array<double, 2> marginal_probabilities(Basis b, Arm arm) const;

 private:
  struct Trusted {};
  TwoPhotonState(const Matrix4c& rho, Trusted) : rho_(rho) {}
  Matrix4c rho_;
};

struct Contrasts {
  double hv = 0;
  double da = 0;
  double rl = 0;

  double& operator[](Basis b);
  double operator[](Basis b) const;
  /// (1 + C_HV + C_DA - C_RL) / 4
  double fidelity() const { return (1.0 + hv + da - rl) / 4.0; }
};

/// (P1 - P2) / (P1 + P2) for a power split along basis_axis.
double projection_eta(const StokesVector& state, const StokesVector& basis_axis);

PolRotation rotation_about_axis(const StokesVector& axis, double angle);

TwoPhotonState apply_rotation_one_arm(const TwoPhotonState& rho, const PolRotation& r, Arm arm);

double fidelity_to_phi_plus(const TwoPhotonState& rho);

/// Co- minus cross-polarized coincidence probability in each basis.
Contrasts ideal_contrasts(const TwoPhotonState& rho);

/// Average of rho over the local-unitary group {I, sz sz, sx sx, sy sy};
/// the result is Bell-diagonal with the same Bell-state populations.
TwoPhotonState bell_diagonal_twirl(const TwoPhotonState& rho);

}  // namespace qdlink::pol
