#include "qdlink/polarization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

namespace qdlink::pol {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
const Complex kI{0.0, 1.0};

void require_unit(const Eigen::Vector3d& v, const char* what) {
  if (!std::isfinite(v.squaredNorm()) || std::abs(v.squaredNorm() - 1.0) > kUnitTolerance) {
    throw std::domain_error(std::string(what) + " must be a unit Stokes vector");
  }
}

Ket4 kron(const Jones& a, const Jones& b) {
  Ket4 k;
  k << a(0) * b(0), a(0) * b(1), a(1) * b(0), a(1) * b(1);
  return k;
}

Matrix4c kron(const JonesOperator& a, const JonesOperator& b) {
  Matrix4c m;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) m(2 * i + k, 2 * j + l) = a(i, j) * b(k, l);
  return m;
}

JonesOperator pauli_z() { return (JonesOperator() << 1, 0, 0, -1).finished(); }
JonesOperator pauli_x() { return (JonesOperator() << 0, 1, 1, 0).finished(); }
JonesOperator pauli_y() { return (JonesOperator() << 0, -kI, kI, 0).finished(); }

Ket4 bell_ket(int index) {
  Ket4 k = Ket4::Zero();
  switch (index) {
    case 0: k(0) = kInvSqrt2; k(3) = kInvSqrt2; break;   // Phi+
    case 1: k(0) = kInvSqrt2; k(3) = -kInvSqrt2; break;  // Phi-
    case 2: k(1) = kInvSqrt2; k(2) = kInvSqrt2; break;   // Psi+
    default: k(1) = kInvSqrt2; k(2) = -kInvSqrt2; break; // Psi-
  }
  return k;
}

}  // namespace

// ---------------------------------------------------------------------------
// StokesVector

StokesVector::StokesVector(double s1, double s2, double s3) : v_(s1, s2, s3) {
  require_unit(v_, "StokesVector");
}

StokesVector StokesVector::normalized(const Eigen::Vector3d& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("cannot normalize a zero Stokes vector");
  return StokesVector(v / n, Unchecked{});
}

StokesVector StokesVector::from_jones(const Jones& j) {
  const Complex ab = std::conj(j(0)) * j(1);
  const Eigen::Vector3d v(std::norm(j(0)) - std::norm(j(1)), 2.0 * ab.real(), 2.0 * ab.imag());
  return normalized(v);
}

double StokesVector::angle_to(const StokesVector& o) const {
  // atan2 form stays accurate near 0 and pi.
  return std::atan2(v_.cross(o.v_).norm(), v_.dot(o.v_));
}

Jones StokesVector::jones() const {
  const double theta = std::acos(std::clamp(v_.x(), -1.0, 1.0));
  const double phi = std::atan2(v_.z(), v_.y());
  return Jones(Complex(std::cos(theta / 2), 0.0), std::polar(std::sin(theta / 2), phi));
}

// ---------------------------------------------------------------------------
// PolRotation

PolRotation PolRotation::about_axis(const StokesVector& axis, double angle) {
  require_unit(axis.vec(), "rotation axis");
  return PolRotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.vec())));
}

PolRotation PolRotation::from_rotation_vector(const Eigen::Vector3d& w) {
  const double t = w.norm();
  if (t == 0.0) return identity();
  return PolRotation(Eigen::Quaterniond(Eigen::AngleAxisd(t, w / t)));
}

StokesVector PolRotation::apply(const StokesVector& s) const {
  Eigen::Vector3d r = q_ * s.vec();
  return StokesVector(r / r.norm(), StokesVector::Unchecked{});
}

PolRotation PolRotation::operator*(const PolRotation& o) const { return PolRotation(q_ * o.q_); }

PolRotation PolRotation::inverse() const { return PolRotation(q_.conjugate()); }

double PolRotation::angle() const {
  return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w()));
}

StokesVector PolRotation::axis() const {
  const Eigen::Vector3d v = q_.w() < 0 ? Eigen::Vector3d(-q_.vec()) : Eigen::Vector3d(q_.vec());
  if (v.norm() == 0.0) return StokesVector::H();
  return StokesVector::normalized(v);
}

JonesOperator PolRotation::jones() const {
  const double w = q_.w(), x = q_.x(), y = q_.y(), z = q_.z();
  JonesOperator u;
  u << Complex(w, -x), Complex(-z, -y),
       Complex(z, -y), Complex(w, x);
  return u;
}

// ---------------------------------------------------------------------------
// Bases

std::string_view to_string(Basis b) {
  switch (b) {
    case Basis::HV: return "HV";
    case Basis::DA: return "DA";
    case Basis::RL: return "RL";
  }
  return "?";
}

Basis parse_basis(std::string_view label) {
  if (label == "HV") return Basis::HV;
  if (label == "DA") return Basis::DA;
  if (label == "RL") return Basis::RL;
  throw std::invalid_argument("unknown basis label '" + std::string(label) + "'");
}

Jones basis_state(Basis b, int port) {
  const double sign = port == 0 ? 1.0 : -1.0;
  switch (b) {
    case Basis::HV: return port == 0 ? Jones(1, 0) : Jones(0, 1);
    case Basis::DA: return Jones(kInvSqrt2, sign * kInvSqrt2);
    case Basis::RL: return Jones(kInvSqrt2, sign * kI * kInvSqrt2);
  }
  throw std::invalid_argument("invalid basis");
}

StokesVector basis_axis(Basis b) {
  switch (b) {
    case Basis::HV: return StokesVector::H();
    case Basis::DA: return StokesVector::D();
    case Basis::RL: return StokesVector::R();
  }
  throw std::invalid_argument("invalid basis");
}

// ---------------------------------------------------------------------------
// TwoPhotonState

TwoPhotonState::TwoPhotonState(const Matrix4c& rho) : rho_(rho) {
  if (!rho.allFinite()) throw std::domain_error("density matrix has non-finite entries");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::domain_error("density matrix is not Hermitian");
  if (std::abs(rho.trace() - Complex(1.0, 0.0)) > 1e-12)
    throw std::domain_error("density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(rho, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::domain_error("density matrix has a negative eigenvalue");
}

TwoPhotonState TwoPhotonState::pure(const Ket4& ket) {
  const double n = ket.norm();
  if (!(n > 0.0)) throw std::domain_error("zero ket");
  const Ket4 k = ket / n;
  return trusted(k * k.adjoint());
}

TwoPhotonState TwoPhotonState::phi_plus() { return pure(bell_ket(0)); }
TwoPhotonState TwoPhotonState::phi_minus() { return pure(bell_ket(1)); }
TwoPhotonState TwoPhotonState::psi_plus() { return pure(bell_ket(2)); }
TwoPhotonState TwoPhotonState::psi_minus() { return pure(bell_ket(3)); }

TwoPhotonState TwoPhotonState::maximally_mixed() { return trusted(Matrix4c::Identity() / 4.0); }

TwoPhotonState TwoPhotonState::werner(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("Werner weight must lie in [0, 1]");
  const Ket4 k = bell_ket(0);
  return trusted(p * (k * k.adjoint()) + (1.0 - p) / 4.0 * Matrix4c::Identity());
}

TwoPhotonState TwoPhotonState::bell_diagonal(const std::array<double, 4>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::domain_error("Bell weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::domain_error("Bell weights must sum to 1");
  Matrix4c rho = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) {
    const Ket4 k = bell_ket(i);
    rho += weights[i] * (k * k.adjoint());
  }
  return trusted(rho);
}

std::array<double, 4> TwoPhotonState::joint_probabilities(Basis b) const {
  return joint_probabilities(b, JonesOperator::Identity());
}

std::array<double, 4> TwoPhotonState::joint_probabilities(Basis b, const JonesOperator& u_xx) const {
  const JonesOperator ud = u_xx.adjoint();
  std::array<double, 4> p{};
  for (int i = 0; i < 2; ++i) {
    const Jones ex = basis_state(b, i);
    for (int j = 0; j < 2; ++j) {
      const Ket4 v = kron(ex, Jones(ud * basis_state(b, j)));
      p[2 * i + j] = std::max(0.0, (v.adjoint() * rho_ * v)(0).real());
    }
  }
  return p;
}

std::array<double, 2> TwoPhotonState::marginal_probabilities(Basis b, Arm arm) const {
  const auto p = joint_probabilities(b);
  if (arm == Arm::X) return {p[0] + p[1], p[2] + p[3]};
  return {p[0] + p[2], p[1] + p[3]};
}

// ---------------------------------------------------------------------------
// Contrasts

double& Contrasts::operator[](Basis b) {
  switch (b) {
    case Basis::HV: return hv;
    case Basis::DA: return da;
    case Basis::RL: return rl;
  }
  throw std::invalid_argument("invalid basis");
}

double Contrasts::operator[](Basis b) const { return const_cast<Contrasts&>(*this)[b]; }

// ---------------------------------------------------------------------------
// Operations

double projection_eta(const StokesVector& state, const StokesVector& basis_axis) {
  require_unit(state.vec(), "state");
  require_unit(basis_axis.vec(), "basis axis");
  const double c = state.dot(basis_axis);
  const double p1 = (1.0 + c) / 2.0;
  const double p2 = (1.0 - c) / 2.0;
  return (p1 - p2) / (p1 + p2);
}

PolRotation rotation_about_axis(const StokesVector& axis, double angle) {
  return PolRotation::about_axis(axis, angle);
}

TwoPhotonState apply_rotation_one_arm(const TwoPhotonState& rho, const PolRotation& r, Arm arm) {
  const JonesOperator u = r.jones();
  const JonesOperator id = JonesOperator::Identity();
  const Matrix4c k = arm == Arm::XX ? kron(id, u) : kron(u, id);
  Matrix4c out = k * rho.matrix() * k.adjoint();
  out = 0.5 * (out + out.adjoint()).eval();
  return TwoPhotonState::trusted(out);
}

double fidelity_to_phi_plus(const TwoPhotonState& rho) {
  const Ket4 k = bell_ket(0);
  return std::clamp((k.adjoint() * rho.matrix() * k)(0).real(), 0.0, 1.0);
}

Contrasts ideal_contrasts(const TwoPhotonState& rho) {
  Contrasts c;
  for (Basis b : kAllBases) {
    const auto p = rho.joint_probabilities(b);
    c[b] = (p[0] + p[3]) - (p[1] + p[2]);
  }
  return c;
}

TwoPhotonState bell_diagonal_twirl(const TwoPhotonState& rho) {
  const std::array<JonesOperator, 4> ops{JonesOperator::Identity(), pauli_z(), pauli_x(), pauli_y()};
  Matrix4c acc = Matrix4c::Zero();
  for (const auto& s : ops) {
    const Matrix4c k = kron(s, s);
    acc += k * rho.matrix() * k.adjoint();
  }
  acc /= 4.0;
  return TwoPhotonState::trusted(0.5 * (acc + acc.adjoint()));
}

}  // namespace qdlink::pol
