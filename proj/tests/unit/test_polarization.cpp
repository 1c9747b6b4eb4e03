#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "qdlink/polarization.hpp"

using namespace qdlink::pol;

namespace {

StokesVector random_stokes(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return StokesVector::normalized(Eigen::Vector3d(n(rng), n(rng), n(rng)));
}

PolRotation random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, std::numbers::pi);
  return PolRotation::about_axis(random_stokes(rng), u(rng));
}

TwoPhotonState random_state(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix4c g;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) g(i, j) = Complex(n(rng), n(rng));
  Matrix4c rho = g * g.adjoint();
  rho /= rho.trace().real();
  return TwoPhotonState(rho);
}

std::array<double, 4> random_weights(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::array<double, 4> w{};
  double s = 0;
  for (auto& x : w) s += (x = g(rng));
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace

TEST_CASE("projection eta") {
  CHECK(projection_eta(StokesVector::H(), StokesVector::H()) == doctest::Approx(1.0));
  CHECK(projection_eta(StokesVector::H(), StokesVector::D()) == doctest::Approx(0.0));
  const double t = std::numbers::pi / 3;
  StokesVector s(std::cos(t), std::sin(t), 0);
  CHECK(projection_eta(s, StokesVector::H()) == doctest::Approx(0.5));
  CHECK_THROWS_AS(StokesVector(1.0, 0.1, 0.0), std::domain_error);
}

TEST_CASE("eta equals dot product for random pairs") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_stokes(rng), b = random_stokes(rng);
    const double d = a.dot(b);
    const double p1 = (1 + d) / 2, p2 = (1 - d) / 2;
    CHECK(projection_eta(a, b) == doctest::Approx((p1 - p2) / (p1 + p2)).epsilon(1e-12));
  }
}

TEST_CASE("rotation about axis") {
  auto r0 = rotation_about_axis(StokesVector::D(), 0.0);
  CHECK(r0.angle() == doctest::Approx(0.0));
  auto half = rotation_about_axis(StokesVector::H(), std::numbers::pi);
  auto a = half.apply(StokesVector::D());
  CHECK(a.s2() == doctest::Approx(-1.0));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 200; ++i) {
    auto axis = random_stokes(rng);
    const double x = u(rng), y = u(rng);
    Eigen::Matrix3d m = rotation_about_axis(axis, y).matrix() * rotation_about_axis(axis, x).matrix();
    CHECK((m - rotation_about_axis(axis, x + y).matrix()).norm() < 1e-12);
    auto round = rotation_about_axis(axis, x) * rotation_about_axis(axis, -x);
    CHECK(round.angle() < 1e-10);
  }
}

TEST_CASE("rotations preserve dot products and match their Jones operator") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto r = random_rotation(rng);
    auto a = random_stokes(rng), b = random_stokes(rng);
    CHECK(r.apply(a).dot(r.apply(b)) == doctest::Approx(a.dot(b)).epsilon(1e-12));
    auto via_jones = StokesVector::from_jones(r.jones() * a.jones());
    CHECK((via_jones.vec() - r.apply(a).vec()).norm() < 1e-12);
  }
}

TEST_CASE("circular handedness") {
  Jones r(1 / std::sqrt(2.0), Complex(0, 1 / std::sqrt(2.0)));
  CHECK(StokesVector::from_jones(r).s3() == doctest::Approx(1.0));
}

TEST_CASE("fixing two orthogonal references fixes everything") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1e-6);
  for (int i = 0; i < 200; ++i) {
    auto r = PolRotation::from_rotation_vector(Eigen::Vector3d(n(rng), n(rng), n(rng)));
    if (r.apply(StokesVector::H()).dot(StokesVector::H()) < 1 - 1e-10) continue;
    if (r.apply(StokesVector::R()).dot(StokesVector::R()) < 1 - 1e-10) continue;
    CHECK(r.angle() <= 1e-4);
  }
}

TEST_CASE("one-arm rotation") {
  auto phi = TwoPhotonState::phi_plus();
  CHECK(fidelity_to_phi_plus(apply_rotation_one_arm(phi, PolRotation::identity(), Arm::XX)) ==
        doctest::Approx(1.0));
  auto flipped = apply_rotation_one_arm(phi, rotation_about_axis(StokesVector::H(), std::numbers::pi), Arm::XX);
  CHECK(fidelity_to_phi_plus(flipped) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((flipped.matrix() - TwoPhotonState::phi_minus().matrix()).norm() < 1e-12);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    auto rho = random_state(rng);
    auto out = apply_rotation_one_arm(rho, random_rotation(rng), i % 2 ? Arm::X : Arm::XX);
    CHECK(out.matrix().trace().real() == doctest::Approx(1.0));
    Eigen::SelfAdjointEigenSolver<Matrix4c> e1(rho.matrix()), e2(out.matrix());
    CHECK((e1.eigenvalues() - e2.eigenvalues()).norm() < 1e-10);
  }
}

TEST_CASE("fidelity to phi plus") {
  CHECK(fidelity_to_phi_plus(TwoPhotonState::phi_plus()) == doctest::Approx(1.0));
  Ket4 hh(1, 0, 0, 0);
  CHECK(fidelity_to_phi_plus(TwoPhotonState::pure(hh)) == doctest::Approx(0.5));
  CHECK(fidelity_to_phi_plus(TwoPhotonState::maximally_mixed()) == doctest::Approx(0.25));
}

TEST_CASE("ideal contrasts") {
  auto c = ideal_contrasts(TwoPhotonState::phi_plus());
  CHECK(c.hv == doctest::Approx(1.0));
  CHECK(c.da == doctest::Approx(1.0));
  CHECK(c.rl == doctest::Approx(-1.0));
  auto m = ideal_contrasts(TwoPhotonState::maximally_mixed());
  CHECK(std::abs(m.hv) + std::abs(m.da) + std::abs(m.rl) < 1e-12);
  for (double p : {0.0, 0.3, 0.896, 1.0}) {
    auto w = ideal_contrasts(TwoPhotonState::werner(p));
    CHECK(w.hv == doctest::Approx(p));
    CHECK(w.da == doctest::Approx(p));
    CHECK(w.rl == doctest::Approx(-p));
  }
}

TEST_CASE("contrast fidelity formula over random states") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10000; ++i) {
    auto bd = TwoPhotonState::bell_diagonal(random_weights(rng));
    REQUIRE(ideal_contrasts(bd).fidelity() == doctest::Approx(fidelity_to_phi_plus(bd)).epsilon(1e-10));
    if (i % 20 == 0) {
      auto rho = random_state(rng);
      auto tw = bell_diagonal_twirl(rho);
      REQUIRE(ideal_contrasts(tw).fidelity() == doctest::Approx(fidelity_to_phi_plus(rho)).epsilon(1e-10));
    }
  }
}

TEST_CASE("basis projectors sum to identity") {
  for (auto b : kAllBases) {
    JonesOperator sum = JonesOperator::Zero();
    for (int p = 0; p < 2; ++p) sum += basis_state(b, p) * basis_state(b, p).adjoint();
    CHECK((sum - JonesOperator::Identity()).norm() < 1e-12);
    CHECK(parse_basis(to_string(b)) == b);
  }
  CHECK_THROWS_AS(parse_basis("XY"), std::invalid_argument);
}

TEST_CASE("density matrix validation") {
  Matrix4c bad = Matrix4c::Identity();
  CHECK_THROWS_AS(TwoPhotonState{bad}, std::domain_error);
  Matrix4c neg = Matrix4c::Zero();
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  CHECK_THROWS_AS(TwoPhotonState{neg}, std::domain_error);
}
