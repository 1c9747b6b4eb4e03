#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "qdlink/source.hpp"
#include "qdlink/units.hpp"

using namespace qdlink;
using namespace qdlink::source;

TEST_CASE("state at zero delay") {
  SourceParams p;
  CHECK(pol::fidelity_to_phi_plus(pair_state_at_delay(p, 0.0)) == doctest::Approx(1.0));
  p.mixing_p = 0.0;
  for (double tau : {0.0, 300.0, 5000.0}) {
    CHECK(pol::fidelity_to_phi_plus(pair_state_at_delay(p, tau)) == doctest::Approx(0.25));
  }
  CHECK_THROWS_AS(pair_state_at_delay(p, -1.0), std::domain_error);
}

TEST_CASE("fine structure oscillation") {
  SourceParams p;
  p.fss_energy_uev = 2.0;
  const double period = fss_period_ps(2.0);
  CHECK(period == doctest::Approx(2067.834).epsilon(1e-5));
  CHECK(pol::fidelity_to_phi_plus(pair_state_at_delay(p, period / 2)) == doctest::Approx(0.0).epsilon(1e-12));
  for (double tau : {0.0, 123.0, 777.7}) {
    auto a = pair_state_at_delay(p, tau).matrix();
    auto b = pair_state_at_delay(p, tau + period).matrix();
    CHECK((a - b).norm() < 1e-10);
  }
}

TEST_CASE("fast joint probabilities match the density matrix path") {
  SourceParams p;
  p.mixing_p = 0.8;
  auto u = pol::PolRotation::about_axis(pol::StokesVector::normalized({0.3, -0.5, 0.8}), 1.1).jones();
  for (double tau : {0.0, 250.0, 1400.0}) {
    for (auto b : pol::kAllBases) {
      auto fast = pair_joint_probabilities(p, tau, b, u);
      auto slow = pair_state_at_delay(p, tau).joint_probabilities(b, u);
      for (int i = 0; i < 4; ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("mixing calibration") {
  CHECK(calibrate_mixing_for_local_fidelity(1.0) == doctest::Approx(1.0));
  CHECK(calibrate_mixing_for_local_fidelity(0.25) == doctest::Approx(0.0));
  // (4 * 0.947 - 1) / 3
  CHECK(calibrate_mixing_for_local_fidelity(0.947) == doctest::Approx(0.929333).epsilon(1e-5));
  CHECK_THROWS_AS(calibrate_mixing_for_local_fidelity(0.2), std::domain_error);
  CHECK_THROWS_AS(calibrate_mixing_for_local_fidelity(1.01), std::domain_error);
}

TEST_CASE("emission statistics") {
  SourceParams p;
  p.pair_rate_hz = 0.0;
  CHECK(emit_pairs(p, 0.0, 10.0, 1).empty());

  p.pair_rate_hz = 1000.0;
  auto pairs = emit_pairs(p, 0.0, 1.0, 7);
  CHECK(std::abs(static_cast<double>(pairs.size()) - 1000.0) < 5 * std::sqrt(1000.0));
  CHECK(std::is_sorted(pairs.begin(), pairs.end(),
                       [](const PairEvent& a, const PairEvent& b) { return a.xx_emit_time < b.xx_emit_time; }));
  for (const auto& e : pairs) CHECK(e.x_emit_time >= e.xx_emit_time);

  auto again = emit_pairs(p, 0.0, 1.0, 7);
  REQUIRE(again.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(again[i].xx_emit_time == pairs[i].xx_emit_time);
    CHECK(again[i].x_emit_time == pairs[i].x_emit_time);
  }
}

TEST_CASE("inter-arrival times are exponential") {
  SourceParams p;
  p.pair_rate_hz = 1e5;
  auto pairs = emit_pairs(p, 0.0, 1.0, 11);
  std::vector<double> gaps;
  for (std::size_t i = 1; i < pairs.size(); ++i)
    gaps.push_back(ps_to_seconds(pairs[i].xx_emit_time - pairs[i - 1].xx_emit_time));
  std::sort(gaps.begin(), gaps.end());
  const double n = static_cast<double>(gaps.size());
  double d = 0;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    const double cdf = 1 - std::exp(-p.pair_rate_hz * gaps[i]);
    d = std::max({d, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
  }
  // Kolmogorov-Smirnov critical value at the 1% level.
  CHECK(d < 1.628 / std::sqrt(n));
}

TEST_CASE("dephasing average matches the Lorentzian closed form") {
  SourceParams p;
  p.pair_rate_hz = 1e6;
  auto pairs = emit_pairs(p, 0.0, 1.0, 3);
  double acc = 0, acc2 = 0;
  for (const auto& e : pairs) {
    const double f = (1 + std::cos(fss_phase(p.fss_energy_uev, e.delay_ps()))) / 2;
    acc += f;
    acc2 += f * f;
  }
  const double n = static_cast<double>(pairs.size());
  const double mean = acc / n;
  const double sd = std::sqrt((acc2 / n - mean * mean) / n);
  CHECK(std::abs(mean - mean_pure_fidelity(p)) < 3 * sd);
}

TEST_CASE("parameter validation names the key") {
  SourceParams p;
  p.x_lifetime_ps = 0;
  try {
    p.validate();
    FAIL("expected throw");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("x_lifetime_ps") != std::string::npos);
  }
}
