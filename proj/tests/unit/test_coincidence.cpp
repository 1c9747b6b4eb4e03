#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qdlink/coincidence.hpp"

using namespace qdlink;
using namespace qdlink::coinc;
using pol::Basis;

namespace {

std::vector<DetectionEvent> local_stream(const source::SourceParams& src, const DetectorParams& det, double seconds,
                                         std::uint64_t seed, double switch_s = 600.0) {
  ClickGenerator gen(src, det, 40000.0, seed);
  BasisSchedule sched;
  sched.switch_period_s = switch_s;
  LinkSnapshot link;
  link.tof_ps = det.x_channel_delay_ps;
  std::vector<DetectionEvent> ev;
  for (double t = 0.0; t < seconds; t += 1.0) gen.generate(t, t + 1.0, sched.at(t), link, ev);
  std::sort(ev.begin(), ev.end(), event_less);
  return ev;
}


CoincidenceHistogram histogram_from_counts(Basis b, const std::array<std::uint64_t, 4>& n, const AnalysisParams& a) {
  auto h = make_histogram(b, a);
  for (int k = 0; k < 4; ++k) h.delays[k].assign(n[k], 0);
  return h;
}

}  // namespace

TEST_CASE("basis schedule") {
  BasisSchedule s;
  CHECK(s.at(0) == Basis::HV);
  CHECK(s.at(601) == Basis::DA);
  CHECK(s.at(1201) == Basis::RL);
  CHECK(s.at(1801) == Basis::HV);
  CHECK(s.segments(1800).size() == 3);
  for (double t : {3.0, 700.0, 1500.0}) CHECK(s.at(t) == s.at(t + 1800.0));
  CHECK_FALSE(s.in_guard(0.0));
  s.guard_s = 2.0;
  CHECK(s.in_guard(601.0));
  CHECK_FALSE(s.in_guard(603.0));
}

TEST_CASE("phi+ click statistics") {
  source::SourceParams src;
  src.fss_energy_uev = 0.0;
  DetectorParams det;
  det.efficiency = 1.0;
  det.dark_rate_hz = 0.0;
  Rng rng(1);
  for (Basis b : pol::kAllBases) {
    BasisSchedule sched;
    const double t = (static_cast<int>(b) * 600.0 + 10.0);
    std::vector<ArrivedPair> pairs(2000);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pairs[i].x_arrival = seconds_to_ps(t) + static_cast<Picoseconds>(i) * 1000000;
      pairs[i].xx_arrival = pairs[i].x_arrival;
    }
    auto ev = detect(pairs, src, det, sched, 0, 1, rng);
    REQUIRE(ev.size() == 4000);
    AnalysisParams a;
    auto h = histogram(ev, b, a);
    std::uint64_t co = 0, cross = 0;
    for (auto c : h.counts_co()) co += c;
    for (auto c : h.counts_cross()) cross += c;
    if (b == Basis::RL) {
      CHECK(co == 0);
      CHECK(cross == 2000);
    } else {
      CHECK(cross == 0);
      CHECK(co == 2000);
    }
  }
}

TEST_CASE("jitter has 70 ps total FWHM") {
  source::SourceParams src;
  DetectorParams det;
  det.efficiency = 1.0;
  det.dark_rate_hz = 0.0;
  std::vector<ArrivedPair> pairs(100000);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].x_arrival = 1000000 + static_cast<Picoseconds>(i) * 1000000;
    pairs[i].xx_arrival = pairs[i].x_arrival;
  }
  Rng rng(2);
  auto ev = detect(pairs, src, det, BasisSchedule{}, 0, 1, rng);
  REQUIRE(ev.size() == 200000);
  std::vector<double> d;
  // Every pair shares one nominal time; clicks within 500 ps belong together.
  std::vector<double> xs(pairs.size()), xxs(pairs.size());
  for (const auto& e : ev) {
    const auto k = static_cast<std::size_t>((e.timestamp_ps + 500000) / 1000000) - 1;
    (arm_of(e.detector_id) == pol::Arm::X ? xs : xxs)[k] = static_cast<double>(e.timestamp_ps);
  }
  double m = 0, m2 = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double v = xs[i] - xxs[i];
    m += v;
    m2 += v * v;
  }
  m /= pairs.size();
  const double sd = std::sqrt(m2 / pairs.size() - m * m);
  CHECK(std::abs(2.354820045 * sd - 70.0) <= 3.0);
}

TEST_CASE("histogram basics") {
  AnalysisParams a;
  std::vector<DetectionEvent> none;
  auto h = histogram(none, Basis::HV, a);
  CHECK(h.bins() == 1250);
  CHECK(std::accumulate(h.counts[0].begin(), h.counts[0].end(), std::uint64_t{0}) == 0);

  std::vector<DetectionEvent> one{{1000, 2, Basis::HV}, {1100, 0, Basis::HV}};
  h = histogram(one, Basis::HV, a);
  auto it = std::find(h.counts[0].begin(), h.counts[0].end(), 1u);
  REQUIRE(it != h.counts[0].end());
  const auto bin = static_cast<std::size_t>(it - h.counts[0].begin());
  CHECK(h.bin_lower_edge(bin) == doctest::Approx(std::floor(100.0 / 48.0) * 48.0));
  CHECK(h.delays[0] == std::vector<std::int64_t>{100});
  CHECK(histogram(one, Basis::DA, a).delays[0].empty());

  std::vector<DetectionEvent> unsorted{{1100, 0, Basis::HV}, {1000, 2, Basis::HV}};
  CHECK_THROWS_AS(histogram(unsorted, Basis::HV, a), UnsortedInput);
  CHECK_THROWS_AS(histogram_serial(unsorted, Basis::HV, a), UnsortedInput);
}

TEST_CASE("parallel histogram equals the serial reference") {
  source::SourceParams src;
  DetectorParams det;
  det.dark_rate_hz = 5000.0;
  auto ev = local_stream(src, det, 300.0, 3);
  AnalysisParams a;
  for (Basis b : pol::kAllBases) {
    auto p = histogram(ev, b, a);
    auto s = histogram_serial(ev, b, a);
    for (int k = 0; k < 4; ++k) {
      CHECK(p.counts[k] == s.counts[k]);
      CHECK(p.delays[k] == s.delays[k]);
    }
  }
  auto r1 = analyze_block(ev, 0.0, a, true);
  auto r2 = analyze_block(ev, 0.0, a, false);
  CHECK(r1.record.fidelity == r2.record.fidelity);
  CHECK(r1.record.t0_ps == r2.record.t0_ps);
}

TEST_CASE("accidental level matches the singles-rate oracle") {
  // Uncorrelated clicks only: every pairing is accidental.
  source::SourceParams src;
  src.pair_rate_hz = 0.0;
  DetectorParams det;
  det.dark_rate_hz = 20000.0;
  const double seconds = 200.0;
  auto ev = local_stream(src, det, seconds, 4);
  AnalysisParams a;
  auto h = histogram(ev, Basis::HV, a);
  // Only the HV third of the run carries HV clicks.
  const double t_hv = seconds;
  const double per_port = det.dark_rate_hz;
  const double expected_combo_bin = per_port * per_port * a.grid_ps * 1e-12 * t_hv;
  std::array<double, 4> far{};
  int nb = 0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    if (std::abs(h.bin_center(i)) < 5000 || std::abs(h.bin_center(i)) > 20000) continue;
    for (int k = 0; k < 4; ++k) far[k] += static_cast<double>(h.counts[k][i]);
    ++nb;
  }
  const double co = far[0] + far[3], cross = far[1] + far[2];
  CHECK(std::abs(co - cross) <= 4.0 * std::sqrt(co + cross));
  const double per_bin = (co + cross) / (4.0 * nb);
  CHECK(std::abs(per_bin - expected_combo_bin) <= 4.0 * std::sqrt(expected_combo_bin / (4.0 * nb)) + 1e-9);
}

TEST_CASE("zero-delay fit on synthetic data") {
  AnalysisParams a;
  auto make = [&](double t0) {
    auto h = make_histogram(Basis::HV, a);
    ZeroDelayFit m;
    m.t0_ps = t0;
    m.amplitude = 20000;
    m.tau_ps = 600;
    m.background = 0.5;
    m.sigma_ps = a.fit_sigma_ps;
    std::vector<std::uint64_t> c(h.bins());
    Rng rng(7);
    for (std::size_t i = 0; i < c.size(); ++i)
      c[i] = std::poisson_distribution<std::uint64_t>(m.bin_counts(h.bin_lower_edge(i), h.grid_ps))(rng);
    return std::pair{h, c};
  };
  auto [h1, c1] = make(1234.0);
  auto f1 = fit_zero_delay(h1, c1, a);
  CHECK(std::abs(f1.t0_ps - 1234.0) <= 24.0);
  auto [h2, c2] = make(1234.0 + 480.0);
  auto f2 = fit_zero_delay(h2, c2, a);
  CHECK(std::abs((f2.t0_ps - f1.t0_ps) - 480.0) <= 24.0);

  std::vector<std::uint64_t> zeros(h1.bins(), 0);
  CHECK_THROWS_AS(fit_zero_delay(h1, zeros, a), NoPeak);
  std::vector<std::uint64_t> flat(h1.bins(), 10);
  CHECK_THROWS_AS(fit_zero_delay(h1, flat, a), NoPeak);
}

TEST_CASE("emg density integrates to one") {
  double s = 0;
  for (double t = -2000; t < 20000; t += 1.0) s += emg_density(t + 0.5, 0.0, 30.0, 600.0);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(emg_density(-30000, 0, 30, 10) == 0.0);
  CHECK(std::isfinite(emg_density(-500, 0, 30, 10)));
}

TEST_CASE("contrast and fidelity examples") {
  CHECK(contrast(100, 0) == 1.0);
  CHECK(contrast(50, 50) == 0.0);
  CHECK(contrast(75, 25) == 0.5);
  CHECK_THROWS_AS(contrast(0, 0), UndefinedContrast);

  AnalysisParams a;
  std::array<CoincidenceHistogram, 3> ideal{histogram_from_counts(Basis::HV, {500, 0, 0, 500}, a),
                                            histogram_from_counts(Basis::DA, {500, 0, 0, 500}, a),
                                            histogram_from_counts(Basis::RL, {0, 500, 500, 0}, a)};
  auto r = fidelity_estimate(ideal, 0.0, a);
  CHECK(r.fidelity == 1.0);
  CHECK(r.sigma >= 0.0);

  std::array<CoincidenceHistogram, 3> flat{histogram_from_counts(Basis::HV, {100, 100, 100, 100}, a),
                                           histogram_from_counts(Basis::DA, {100, 100, 100, 100}, a),
                                           histogram_from_counts(Basis::RL, {100, 100, 100, 100}, a)};
  r = fidelity_estimate(flat, 0.0, a);
  CHECK(r.fidelity == doctest::Approx(0.25));
  CHECK(r.sigma > 0.0);

  std::array<CoincidenceHistogram, 3> hole{histogram_from_counts(Basis::HV, {100, 0, 0, 100}, a),
                                           histogram_from_counts(Basis::DA, {0, 0, 0, 0}, a),
                                           histogram_from_counts(Basis::RL, {0, 100, 100, 0}, a)};
  CHECK_THROWS_AS(fidelity_estimate(hole, 0.0, a), UndefinedFidelity);
}

TEST_CASE("fidelity is invariant under relabelling both ports") {
  source::SourceParams src;
  src.mixing_p = 0.8;
  DetectorParams det;
  auto ev = local_stream(src, det, 180.0, 8, 60.0);
  AnalysisParams a;
  auto r = analyze_block(ev, 0.0, a);
  REQUIRE(r.status == BlockStatus::Ok);
  for (auto& e : ev) e.detector_id ^= 1;
  auto s = analyze_block(ev, 0.0, a);
  REQUIRE(s.status == BlockStatus::Ok);
  CHECK(s.record.fidelity == doctest::Approx(r.record.fidelity).epsilon(1e-12));
}

TEST_CASE("calibrated local source gives the local benchmark") {
  source::SourceParams src;
  src.mixing_p = source::calibrate_mixing_for_local_fidelity(0.947);
  DetectorParams det;
  auto ev = local_stream(src, det, 1800.0, 9);
  AnalysisParams a;
  auto r = analyze_block(ev, 0.0, a);
  REQUIRE(r.status == BlockStatus::Ok);
  MESSAGE("F = " << r.record.fidelity << " +- " << r.record.sigma);
  CHECK(std::abs(r.record.fidelity - 0.947) <= 3.0 * r.record.sigma + 0.005);
}

TEST_CASE("generator agrees with explicit pair detection") {
  source::SourceParams src;
  src.mixing_p = 0.9;
  DetectorParams det;
  det.dark_rate_hz = 2000.0;
  const double seconds = 120.0;
  AnalysisParams a;

  auto gen = local_stream(src, det, seconds, 10, seconds / 3);

  BasisSchedule sched;
  sched.switch_period_s = seconds / 3;
  Rng rng(11);
  std::vector<ArrivedPair> pairs;
  for (const auto& p : source::emit_pairs(src, 0.0, seconds, 12)) {
    ArrivedPair q;
    q.tau_ps = p.delay_ps();
    q.x_arrival = p.x_emit_time + static_cast<Picoseconds>(det.x_channel_delay_ps);
    q.xx_arrival = p.xx_emit_time + static_cast<Picoseconds>(det.x_channel_delay_ps);
    pairs.push_back(q);
  }
  auto full = detect(pairs, src, det, sched, 0, seconds_to_ps(seconds), rng);

  auto hg = histogram(gen, Basis::HV, a);
  auto hf = histogram(full, Basis::HV, a);
  double ng = 0, nf = 0, sg = 0, sf = 0;
  for (int k = 0; k < 4; ++k) {
    ng += static_cast<double>(hg.delays[k].size());
    nf += static_cast<double>(hf.delays[k].size());
  }
  for (auto c : hg.counts_total()) sg += static_cast<double>(c);
  for (auto c : hf.counts_total()) sf += static_cast<double>(c);
  CHECK(std::abs(ng - nf) <= 4.0 * std::sqrt(ng + nf));
  auto rg = analyze_block(gen, 0.0, a);
  auto rf = analyze_block(full, 0.0, a);
  REQUIRE(rg.status == BlockStatus::Ok);
  REQUIRE(rf.status == BlockStatus::Ok);
  const double s = std::hypot(rg.record.sigma, rf.record.sigma);
  CHECK(std::abs(rg.record.fidelity - rf.record.fidelity) <= 4.0 * s);
  CHECK(std::abs(rg.record.t0_ps - rf.record.t0_ps) <= 24.0);
}

TEST_CASE("estimator converges to the exact Bell-diagonal fidelity") {
  Rng rng(13);
  AnalysisParams a;
  int inside = 0;
  const int n_states = 20;
  for (int s = 0; s < n_states; ++s) {
    std::gamma_distribution<double> g(1.0, 1.0);
    std::array<double, 4> w{};
    double tot = 0;
    for (auto& x : w) tot += (x = g(rng));
    for (auto& x : w) x /= tot;
    auto rho = pol::TwoPhotonState::bell_diagonal(w);
    std::array<CoincidenceHistogram, 3> h;
    for (std::size_t i = 0; i < 3; ++i) {
      auto p = rho.joint_probabilities(pol::kAllBases[i]);
      std::array<std::uint64_t, 4> n{};
      std::uint64_t left = 400000;
      double rest = 1.0;
      for (int k = 0; k < 3; ++k) {
        const double q = rest > 0 ? std::clamp(p[k] / rest, 0.0, 1.0) : 0.0;
        n[k] = std::binomial_distribution<std::uint64_t>(left, q)(rng);
        left -= n[k];
        rest -= p[k];
      }
      n[3] = left;
      h[i] = histogram_from_counts(pol::kAllBases[i], n, a);
    }
    auto r = fidelity_estimate(h, 0.0, a);
    if (std::abs(r.fidelity - pol::fidelity_to_phi_plus(rho)) <= 3.0 * r.sigma) ++inside;
  }
  CHECK(inside >= n_states - 1);
}

TEST_CASE("widening the window lowers fidelity under FSS") {
  source::SourceParams src;
  src.mixing_p = 1.0;
  DetectorParams det;
  auto ev = local_stream(src, det, 600.0, 14, 200.0);
  AnalysisParams narrow;
  AnalysisParams wide;
  wide.window_ps = 4800.0;
  auto rn = analyze_block(ev, 0.0, narrow);
  auto rw = analyze_block(ev, 0.0, wide);
  REQUIRE(rn.status == BlockStatus::Ok);
  REQUIRE(rw.status == BlockStatus::Ok);
  CHECK(rw.record.fidelity < rn.record.fidelity - 0.1);
}

TEST_CASE("reported sigma matches block-to-block scatter") {
  source::SourceParams src;
  src.pair_rate_hz = 300.0;
  src.mixing_p = 0.9;
  DetectorParams det;
  AnalysisParams a;
  std::vector<double> f;
  double mean_sigma = 0;
  for (int i = 0; i < 200; ++i) {
    ClickGenerator gen(src, det, 40000.0, 1000 + i);
    LinkSnapshot link;
    link.tof_ps = det.x_channel_delay_ps;
    std::vector<DetectionEvent> ev;
    for (Basis b : pol::kAllBases) gen.generate(static_cast<int>(b) * 600.0, static_cast<int>(b) * 600.0 + 30.0, b, link, ev);
    std::sort(ev.begin(), ev.end(), event_less);
    auto r = analyze_block(ev, 0.0, a);
    REQUIRE(r.status == BlockStatus::Ok);
    f.push_back(r.record.fidelity);
    mean_sigma += r.record.sigma;
  }
  mean_sigma /= f.size();
  const double m = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
  double v = 0;
  for (double x : f) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / (f.size() - 1));
  MESSAGE("empirical " << sd << " reported " << mean_sigma);
  CHECK(std::abs(sd / mean_sigma - 1.0) <= 0.2);
}

TEST_CASE("oscillation period fit") {
  std::vector<double> t, f, s;
  for (int i = 0; i < 100; ++i) {
    t.push_back(i * 48.0);
    f.push_back(0.5 + 0.4 * std::cos(2 * M_PI * t.back() / 2067.8 + 0.1));
    s.push_back(0.01);
  }
  CHECK(oscillation_period(t, f, s, 1000, 4000) == doctest::Approx(2067.8).epsilon(1e-4));
}

TEST_CASE("time-of-flight tracking is relative to the first block") {
  std::vector<FidelityRecord> r(3);
  r[0].t0_ps = 10;
  r[1].t0_ps = 10;
  r[2].t0_ps = 10010;
  auto d = track_time_of_flight(r);
  CHECK(d == std::vector<double>{0, 0, 10000});
  CHECK(track_time_of_flight({}).empty());
}

TEST_CASE("timestamps keep picosecond resolution late in the week") {
  source::SourceParams src;
  DetectorParams det;
  ClickGenerator gen(src, det, 40000.0, 3);
  LinkSnapshot link;
  link.tof_ps = det.x_channel_delay_ps;
  std::vector<DetectionEvent> ev;
  gen.generate(600000.25, 600002.0, Basis::HV, link, ev);
  REQUIRE(ev.size() > 100);
  std::array<int, 64> residues{};
  for (const auto& e : ev) ++residues[e.timestamp_ps % 64];
  CHECK(std::count(residues.begin(), residues.end(), 0) < 32);
  for (const auto& e : ev) CHECK(e.timestamp_ps >= 600000250000000000ull);
}
