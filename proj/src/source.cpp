#include "qdlink/source.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qdlink::source {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

void require(bool ok, const char* field, const char* rule) {
  if (!ok) throw std::domain_error(std::string("source.") + field + " " + rule);
}

}  // namespace

void SourceParams::validate() const {
  require(std::isfinite(pair_rate_hz) && pair_rate_hz >= 0.0, "pair_rate_hz", "must be >= 0");
  require(std::isfinite(x_lifetime_ps) && x_lifetime_ps > 0.0, "x_lifetime_ps", "must be > 0");
  require(std::isfinite(fss_energy_uev) && fss_energy_uev >= 0.0, "fss_energy_uev", "must be >= 0");
  require(mixing_p >= 0.0 && mixing_p <= 1.0, "mixing_p", "must lie in [0, 1]");
  require(x_wavelength_nm > 0.0 && xx_wavelength_nm > 0.0, "wavelength_nm", "must be > 0");
}

double fss_phase(double fss_energy_uev, double tau_ps) { return fss_energy_uev * tau_ps / kHbarUevPs; }

double fss_period_ps(double fss_energy_uev) {
  if (!(fss_energy_uev > 0.0)) throw std::domain_error("FSS period undefined for zero splitting");
  return kPlanckUevPs / fss_energy_uev;
}

pol::TwoPhotonState pair_state_at_delay(const SourceParams& params, double tau_ps) {
  if (!(tau_ps >= 0.0)) throw std::domain_error("cascade delay must be non-negative");
  const double phi = fss_phase(params.fss_energy_uev, tau_ps);
  pol::Ket4 k = pol::Ket4::Zero();
  k(0) = kInvSqrt2;
  k(3) = std::polar(kInvSqrt2, phi);
  const double p = params.mixing_p;
  pol::Matrix4c rho = p * (k * k.adjoint()) + (1.0 - p) / 4.0 * pol::Matrix4c::Identity();
  return pol::TwoPhotonState::trusted(rho);
}

std::array<double, 4> pair_joint_probabilities(const SourceParams& params, double tau_ps, pol::Basis b,
                                               const pol::JonesOperator& u_xx) {
  const pol::Complex phase = std::polar(1.0, fss_phase(params.fss_energy_uev, std::max(tau_ps, 0.0)));
  const pol::JonesOperator ud = u_xx.adjoint();
  const double p = params.mixing_p;
  std::array<double, 4> out{};
  for (int i = 0; i < 2; ++i) {
    const pol::Jones e = pol::basis_state(b, i);
    for (int j = 0; j < 2; ++j) {
      const pol::Jones g = ud * pol::basis_state(b, j);
      const pol::Complex amp =
          (std::conj(e(0)) * std::conj(g(0)) + phase * std::conj(e(1)) * std::conj(g(1))) * kInvSqrt2;
      out[2 * i + j] = p * std::norm(amp) + (1.0 - p) / 4.0;
    }
  }
  return out;
}

double mean_pure_fidelity(const SourceParams& params) {
  const double x = params.fss_energy_uev * params.x_lifetime_ps / kHbarUevPs;
  return 0.5 * (1.0 + 1.0 / (1.0 + x * x));
}

double calibrate_mixing_for_local_fidelity(double target_fidelity) {
  if (!(target_fidelity >= 0.25 && target_fidelity <= 1.0))
    throw std::domain_error("target fidelity must lie in [0.25, 1]");
  return (4.0 * target_fidelity - 1.0) / 3.0;
}

PairSource::PairSource(const SourceParams& params, Picoseconds t_start, std::uint64_t seed)
    : params_(params),
      rng_(seed),
      gap_(params.pair_rate_hz > 0.0 ? params.pair_rate_hz * 1e-12 : 1.0),
      cascade_(1.0 / params.x_lifetime_ps),
      next_xx_(t_start),
      active_(params.pair_rate_hz > 0.0) {
  params_.validate();
  if (active_) draw_next();
}

void PairSource::draw_next() {
  next_xx_ += static_cast<Picoseconds>(std::llround(gap_(rng_)));
  next_x_ = next_xx_ + static_cast<Picoseconds>(std::llround(cascade_(rng_)));
}

bool PairSource::next_before(Picoseconds t_end, PairTiming& out) {
  if (!active_ || next_xx_ >= t_end) return false;
  out = {next_xx_, next_x_};
  draw_next();
  return true;
}

std::vector<PairEvent> emit_pairs(const SourceParams& params, double t_start_s, double t_end_s,
                                  std::uint64_t seed) {
  if (!(t_end_s >= t_start_s)) throw std::domain_error("emit_pairs requires t_end >= t_start");
  PairSource src(params, seconds_to_ps(t_start_s), seed);
  const Picoseconds end = seconds_to_ps(t_end_s);
  std::vector<PairEvent> out;
  PairTiming t;
  while (src.next_before(end, t)) {
    out.push_back({t.xx_emit_time, t.x_emit_time, pair_state_at_delay(params, t.delay_ps())});
  }
  return out;
}

}  // namespace qdlink::source
