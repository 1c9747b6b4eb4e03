#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "qdlink/polarization.hpp"
#include "qdlink/units.hpp"

/// Quantum-dot biexciton cascade emitter.
namespace qdlink::source {

/// fss_energy_uev and x_lifetime_ps defaults are not measured values; they
/// give a ns-scale fine-structure oscillation and a ps-scale cascade delay.
struct SourceParams {
  double pair_rate_hz = 1000.0;
  double x_lifetime_ps = 600.0;
  double fss_energy_uev = 2.0;
  double mixing_p = 1.0;
  double x_wavelength_nm = 1329.4;
  double xx_wavelength_nm = 1320.0;

  /// Throws std::domain_error naming the offending field.
  void validate() const;
};

/// One emitted pair. The X photon follows the XX photon after an
/// exponentially distributed cascade delay.
struct PairEvent {
  Picoseconds xx_emit_time = 0;
  Picoseconds x_emit_time = 0;
  pol::TwoPhotonState state_at_emission = pol::TwoPhotonState::phi_plus();

  double delay_ps() const { return static_cast<double>(x_emit_time - xx_emit_time); }
};

/// Emission times only; the state is recomputed from the delay on demand.
struct PairTiming {
  Picoseconds xx_emit_time = 0;
  Picoseconds x_emit_time = 0;

  double delay_ps() const { return static_cast<double>(x_emit_time - xx_emit_time); }
};

/// FSS phase S * tau / hbar accumulated over a cascade delay.
double fss_phase(double fss_energy_uev, double tau_ps);

/// Oscillation period h / S of the post-selected fidelity, ps.
double fss_period_ps(double fss_energy_uev);

/// Werner mixture of (|HH> + e^{i phi}|VV>)/sqrt(2) with I/4.
pol::TwoPhotonState pair_state_at_delay(const SourceParams& params, double tau_ps);

/// Joint outcome probabilities of pair_state_at_delay in basis b after a
/// unitary on the XX photon, without forming the density matrix.
std::array<double, 4> pair_joint_probabilities(const SourceParams& params, double tau_ps, pol::Basis b,
                                               const pol::JonesOperator& u_xx);

/// Closed form of the pure-part fidelity averaged over the exponential
/// delay distribution: (1 + 1 / (1 + (S tau_X / hbar)^2)) / 2.
double mean_pure_fidelity(const SourceParams& params);

/// Inverts (1 + 3p)/4 = target; throws std::domain_error outside [0.25, 1].
double calibrate_mixing_for_local_fidelity(double target_fidelity);

/// Poissonian emission stream, deterministic for a seed. Times are emitted
/// in increasing xx_emit_time order.
class PairSource {
 public:
  PairSource(const SourceParams& params, Picoseconds t_start, std::uint64_t seed);

  /// Next pair with xx_emit_time < t_end, or false when the stream passes t_end.
  /// The pending pair is kept for the next call.
  bool next_before(Picoseconds t_end, PairTiming& out);

  const SourceParams& params() const { return params_; }

 private:
  void draw_next();

  SourceParams params_;
  std::mt19937_64 rng_;
  std::exponential_distribution<double> gap_;
  std::exponential_distribution<double> cascade_;
  Picoseconds next_xx_ = 0;
  Picoseconds next_x_ = 0;
  bool active_ = true;
};

/// Pairs with xx_emit_time in [t_start, t_end), seconds.
std::vector<PairEvent> emit_pairs(const SourceParams& params, double t_start_s, double t_end_s,
                                  std::uint64_t seed);

}  // namespace qdlink::source
