#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdlink/fiber.hpp"
#include "qdlink/polarization.hpp"

/// Two-reference time-division-multiplexed polarization stabilization.
namespace qdlink::stab {

using Rng = std::mt19937_64;

/// Classical references as launched, and the detection-side axes they are
/// locked to. The two references sit 90 degrees apart on the sphere.
struct ReferencePair {
  pol::StokesVector ref_a = pol::StokesVector::H();
  pol::StokesVector ref_b = pol::StokesVector::R();
  pol::StokesVector target_basis_a = pol::StokesVector::H();
  pol::StokesVector target_basis_b = pol::StokesVector::R();
  double wavelength_nm = 1320.0;
};

struct GeometryTargets {
  pol::StokesVector target_basis_a;
  pol::StokesVector target_basis_b;
};

/// Basis a on the FWP rotation axis, basis b in the plane of rotation, so
/// FWP actuation cannot change the projection of reference a.
GeometryTargets calibrate_geometry(const pol::StokesVector& fwp_axis);

/// References launched equal to their targets: an identity channel reads
/// eta = 1 on both.
ReferencePair generate_references(const pol::StokesVector& fwp_axis = pol::StokesVector::H(),
                                  double wavelength_nm = 1320.0);

/// Four EPC retarders with fixed axes alternating s1/s2, followed by the FWP.
/// Gains and ranges are not taken from hardware data sheets.
struct ActuatorModel {
  std::array<pol::StokesVector, 4> epc_axes{pol::StokesVector::H(), pol::StokesVector::D(), pol::StokesVector::H(),
                                            pol::StokesVector::D()};
  pol::StokesVector fwp_axis = pol::StokesVector::H();
  double epc_gain_rad_per_v = 0.1;
  double fwp_gain_rad_per_v = 0.1;
  double epc_v_min = -150.0;
  double epc_v_max = 150.0;
  double fwp_v_min = -150.0;
  double fwp_v_max = 150.0;
};

struct ActuatorState {
  std::array<double, 4> epc_voltages{};
  double fwp_voltage = 0.0;
  ActuatorModel model;

  bool within_range() const;
  /// FWP after EPC channels 1..4; this is the rotation seen by light
  /// leaving the field fiber.
  pol::PolRotation rotation() const;
};

struct StabilizerSchedule {
  double check_period_s = 60.0;
  double check_duration_s = 0.5;
  double eta_threshold = 0.985;
  /// Both projections a forced realign aims for.
  double realign_target_eta = 0.998;
  double forced_realign_period_s = 660.0;
  double actuation_step_latency_s = 0.65;
  /// Steps that fit in one slot after the check window.
  int step_budget = 90;
  /// Initial alignment from an arbitrary state runs before transmission
  /// starts and is not confined to one slot.
  int initial_step_budget = 1000;
  double meter_noise_rel = 0.001;
  /// Voltage steps expressed as rotation angle, coarse to fine.
  std::array<double, 3> step_levels_rad{0.4, 0.1, 0.025};

  void validate() const;
};

/// Noisy two-power-meter projection of a reference after the channel and
/// actuators. Throws MeasurementError when both powers read zero.
double measure_projection(const pol::StokesVector& ref, const pol::StokesVector& target_basis,
                          const pol::PolRotation& channel, const ActuatorState& actuators, double meter_noise_rel,
                          Rng& rng);

/// Same, taking the channel rotation at the reference wavelength.
double measure_projection(const pol::StokesVector& ref, const pol::StokesVector& target_basis,
                          const fiber::ChannelState& channel, const fiber::ChannelParams& channel_params,
                          double wavelength_nm, const ActuatorState& actuators, double meter_noise_rel, Rng& rng);

struct MeasurementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Decision { NoAction, StartRecovery, ForcedRealign };

/// Forced realign wins once the realign period has elapsed; otherwise a
/// recovery starts when either projection is below threshold.
Decision check_cycle(const StabilizerSchedule& schedule, double now_s, double last_realign_s, double eta_a,
                     double eta_b);

enum class RecoveryMode { Threshold, Maximize };

struct RecoveryStep {
  int step = 0;
  double eta_a = 0;
  double eta_b = 0;
  ActuatorState actuators;
};

struct RecoveryResult {
  int steps = 0;
  double duration_s = 0;
  double eta_a = 0;
  double eta_b = 0;
  bool success = false;
  int saturation_hits = 0;
  std::vector<RecoveryStep> accepted;
};

/// Two-stage derivative-free ascent. Stage 1 line-searches the FWP for
/// reference b; stage 2 runs cyclic coordinate ascent over the four EPC
/// channels on eta_a; with reference a on the FWP axis, the FWP then
/// restores eta_b exactly. Threshold mode stops once both projections clear
/// eta_threshold, maximize mode once both clear realign_target_eta or no
/// step at the finest level improves. `channel` is held fixed throughout.
RecoveryResult recover(ActuatorState& actuators, const pol::PolRotation& channel, const ReferencePair& refs,
                       const StabilizerSchedule& schedule, RecoveryMode mode, Rng& rng);

enum class EventKind { Check, Recovery, Realign, Transmission };

std::string_view to_string(EventKind k);

struct EventRecord {
  double time_s = 0;
  EventKind kind = EventKind::Check;
  double duration_s = 0;
  double eta_a = 0;
  double eta_b = 0;
  ActuatorState actuators;
  int steps = 0;
  bool success = true;
  /// Transmission only: seconds with true eta >= threshold on both references.
  double maintained_s = 0;
};

/// Ordered, non-overlapping records covering the horizon.
class StabilizerEventLog {
 public:
  /// Throws std::logic_error if time goes backwards or duration < 0.
  void append(const EventRecord& r);
  const std::vector<EventRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  double total_duration() const;

 private:
  std::vector<EventRecord> records_;
};

struct DutyStats {
  double check_only_duty = 0;
  double recovery_minute_duty = 0;
  double overall_duty = 0;
  double maintenance_fraction = 0;
  int checks = 0;
  int recoveries = 0;
  int realigns = 0;
  int failed_recoveries = 0;
  double mean_recovery_s = 0;
  double mean_realign_s = 0;
};

/// Throws std::invalid_argument for an empty log or non-positive horizon.
DutyStats duty_cycle_report(const StabilizerEventLog& log, double horizon_s, double check_period_s = 60.0);

/// time_s, epc_v1..epc_v4, fwp_v: one row per check and per accepted
/// recovery step.
void write_actuator_trace(std::ostream& out, const StabilizerEventLog& log);
/// slot_start_s, category, duration_s
void write_duty_log(std::ostream& out, const StabilizerEventLog& log, double check_period_s = 60.0);

struct StabilizerConfig {
  bool enabled = true;
  StabilizerSchedule schedule;
  ActuatorModel actuators;
  ReferencePair references = generate_references();
};

/// Event-driven controller. The owner calls on_slot() at every check-period
/// boundary and reports qubit-transmission intervals back via transmit().
class Stabilizer {
 public:
  Stabilizer(StabilizerConfig config, std::uint64_t seed);

  /// Initial alignment, logged as a realign. The owner starts checks at the
  /// first slot boundary after it completes.
  double initial_alignment(double now_s, const pol::PolRotation& channel_at_ref);
  /// Runs the check window and any recovery; returns the blocked time.
  double on_slot(double now_s, const pol::PolRotation& channel_at_ref);
  void transmit(double start_s, double duration_s, double maintained_s);

  /// Noise-free projections of both references for a given channel.
  std::pair<double, double> true_projections(const pol::PolRotation& channel_at_ref) const;

  const ActuatorState& actuators() const { return actuators_; }
  pol::PolRotation actuator_rotation() const { return actuator_rotation_; }
  const StabilizerEventLog& log() const { return log_; }
  const StabilizerConfig& config() const { return config_; }

 private:
  double run_recovery(double start_s, RecoveryMode mode, const pol::PolRotation& channel_at_ref, int step_budget);

  StabilizerConfig config_;
  Rng rng_;
  ActuatorState actuators_;
  pol::PolRotation actuator_rotation_;
  StabilizerEventLog log_;
  double last_realign_s_ = 0.0;
};

}  // namespace qdlink::stab
