#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qdlink/polarization.hpp"
#include "qdlink/units.hpp"

/// Deployed-fiber channel: birefringence drift, wavelength decorrelation,
/// thermal time-of-flight and loss.
namespace qdlink::fiber {

using Rng = std::mt19937_64;

/// Effective fiber temperature versus time, linearly interpolated between
/// samples and held constant outside them.
class TemperatureProfile {
 public:
  /// Constant 0 C.
  TemperatureProfile() : time_s_{0.0}, temp_c_{0.0} {}

  static TemperatureProfile constant(double temp_c);
  static TemperatureProfile from_samples(std::vector<double> time_s, std::vector<double> temp_c);
  /// Two-column CSV (time_s, temp_C); an optional header line is skipped.
  /// Throws std::runtime_error with the path on I/O or parse failure.
  static TemperatureProfile load_csv(const std::string& path);
  /// Week-long winter profile: a cooling trend over the first three days
  /// plus a day-night oscillation, spanning about -4 to 7 C.
  static TemperatureProfile default_week(double diurnal_period_s = 86400.0);

  double at(double t_s) const;
  double min_over(double t0_s, double t1_s) const;
  double max_over(double t0_s, double t1_s) const;

  /// max - min over all samples.
  double span() const { return span_; }
  double first() const { return temp_c_.front(); }

  const std::vector<double>& times() const { return time_s_; }
  const std::vector<double>& temps() const { return temp_c_; }

 private:
  std::vector<double> time_s_;
  std::vector<double> temp_c_;
  double span_ = 0.0;
};

/// drift_angle_rate, diurnal_amplitude_rad, the wavelength-field shape and
/// tof_thermal_ps_per_c are calibration values, not measurements. The
/// thermal coefficient is chosen so default_week() gives a 1.82 ns
/// peak-to-trough time-of-flight swing over the first four days.
struct ChannelParams {
  double length_km = 18.23;
  double fiber_loss_db = 11.70;
  double component_loss_db = 3.49;
  /// Random-walk scale, rad / sqrt(hour).
  double drift_angle_rate = 0.3;
  /// Rotation swing across the full temperature span of the profile.
  double diurnal_amplitude_rad = 1.0;
  double diurnal_period_s = 86400.0;
  double wavelength_decorr_deg_per_nm = 20.0;
  double wavelength_corr_length_nm = 2.0;
  double wavelength_corr_time_s = 7200.0;
  double reference_wavelength_nm = 1320.0;
  double tof_base_ps = 89.25e6;
  double tof_thermal_ps_per_c = 168.12;
  /// Longest single random-walk increment; longer advances are subdivided.
  double max_substep_s = 1.0;
  TemperatureProfile temperature = TemperatureProfile::default_week();

  void validate() const;
};

/// Linear survival probability 10^(-dB/10) through the link.
double survival_probability(const ChannelParams& params, bool include_component_loss);

/// Smooth random rotation field over wavelength offset, built from random
/// Fourier features whose amplitudes follow Ornstein-Uhlenbeck processes.
struct WavelengthField {
  static constexpr int kFeatures = 16;
  std::vector<double> kappa;      // rad / nm
  std::vector<double> beta;       // rad
  std::vector<double> amplitude;  // [component * kFeatures + m]
  double stationary_sd = 0.0;

  Eigen::Vector3d rotation_vector(double delta_nm) const;
};

struct ChannelState {
  double sim_time_s = 0.0;
  /// Random-walk part, including the initial arbitrary birefringence.
  pol::PolRotation random_walk;
  /// Total rotation at the reference wavelength.
  pol::PolRotation rotation_at_reference_wavelength;
  /// Axis of the temperature-driven rotation.
  Eigen::Vector3d thermal_axis = Eigen::Vector3d::UnitX();
  WavelengthField field;
  double current_tof_ps = 0.0;

  /// Cached rotations for wavelengths queried at this sim_time.
  mutable std::vector<std::pair<double, pol::PolRotation>> wavelength_cache;
};

/// Per-component standard deviation of the rotation vector at 1 nm offset
/// that yields a mean Poincare displacement of `mean_deg` for a uniformly
/// random probe state.
double field_sd_for_mean_displacement(double mean_deg);

/// Exact mean displacement of a uniformly random probe under a rotation
/// vector with i.i.d. N(0, sd^2) components (numerical quadrature).
double mean_displacement_deg(double sd_rad);

ChannelState initial_state(const ChannelParams& params, Rng& rng);

/// Throws std::domain_error for negative dt.
ChannelState advance(const ChannelState& state, double dt_s, const ChannelParams& params, Rng& rng);

pol::PolRotation birefringence_at(const ChannelState& state, const ChannelParams& params, double wavelength_nm);

double time_of_flight(const ChannelState& state);

struct OpticalItem {
  Picoseconds emit_time = 0;
  double wavelength_nm = 1320.0;
};

struct Transmitted {
  Picoseconds arrival_time = 0;
  pol::PolRotation rotation;
};

std::optional<Transmitted> transit(const ChannelState& state, const ChannelParams& params, const OpticalItem& item,
                                   bool include_component_loss, Rng& rng);

/// Owns the evolving state and its random stream.
class FiberChannel {
 public:
  FiberChannel(ChannelParams params, std::uint64_t seed);

  void advance(double dt_s);
  const ChannelState& state() const { return state_; }
  const ChannelParams& params() const { return params_; }
  pol::PolRotation birefringence_at(double wavelength_nm) const;
  double time_of_flight() const { return state_.current_tof_ps; }
  std::optional<Transmitted> transit(const OpticalItem& item, bool include_component_loss);

 private:
  ChannelParams params_;
  Rng rng_;
  ChannelState state_;
};

}  // namespace qdlink::fiber
