#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "qdlink/polarization.hpp"
#include "qdlink/source.hpp"
#include "qdlink/units.hpp"

/// Click simulation, coincidence histogramming and fidelity estimation.
namespace qdlink::coinc {

using Rng = std::mt19937_64;

/// Detector ids 0, 1 are the X-arm analyzer ports, 2, 3 the XX-arm ports.
struct DetectionEvent {
  std::uint64_t timestamp_ps = 0;
  std::uint8_t detector_id = 0;
  pol::Basis basis = pol::Basis::HV;

  friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

constexpr pol::Arm arm_of(std::uint8_t detector_id) { return detector_id < 2 ? pol::Arm::X : pol::Arm::XX; }
constexpr int port_of(std::uint8_t detector_id) { return detector_id & 1; }
constexpr std::uint8_t detector_for(pol::Arm arm, int port) {
  return static_cast<std::uint8_t>((arm == pol::Arm::X ? 0 : 2) + port);
}

/// Time order used everywhere: timestamp, then detector, then basis.
bool event_less(const DetectionEvent& a, const DetectionEvent& b);

struct DetectorParams {
  double efficiency = 0.6;
  /// Total two-detector jitter; each detector gets 1/sqrt(2) of the sigma.
  double jitter_fwhm_ps = 70.0;
  double dark_rate_hz = 100.0;
  /// Fixed delay line in the local X arm; compensates the field fiber.
  double x_channel_delay_ps = 89.25e6;
  /// Analyzer extinction ratio; 0 means ideal analyzers.
  double extinction_ratio_db = 0.0;

  double jitter_sigma_total_ps() const;
  double jitter_sigma_per_detector_ps() const;
  void validate() const;
};

/// HV, DA, RL for one switch period each, repeating.
struct BasisSchedule {
  double switch_period_s = 600.0;
  /// Dead time after each switch during which nothing is recorded.
  double guard_s = 0.0;

  pol::Basis at(double t_s) const;
  bool in_guard(double t_s) const;
  double cycle_s() const { return 3.0 * switch_period_s; }

  struct Segment {
    double start_s;
    double end_s;
    pol::Basis basis;
  };
  /// Segments tiling [0, horizon_s).
  std::vector<Segment> segments(double horizon_s) const;
  void validate() const;
};

/// One pair after the channel: arrival times are absolute, before jitter.
struct ArrivedPair {
  double tau_ps = 0;
  bool x_arrived = true;
  bool xx_arrived = true;
  Picoseconds x_arrival = 0;
  Picoseconds xx_arrival = 0;
  /// Unitary on the XX photon between source and analyzer.
  pol::JonesOperator u_xx = pol::JonesOperator::Identity();
};

/// Born-rule click sampling for explicit pairs plus Poissonian dark counts
/// over [t_start, t_end). Basis is chosen by each photon's arrival time.
/// Output is sorted.
std::vector<DetectionEvent> detect(const std::vector<ArrivedPair>& pairs, const source::SourceParams& source,
                                   const DetectorParams& det, const BasisSchedule& schedule, Picoseconds t_start,
                                   Picoseconds t_end, Rng& rng);

/// Channel as seen by the XX photon during one emission interval.
struct LinkSnapshot {
  pol::JonesOperator u_xx = pol::JonesOperator::Identity();
  double tof_ps = 0.0;
  double xx_survival = 1.0;
};

/// Rate-level click generator, statistically equivalent to detect() on a
/// full pair stream. Coincident pairs, XX singles and X singles are drawn as
/// independent thinned Poisson streams; X singles are only drawn inside
/// gates of +-gate_halfwidth_ps around XX clicks and XX singles with no X
/// click in their gate are dropped, so every pairing inside the gate
/// survives exactly. Uncorrelated clicks are stamped at emission time plus
/// their arm's nominal delay, so no click precedes its emission interval.
class ClickGenerator {
 public:
  ClickGenerator(source::SourceParams source, DetectorParams det, double gate_halfwidth_ps, std::uint64_t seed);

  /// Appends clicks for emission times in [t0_s, t1_s); not sorted.
  void generate(double t0_s, double t1_s, pol::Basis basis, const LinkSnapshot& link,
                std::vector<DetectionEvent>& out);

  struct Counters {
    std::uint64_t coincident_pairs = 0;
    std::uint64_t xx_singles_drawn = 0;
    std::uint64_t xx_singles_kept = 0;
    std::uint64_t x_singles_in_gates = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  source::SourceParams source_;
  DetectorParams det_;
  double gate_ps_;
  Rng rng_;
  double sigma_;
  double flip_ = 0.0;
  std::int64_t covered_until_ = 0;
  Counters counters_;
  std::vector<std::int64_t> xx_times_;
  std::vector<std::int64_t> x_times_;
  std::vector<DetectionEvent> xx_singles_;
};

struct AnalysisParams {
  double grid_ps = 48.0;
  /// Centre of the histogram delay range.
  double histogram_offset_ps = 0.0;
  double histogram_halfwidth_ps = 30000.0;
  /// Full width of the post-selection window around t0.
  double window_ps = 48.0;
  double sideband_inner_ps = 5000.0;
  double sideband_outer_ps = 20000.0;
  bool subtract_accidentals = true;
  /// Gaussian width of the fit model; defaults to the 70 ps FWHM system jitter.
  double fit_sigma_ps = 70.0 / 2.354820045;
  double fit_tau_guess_ps = 600.0;
  double fit_tau_min_ps = 10.0;
  double peak_to_median_min = 5.0;
  double block_s = 1800.0;
  /// Fidelity-vs-delay slices for the oscillation plot.
  int delay_slices = 160;

  void validate() const;
};

/// X-minus-XX delay histogram. combo = 2 * x_port + xx_port; combos 0 and 3
/// are co-polarized, 1 and 2 cross-polarized.
struct CoincidenceHistogram {
  pol::Basis basis = pol::Basis::HV;
  double grid_ps = 48.0;
  double offset_ps = 0.0;
  double halfwidth_ps = 30000.0;
  std::array<std::vector<std::uint64_t>, 4> counts;
  /// Every pairing's exact delay, in pairing order.
  std::array<std::vector<std::int64_t>, 4> delays;

  std::size_t bins() const { return counts[0].size(); }
  double bin_lower_edge(std::size_t i) const;
  double bin_center(std::size_t i) const { return bin_lower_edge(i) + 0.5 * grid_ps; }
  std::vector<std::uint64_t> counts_co() const;
  std::vector<std::uint64_t> counts_cross() const;
  /// Sum over all four combinations.
  std::vector<std::uint64_t> counts_total() const;
  CoincidenceHistogram& operator+=(const CoincidenceHistogram& o);
};

/// Empty histogram with the configured binning.
CoincidenceHistogram make_histogram(pol::Basis basis, const AnalysisParams& params);

struct UnsortedInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Pairs every X click with the XX clicks whose delay falls in the histogram
/// range; both clicks must carry `basis`. OpenMP over X-click chunks, merged
/// in chunk order, so the result equals histogram_serial() exactly.
/// Throws UnsortedInput unless events are sorted by event_less.
CoincidenceHistogram histogram(std::span<const DetectionEvent> events, pol::Basis basis,
                               const AnalysisParams& params);
CoincidenceHistogram histogram_serial(std::span<const DetectionEvent> events, pol::Basis basis,
                                      const AnalysisParams& params);

/// counts / mean sideband level per bin, for plotting.
std::vector<double> normalized_counts(const CoincidenceHistogram& h, const std::vector<std::uint64_t>& counts,
                                      double t0_ps, const AnalysisParams& params);

struct NoPeak : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroDelayFit {
  double t0_ps = 0;
  double amplitude = 0;
  double tau_ps = 0;
  double background = 0;
  double sigma_ps = 0;
  bool converged = false;

  /// Expected counts in a bin [lo, lo + width).
  double bin_counts(double lo, double width) const;
};

/// Exponential decay from t0 convolved with a Gaussian, plus a flat
/// background; Neyman-weighted least squares. Throws NoPeak when the
/// highest bin is empty or below peak_to_median_min times the median.
ZeroDelayFit fit_zero_delay(const CoincidenceHistogram& h, const std::vector<std::uint64_t>& counts,
                            const AnalysisParams& params);

/// Exponential-Gaussian density at t for onset t0.
double emg_density(double t, double t0, double sigma, double tau);

struct UndefinedContrast : std::domain_error {
  using std::domain_error::domain_error;
};
struct UndefinedFidelity : std::domain_error {
  using std::domain_error::domain_error;
};

/// (co - cross) / (co + cross).
double contrast(double co, double cross);

struct BasisWindow {
  std::array<std::uint64_t, 4> window{};
  std::array<std::uint64_t, 4> sideband{};
  /// Expected accidentals inside the window per combination.
  std::array<double, 4> accidentals{};
  double co = 0;
  double cross = 0;
  double var_co = 0;
  double var_cross = 0;
};

struct FidelityRecord {
  double block_start_s = 0;
  double fidelity = 0;
  double sigma = 0;
  double t0_ps = 0;
  pol::Contrasts contrasts;
  pol::Contrasts contrast_sigma;
  std::array<BasisWindow, 3> windows;
};

/// Window of window_ps centred on t0, on the exact delays. Sidebands at
/// sideband_inner..outer on both sides estimate the accidental level.
BasisWindow window_counts(const CoincidenceHistogram& h, double t0_ps, double centre_offset_ps,
                          const AnalysisParams& params);

/// F = (1 + C_HV + C_DA - C_RL) / 4 with Poisson error propagation.
/// hists must be in HV, DA, RL order. Throws UndefinedFidelity when any
/// basis has no counts in the window.
FidelityRecord fidelity_estimate(const std::array<CoincidenceHistogram, 3>& hists, double t0_ps,
                                 const AnalysisParams& params, double centre_offset_ps = 0.0);

/// t0(block) - t0(first block), ps.
std::vector<double> track_time_of_flight(const std::vector<FidelityRecord>& records);

enum class BlockStatus { Ok, NoPeak, UndefinedFidelity, Empty };

const char* to_string(BlockStatus s);

struct DelaySlice {
  double centre_ps = 0;
  std::array<std::array<std::uint64_t, 4>, 3> window{};
};

struct BlockResult {
  double block_start_s = 0;
  BlockStatus status = BlockStatus::Empty;
  FidelityRecord record;
  std::uint64_t events = 0;
  std::uint64_t pairings = 0;
  std::vector<DelaySlice> slices;
  /// HV-basis co-polarized HH histogram and its own fit, for plotting.
  std::vector<std::uint64_t> hh_counts;
  ZeroDelayFit hh_fit;
  bool hh_fit_ok = false;
};

/// Full per-block pipeline: histogram each basis, fit t0 on the summed
/// histogram, estimate F and fill the delay slices.
BlockResult analyze_block(std::span<const DetectionEvent> events, double block_start_s,
                          const AnalysisParams& params, bool parallel = true);

/// F and sigma of a slice in the same way as fidelity_estimate, without
/// accidental subtraction. Throws UndefinedFidelity for empty bases.
std::pair<double, double> slice_fidelity(const DelaySlice& s);

/// Least-squares period of a + b cos(2 pi t / P) + c sin(2 pi t / P) over
/// [p_min, p_max], weighted by 1 / sigma^2.
double oscillation_period(const std::vector<double>& t, const std::vector<double>& f,
                          const std::vector<double>& sigma, double p_min, double p_max);

}  // namespace qdlink::coinc
