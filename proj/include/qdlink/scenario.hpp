#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qdlink/coincidence.hpp"
#include "qdlink/config.hpp"
#include "qdlink/stabilizer.hpp"

/// Scenario orchestration, offline re-analysis and figure-data reports.
namespace qdlink::harness {

struct SeriesStats {
  std::size_t blocks = 0;
  std::size_t ok_blocks = 0;
  double mean = 0;
  double std = 0;
  double min = 0;
  double max = 0;
  double mean_sigma = 0;
};

SeriesStats series_stats(const std::vector<coinc::BlockResult>& blocks);

struct ScenarioResult {
  std::vector<coinc::BlockResult> blocks;
  /// Transmission-weighted mean time of flight per block, ps.
  std::vector<double> programmed_tof_ps;
  SeriesStats stats;
  std::optional<stab::DutyStats> duty;
  /// Transmission-weighted mean of sin^2(theta/2) for the residual XX rotation.
  double mean_lock_penalty = 0;
  /// Transmission-weighted Werner fidelity at zero delay after the residual rotation.
  double mean_true_fidelity = 0;
  std::uint64_t events_logged = 0;
  coinc::ClickGenerator::Counters counters;
};

/// Event loop: channel drift, stabilizer slots, click generation per step and
/// block-wise analysis as blocks close. Writes every artifact into out_dir
/// (created if needed). Deterministic for a config and seed.
ScenarioResult run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir);

/// Re-analyzes a persisted event log block by block with the analysis part
/// of `config`. Outputs go to out_dir only after the whole log has been
/// read, so schema errors leave no partial output. An empty log yields an
/// empty series.
ScenarioResult analyze_log(const std::filesystem::path& log, const ScenarioConfig& config,
                           const std::filesystem::path& out_dir);

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Period of the fidelity-vs-delay curve from delay-slice rows.
double fig2b_period_ps(const std::filesystem::path& fig2b_csv);

/// Writes fig2a.csv, fig2b.csv, fig3.csv and fig4.csv into dir and a short
/// text summary to `text`. Throws MissingArtifact naming the first absent file.
void report(const std::filesystem::path& dir, std::ostream& text);

/// Artifact file names.
namespace files {
inline constexpr const char* kEventsCsv = "events.csv";
inline constexpr const char* kEventsBin = "events.bin";
inline constexpr const char* kFidelity = "fidelity_timeseries.csv";
inline constexpr const char* kTof = "tof_series.csv";
inline constexpr const char* kActuators = "actuator_trace.csv";
inline constexpr const char* kDuty = "duty_log.csv";
inline constexpr const char* kHistogram = "coincidence_histogram.csv";
inline constexpr const char* kSlices = "delay_slices.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kConfig = "config.ini";
}  // namespace files

}  // namespace qdlink::harness
