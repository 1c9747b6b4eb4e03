#include "qdlink/coincidence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/tools/minima.hpp>
#include <ceres/ceres.h>
#include <omp.h>

namespace qdlink::coinc {

using pol::Arm;
using pol::Basis;

bool event_less(const DetectionEvent& a, const DetectionEvent& b) {
  if (a.timestamp_ps != b.timestamp_ps) return a.timestamp_ps < b.timestamp_ps;
  if (a.detector_id != b.detector_id) return a.detector_id < b.detector_id;
  return a.basis < b.basis;
}

namespace {

constexpr double kFwhmToSigma = 1.0 / 2.354820045030949;

[[noreturn]] void bad(const std::string& key) { throw std::domain_error(key + " out of range"); }

/// base + offset without routing the absolute time through a double.
std::uint64_t to_timestamp(Picoseconds base, double offset_ps) {
  const Picoseconds t = base + std::llround(offset_ps);
  return t <= 0 ? 0 : static_cast<std::uint64_t>(t);
}

/// Exact picoseconds for a time in seconds with sub-second fraction.
Picoseconds exact_ps(double t_s) {
  const double whole = std::floor(t_s);
  return static_cast<Picoseconds>(whole) * kPsPerSecond + std::llround((t_s - whole) * 1e12);
}

int sample_index(const std::array<double, 4>& p, double u) {
  double acc = 0;
  for (int k = 0; k < 3; ++k) {
    acc += p[k];
    if (u < acc) return k;
  }
  return 3;
}

double flip_probability(double extinction_db) {
  if (extinction_db <= 0.0) return 0.0;
  const double leak = std::pow(10.0, -extinction_db / 10.0);
  return leak / (1.0 + leak);
}

}  // namespace

// ---------------------------------------------------------------------------
// Detector and schedule

double DetectorParams::jitter_sigma_total_ps() const { return jitter_fwhm_ps * kFwhmToSigma; }
double DetectorParams::jitter_sigma_per_detector_ps() const { return jitter_sigma_total_ps() / std::numbers::sqrt2; }

void DetectorParams::validate() const {
  if (!(efficiency > 0 && efficiency <= 1)) bad("detector.efficiency");
  if (!(jitter_fwhm_ps >= 0)) bad("detector.jitter_fwhm_ps");
  if (!(dark_rate_hz >= 0)) bad("detector.dark_rate_hz");
  if (!(x_channel_delay_ps >= 0)) bad("detector.x_channel_delay_ps");
  if (!(extinction_ratio_db >= 0)) bad("detector.extinction_ratio_db");
}

Basis BasisSchedule::at(double t_s) const {
  const double k = std::floor(t_s / switch_period_s);
  const auto idx = static_cast<long long>(k) % 3;
  return pol::kAllBases[static_cast<std::size_t>(idx < 0 ? idx + 3 : idx)];
}

bool BasisSchedule::in_guard(double t_s) const {
  if (guard_s <= 0) return false;
  const double phase = t_s - std::floor(t_s / switch_period_s) * switch_period_s;
  return phase < guard_s;
}

std::vector<BasisSchedule::Segment> BasisSchedule::segments(double horizon_s) const {
  std::vector<Segment> out;
  for (double t = 0; t < horizon_s; t += switch_period_s)
    out.push_back({t, std::min(t + switch_period_s, horizon_s), at(t)});
  return out;
}

void BasisSchedule::validate() const {
  if (!(switch_period_s > 0)) bad("detector.basis_switch_period_s");
  if (!(guard_s >= 0 && guard_s < switch_period_s)) bad("detector.guard_s");
}

// ---------------------------------------------------------------------------
// Explicit-pair detection

std::vector<DetectionEvent> detect(const std::vector<ArrivedPair>& pairs, const source::SourceParams& source,
                                   const DetectorParams& det, const BasisSchedule& schedule, Picoseconds t_start,
                                   Picoseconds t_end, Rng& rng) {
  det.validate();
  schedule.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jit(0.0, det.jitter_sigma_per_detector_ps());
  const double flip = flip_probability(det.extinction_ratio_db);
  auto maybe_flip = [&](int port) { return (flip > 0 && u01(rng) < flip) ? 1 - port : port; };

  std::vector<DetectionEvent> out;
  for (const auto& p : pairs) {
    const bool dx = p.x_arrived && u01(rng) < det.efficiency;
    const bool dxx = p.xx_arrived && u01(rng) < det.efficiency;
    if (!dx && !dxx) continue;
    const double tx_s = ps_to_seconds(p.x_arrival);
    const double txx_s = ps_to_seconds(p.xx_arrival);
    const Basis bx = schedule.at(tx_s);
    const Basis bxx = schedule.at(txx_s);
    int px = u01(rng) < 0.5 ? 0 : 1;
    int pxx = u01(rng) < 0.5 ? 0 : 1;
    // Single-photon marginals are uniform for every state the source emits;
    // pairs straddling a basis switch are sampled as independent.
    if (dx && dxx && bx == bxx) {
      const int k = sample_index(source::pair_joint_probabilities(source, p.tau_ps, bx, p.u_xx), u01(rng));
      px = k >> 1;
      pxx = k & 1;
    }
    if (dx && !schedule.in_guard(tx_s))
      out.push_back({to_timestamp(p.x_arrival, jit(rng)), detector_for(Arm::X, maybe_flip(px)),
                     bx});
    if (dxx && !schedule.in_guard(txx_s))
      out.push_back({to_timestamp(p.xx_arrival, jit(rng)),
                     detector_for(Arm::XX, maybe_flip(pxx)), bxx});
  }

  const double span_s = ps_to_seconds(t_end - t_start);
  if (det.dark_rate_hz > 0 && span_s > 0) {
    std::poisson_distribution<long long> count(det.dark_rate_hz * span_s);
    for (std::uint8_t id = 0; id < 4; ++id) {
      const long long n = count(rng);
      for (long long i = 0; i < n; ++i) {
        const double off = u01(rng) * static_cast<double>(t_end - t_start);
        const double ts = ps_to_seconds(t_start) + off * 1e-12;
        if (schedule.in_guard(ts)) continue;
        out.push_back({to_timestamp(t_start, off), id, schedule.at(ts)});
      }
    }
  }
  std::sort(out.begin(), out.end(), event_less);
  return out;
}

// ---------------------------------------------------------------------------
// Rate-level generator

ClickGenerator::ClickGenerator(source::SourceParams source, DetectorParams det, double gate_halfwidth_ps,
                               std::uint64_t seed)
    : source_(std::move(source)), det_(std::move(det)), gate_ps_(gate_halfwidth_ps), rng_(seed) {
  source_.validate();
  det_.validate();
  if (!(gate_ps_ > 0)) bad("detector.gate_halfwidth_ps");
  sigma_ = det_.jitter_sigma_per_detector_ps();
  flip_ = flip_probability(det_.extinction_ratio_db);
}

void ClickGenerator::generate(double t0_s, double t1_s, Basis basis, const LinkSnapshot& link,
                              std::vector<DetectionEvent>& out) {
  const double span_s = t1_s - t0_s;
  if (!(span_s > 0)) return;
  const double r = source_.pair_rate_hz;
  const double e = det_.efficiency;
  const double s = link.xx_survival;
  const double dark = det_.dark_rate_hz;
  const double rate_pair = r * s * e * e;
  const double rate_xx_photon = r * s * e * (1.0 - e);
  const double rate_xx = rate_xx_photon + 2.0 * dark;
  const double rate_x = r * e * (1.0 - s * e) + 2.0 * dark;
  const Picoseconds base = exact_ps(t0_s);
  const double span_ps = span_s * 1e12;
  const double d = det_.x_channel_delay_ps;

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jit(0.0, sigma_);
  std::exponential_distribution<double> cascade(1.0 / source_.x_lifetime_ps);
  auto port = [&](int p) { return (flip_ > 0 && u01(rng_) < flip_) ? 1 - p : p; };

  xx_times_.clear();
  x_times_.clear();
  xx_singles_.clear();

  if (rate_pair > 0) {
    const long long n = std::poisson_distribution<long long>(rate_pair * span_s)(rng_);
    counters_.coincident_pairs += static_cast<std::uint64_t>(n);
    for (long long i = 0; i < n; ++i) {
      const double te = u01(rng_) * span_ps;
      const double tau = cascade(rng_);
      const int k = sample_index(source::pair_joint_probabilities(source_, tau, basis, link.u_xx), u01(rng_));
      const auto txx = to_timestamp(base, te + link.tof_ps + jit(rng_));
      const auto tx = to_timestamp(base, te + tau + d + jit(rng_));
      out.push_back({tx, detector_for(Arm::X, port(k >> 1)), basis});
      out.push_back({txx, detector_for(Arm::XX, port(k & 1)), basis});
      xx_times_.push_back(static_cast<std::int64_t>(txx));
      x_times_.push_back(static_cast<std::int64_t>(tx));
    }
  }

  if (rate_xx > 0) {
    const long long n = std::poisson_distribution<long long>(rate_xx * span_s)(rng_);
    counters_.xx_singles_drawn += static_cast<std::uint64_t>(n);
    const double photon_frac = rate_xx_photon / rate_xx;
    for (long long i = 0; i < n; ++i) {
      const double te = u01(rng_) * span_ps;
      const bool photon = u01(rng_) < photon_frac;
      const auto t = to_timestamp(base, te + link.tof_ps + (photon ? jit(rng_) : 0.0));
      const int p = u01(rng_) < 0.5 ? 0 : 1;
      xx_singles_.push_back({t, detector_for(Arm::XX, photon ? port(p) : p), basis});
      xx_times_.push_back(static_cast<std::int64_t>(t));
    }
  }

  // X singles restricted to the union of gates, walking an exponential
  // clock through the concatenated gate length.
  std::sort(xx_times_.begin(), xx_times_.end());
  if (rate_x > 0) {
    std::exponential_distribution<double> gap(rate_x * 1e-12);
    double need = gap(rng_);
    for (const std::int64_t t : xx_times_) {
      // Offsets from base keep the clock exact far from t = 0.
      double lo = std::max(static_cast<double>(t - base) - gate_ps_, static_cast<double>(covered_until_ - base));
      const double hi = static_cast<double>(t - base) + gate_ps_;
      if (hi <= lo) continue;
      while (need < hi - lo) {
        lo += need;
        const auto ts = to_timestamp(base, lo);
        out.push_back({ts, detector_for(Arm::X, u01(rng_) < 0.5 ? 0 : 1), basis});
        x_times_.push_back(static_cast<std::int64_t>(ts));
        ++counters_.x_singles_in_gates;
        need = gap(rng_);
      }
      need -= hi - lo;
      covered_until_ = base + static_cast<std::int64_t>(std::ceil(hi));
    }
  }

  std::sort(x_times_.begin(), x_times_.end());
  const auto g = static_cast<std::int64_t>(gate_ps_);
  for (const auto& ev : xx_singles_) {
    const auto t = static_cast<std::int64_t>(ev.timestamp_ps);
    const auto it = std::lower_bound(x_times_.begin(), x_times_.end(), t - g);
    if (it != x_times_.end() && *it <= t + g) {
      out.push_back(ev);
      ++counters_.xx_singles_kept;
    }
  }
}

// ---------------------------------------------------------------------------
// Histogram

void AnalysisParams::validate() const {
  if (!(grid_ps > 0)) bad("analysis.grid_ps");
  if (!(histogram_halfwidth_ps > grid_ps)) bad("analysis.histogram_halfwidth_ps");
  if (!(window_ps > 0)) bad("analysis.window_ps");
  if (!(sideband_inner_ps > window_ps && sideband_outer_ps > sideband_inner_ps &&
        sideband_outer_ps <= histogram_halfwidth_ps))
    bad("analysis.sideband_outer_ps");
  if (!(fit_sigma_ps > 0)) bad("analysis.fit_sigma_ps");
  if (!(fit_tau_guess_ps >= fit_tau_min_ps && fit_tau_min_ps > 0)) bad("analysis.fit_tau_guess_ps");
  if (!(peak_to_median_min >= 1)) bad("analysis.peak_to_median_min");
  if (!(block_s > 0)) bad("analysis.block_s");
  if (delay_slices < 1) bad("analysis.delay_slices");
}

double CoincidenceHistogram::bin_lower_edge(std::size_t i) const {
  return offset_ps - halfwidth_ps + static_cast<double>(i) * grid_ps;
}

std::vector<std::uint64_t> CoincidenceHistogram::counts_co() const {
  std::vector<std::uint64_t> out(bins());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = counts[0][i] + counts[3][i];
  return out;
}

std::vector<std::uint64_t> CoincidenceHistogram::counts_cross() const {
  std::vector<std::uint64_t> out(bins());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = counts[1][i] + counts[2][i];
  return out;
}

std::vector<std::uint64_t> CoincidenceHistogram::counts_total() const {
  std::vector<std::uint64_t> out(bins());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = counts[0][i] + counts[1][i] + counts[2][i] + counts[3][i];
  return out;
}

CoincidenceHistogram& CoincidenceHistogram::operator+=(const CoincidenceHistogram& o) {
  if (o.bins() != bins() || o.grid_ps != grid_ps || o.offset_ps != offset_ps)
    throw std::invalid_argument("histogram binning mismatch");
  for (int c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < bins(); ++i) counts[c][i] += o.counts[c][i];
    delays[c].insert(delays[c].end(), o.delays[c].begin(), o.delays[c].end());
  }
  return *this;
}

CoincidenceHistogram make_histogram(Basis basis, const AnalysisParams& params) {
  CoincidenceHistogram h;
  h.basis = basis;
  h.grid_ps = params.grid_ps;
  h.offset_ps = params.histogram_offset_ps;
  h.halfwidth_ps = params.histogram_halfwidth_ps;
  const auto n = static_cast<std::size_t>(std::ceil(2.0 * params.histogram_halfwidth_ps / params.grid_ps - 1e-9));
  for (auto& c : h.counts) c.assign(n, 0);
  return h;
}

namespace {

struct Click {
  std::int64_t t;
  int port;
};

struct Split {
  std::vector<Click> x;
  std::vector<Click> xx;
};

Split split_arms(std::span<const DetectionEvent> events, Basis basis) {
  if (!std::is_sorted(events.begin(), events.end(), event_less))
    throw UnsortedInput("detection events are not sorted by time");
  Split s;
  for (const auto& e : events) {
    if (e.basis != basis) continue;
    const Click c{static_cast<std::int64_t>(e.timestamp_ps), port_of(e.detector_id)};
    (arm_of(e.detector_id) == Arm::X ? s.x : s.xx).push_back(c);
  }
  return s;
}

/// Pairs X clicks [begin, end) into h.
void pair_range(const Split& s, std::size_t begin, std::size_t end, CoincidenceHistogram& h) {
  const double lo_d = h.offset_ps - h.halfwidth_ps;
  const double hi_d = h.offset_ps + h.halfwidth_ps;
  const std::size_t nb = h.bins();
  for (std::size_t i = begin; i < end; ++i) {
    const auto& x = s.x[i];
    // d = t_x - t_xx in [lo_d, hi_d)  <=>  t_xx in (t_x - hi_d, t_x - lo_d]
    const double first = static_cast<double>(x.t) - hi_d;
    auto it = std::upper_bound(s.xx.begin(), s.xx.end(), first,
                               [](double v, const Click& c) { return v < static_cast<double>(c.t); });
    for (; it != s.xx.end(); ++it) {
      const std::int64_t d = x.t - it->t;
      if (static_cast<double>(d) < lo_d) break;
      const auto bin = static_cast<std::size_t>(std::floor((static_cast<double>(d) - lo_d) / h.grid_ps));
      if (bin >= nb) continue;
      const int combo = 2 * x.port + it->port;
      ++h.counts[combo][bin];
      h.delays[combo].push_back(d);
    }
  }
}

}  // namespace

CoincidenceHistogram histogram_serial(std::span<const DetectionEvent> events, Basis basis,
                                      const AnalysisParams& params) {
  params.validate();
  auto h = make_histogram(basis, params);
  const Split s = split_arms(events, basis);
  pair_range(s, 0, s.x.size(), h);
  return h;
}

CoincidenceHistogram histogram(std::span<const DetectionEvent> events, Basis basis, const AnalysisParams& params) {
  params.validate();
  const Split s = split_arms(events, basis);
  const std::size_t n = s.x.size();
  const int chunks = std::max(1, std::min<int>(static_cast<int>(n / 4096) + 1, 4 * omp_get_max_threads()));
  std::vector<CoincidenceHistogram> parts(static_cast<std::size_t>(chunks), make_histogram(basis, params));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    const std::size_t b = n * static_cast<std::size_t>(c) / static_cast<std::size_t>(chunks);
    const std::size_t e = n * static_cast<std::size_t>(c + 1) / static_cast<std::size_t>(chunks);
    pair_range(s, b, e, parts[static_cast<std::size_t>(c)]);
  }
  auto h = std::move(parts[0]);
  for (std::size_t c = 1; c < parts.size(); ++c) h += parts[c];
  return h;
}

namespace {

/// Sideband bin mask relative to t0.
bool in_sideband(double rel, const AnalysisParams& p) {
  const double a = std::abs(rel);
  return a >= p.sideband_inner_ps && a < p.sideband_outer_ps;
}

}  // namespace

std::vector<double> normalized_counts(const CoincidenceHistogram& h, const std::vector<std::uint64_t>& counts,
                                      double t0_ps, const AnalysisParams& params) {
  double acc = 0;
  int n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!in_sideband(h.bin_center(i) - t0_ps, params)) continue;
    acc += static_cast<double>(counts[i]);
    ++n;
  }
  const double level = n ? acc / n : 0.0;
  std::vector<double> out(counts.size(), 0.0);
  if (level <= 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<double>(counts[i]) / level;
  return out;
}

// ---------------------------------------------------------------------------
// Zero-delay fit

namespace {

template <typename T>
T emg(const T& t, const T& t0, double sigma, const T& tau) {
  using std::erfc;
  using std::exp;
  const T u = t - t0;
  const T z = (sigma / tau - u / sigma) / std::numbers::sqrt2;
  if (z < T(0.0)) return exp(sigma * sigma / (2.0 * tau * tau) - u / tau) * erfc(z) / (2.0 * tau);
  const T g = exp(-u * u / (2.0 * sigma * sigma));
  if (z < T(25.0)) return g * exp(z * z) * erfc(z) / (2.0 * tau);
  const T iz2 = 1.0 / (z * z);
  const T erfcx = (1.0 - 0.5 * iz2 + 0.75 * iz2 * iz2) / (z * std::sqrt(std::numbers::pi));
  return g * erfcx / (2.0 * tau);
}

template <typename T>
T bin_integral(double lo, double w, const T& t0, double sigma, const T& tau) {
  // Simpson over the bin.
  return (emg(T(lo), t0, sigma, tau) + 4.0 * emg(T(lo + 0.5 * w), t0, sigma, tau) + emg(T(lo + w), t0, sigma, tau)) *
         (w / 6.0);
}

struct BinResidual {
  double lo, w, y, inv_sd, sigma;

  template <typename T>
  bool operator()(const T* t0, const T* amp, const T* tau, const T* bg, T* r) const {
    const T model = amp[0] * bin_integral(lo, w, t0[0], sigma, tau[0]) + bg[0];
    r[0] = (T(y) - model) * inv_sd;
    return true;
  }
};

}  // namespace

double emg_density(double t, double t0, double sigma, double tau) { return emg(t, t0, sigma, tau); }

double ZeroDelayFit::bin_counts(double lo, double width) const {
  return amplitude * bin_integral(lo, width, t0_ps, sigma_ps, tau_ps) + background;
}

ZeroDelayFit fit_zero_delay(const CoincidenceHistogram& h, const std::vector<std::uint64_t>& counts,
                            const AnalysisParams& params) {
  if (counts.size() != h.bins()) throw std::invalid_argument("counts do not match histogram binning");
  if (counts.empty()) throw NoPeak("empty histogram");
  const auto peak_it = std::max_element(counts.begin(), counts.end());
  std::vector<std::uint64_t> sorted(counts);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  const double median = static_cast<double>(sorted[sorted.size() / 2]);
  const double peak = static_cast<double>(*peak_it);
  if (peak <= 0 || peak < params.peak_to_median_min * median)
    throw NoPeak("no cascade peak above background (peak " + std::to_string(peak) + ", median " +
                 std::to_string(median) + ")");

  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  const auto peak_bin = static_cast<std::size_t>(peak_it - counts.begin());
  double t0 = h.bin_lower_edge(peak_bin);
  double bg = median;
  double amp = std::max(total - bg * static_cast<double>(counts.size()), 1.0);
  double tau = params.fit_tau_guess_ps;

  ceres::Problem problem;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double y = static_cast<double>(counts[i]);
    auto* cost = new ceres::AutoDiffCostFunction<BinResidual, 1, 1, 1, 1, 1>(
        new BinResidual{h.bin_lower_edge(i), h.grid_ps, y, 1.0 / std::sqrt(std::max(y, 1.0)), params.fit_sigma_ps});
    problem.AddResidualBlock(cost, nullptr, &t0, &amp, &tau, &bg);
  }
  problem.SetParameterLowerBound(&amp, 0, 0.0);
  problem.SetParameterLowerBound(&bg, 0, 0.0);
  problem.SetParameterLowerBound(&tau, 0, params.fit_tau_min_ps);
  problem.SetParameterUpperBound(&tau, 0, 100.0 * params.fit_tau_guess_ps);
  problem.SetParameterLowerBound(&t0, 0, h.bin_lower_edge(0));
  problem.SetParameterUpperBound(&t0, 0, h.bin_lower_edge(counts.size()));

  ceres::Solver::Options opt;
  opt.linear_solver_type = ceres::DENSE_QR;
  opt.max_num_iterations = 200;
  opt.num_threads = 1;
  opt.logging_type = ceres::SILENT;
  ceres::Solver::Summary summary;
  ceres::Solve(opt, &problem, &summary);

  ZeroDelayFit f;
  f.t0_ps = t0;
  f.amplitude = amp;
  f.tau_ps = tau;
  f.background = bg;
  f.sigma_ps = params.fit_sigma_ps;
  f.converged = summary.IsSolutionUsable();
  if (!f.converged) throw NoPeak("zero-delay fit did not converge: " + summary.message);
  return f;
}

// ---------------------------------------------------------------------------
// Contrasts and fidelity

double contrast(double co, double cross) {
  const double s = co + cross;
  if (!(s > 0)) throw UndefinedContrast("contrast needs a positive total count");
  return (co - cross) / s;
}

BasisWindow window_counts(const CoincidenceHistogram& h, double t0_ps, double centre_offset_ps,
                          const AnalysisParams& params) {
  BasisWindow w;
  const double c = t0_ps + centre_offset_ps;
  const double half = 0.5 * params.window_ps;
  for (int k = 0; k < 4; ++k) {
    for (const std::int64_t d : h.delays[k]) {
      const double dd = static_cast<double>(d);
      if (dd >= c - half && dd < c + half) ++w.window[k];
      if (in_sideband(dd - t0_ps, params)) ++w.sideband[k];
    }
  }
  const double scale = params.window_ps / (2.0 * (params.sideband_outer_ps - params.sideband_inner_ps));
  for (int k = 0; k < 4; ++k) w.accidentals[k] = static_cast<double>(w.sideband[k]) * scale;
  const double raw_co = static_cast<double>(w.window[0] + w.window[3]);
  const double raw_cross = static_cast<double>(w.window[1] + w.window[2]);
  if (params.subtract_accidentals) {
    w.co = raw_co - w.accidentals[0] - w.accidentals[3];
    w.cross = raw_cross - w.accidentals[1] - w.accidentals[2];
    w.var_co = raw_co + static_cast<double>(w.sideband[0] + w.sideband[3]) * scale * scale;
    w.var_cross = raw_cross + static_cast<double>(w.sideband[1] + w.sideband[2]) * scale * scale;
  } else {
    w.co = raw_co;
    w.cross = raw_cross;
    w.var_co = raw_co;
    w.var_cross = raw_cross;
  }
  return w;
}

namespace {

std::pair<double, double> contrast_with_sigma(double co, double cross, double var_co, double var_cross,
                                              Basis b) {
  const double s = co + cross;
  if (!(s > 0))
    throw UndefinedFidelity(std::string("no coincidences in the window for basis ") + std::string(pol::to_string(b)));
  const double c = (co - cross) / s;
  const double dco = 2.0 * cross / (s * s);
  const double dcr = -2.0 * co / (s * s);
  return {c, std::sqrt(dco * dco * var_co + dcr * dcr * var_cross)};
}

}  // namespace

FidelityRecord fidelity_estimate(const std::array<CoincidenceHistogram, 3>& hists, double t0_ps,
                                 const AnalysisParams& params, double centre_offset_ps) {
  FidelityRecord r;
  r.t0_ps = t0_ps;
  double var = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const Basis b = pol::kAllBases[i];
    if (hists[i].basis != b) throw std::invalid_argument("histograms must be ordered HV, DA, RL");
    r.windows[i] = window_counts(hists[i], t0_ps, centre_offset_ps, params);
    const auto& w = r.windows[i];
    std::uint64_t raw = 0;
    for (auto c : w.window) raw += c;
    if (raw == 0)
      throw UndefinedFidelity(std::string("empty post-selection window in basis ") + std::string(pol::to_string(b)));
    const auto [c, sd] = contrast_with_sigma(w.co, w.cross, w.var_co, w.var_cross, b);
    r.contrasts[b] = c;
    r.contrast_sigma[b] = sd;
    var += sd * sd;
  }
  r.fidelity = r.contrasts.fidelity();
  r.sigma = std::sqrt(var) / 4.0;
  return r;
}

std::vector<double> track_time_of_flight(const std::vector<FidelityRecord>& records) {
  std::vector<double> out;
  if (records.empty()) return out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.t0_ps - records.front().t0_ps);
  return out;
}

const char* to_string(BlockStatus s) {
  switch (s) {
    case BlockStatus::Ok: return "ok";
    case BlockStatus::NoPeak: return "no_peak";
    case BlockStatus::UndefinedFidelity: return "undefined_fidelity";
    case BlockStatus::Empty: return "empty";
  }
  return "?";
}

std::pair<double, double> slice_fidelity(const DelaySlice& s) {
  double var = 0;
  pol::Contrasts c;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& w = s.window[i];
    const double co = static_cast<double>(w[0] + w[3]);
    const double cr = static_cast<double>(w[1] + w[2]);
    // Variances floored at one count so sparse slices keep a finite weight.
    const auto [v, sd] = contrast_with_sigma(co, cr, std::max(co, 1.0), std::max(cr, 1.0), pol::kAllBases[i]);
    c[pol::kAllBases[i]] = v;
    var += sd * sd;
  }
  return {c.fidelity(), std::sqrt(var) / 4.0};
}

BlockResult analyze_block(std::span<const DetectionEvent> events, double block_start_s,
                          const AnalysisParams& params, bool parallel) {
  BlockResult out;
  out.block_start_s = block_start_s;
  out.record.block_start_s = block_start_s;
  out.events = events.size();
  if (events.empty()) return out;

  std::array<CoincidenceHistogram, 3> hists;
  for (std::size_t i = 0; i < 3; ++i)
    hists[i] = parallel ? histogram(events, pol::kAllBases[i], params)
                        : histogram_serial(events, pol::kAllBases[i], params);
  std::vector<std::uint64_t> total(hists[0].bins(), 0);
  for (const auto& h : hists) {
    const auto t = h.counts_total();
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += t[i];
    for (const auto& d : h.delays) out.pairings += d.size();
  }
  out.hh_counts = hists[0].counts[0];
  try {
    out.hh_fit = fit_zero_delay(hists[0], out.hh_counts, params);
    out.hh_fit_ok = true;
  } catch (const NoPeak&) {
    out.hh_fit_ok = false;
  }

  double t0 = 0;
  try {
    t0 = fit_zero_delay(hists[0], total, params).t0_ps;
  } catch (const NoPeak&) {
    out.status = BlockStatus::NoPeak;
    return out;
  }
  out.record.t0_ps = t0;

  try {
    out.record = fidelity_estimate(hists, t0, params);
    out.record.block_start_s = block_start_s;
    out.status = BlockStatus::Ok;
  } catch (const UndefinedFidelity&) {
    out.status = BlockStatus::UndefinedFidelity;
  }

  // Fidelity-vs-delay slices on the exact delays.
  std::array<std::array<std::vector<std::int64_t>, 4>, 3> sorted;
  for (std::size_t i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      sorted[i][k] = hists[i].delays[k];
      std::sort(sorted[i][k].begin(), sorted[i][k].end());
    }
  const double half = 0.5 * params.window_ps;
  out.slices.resize(static_cast<std::size_t>(params.delay_slices));
  for (int j = 0; j < params.delay_slices; ++j) {
    auto& sl = out.slices[static_cast<std::size_t>(j)];
    sl.centre_ps = j * params.grid_ps;
    const double lo = t0 + sl.centre_ps - half;
    const double hi = t0 + sl.centre_ps + half;
    for (std::size_t i = 0; i < 3; ++i)
      for (int k = 0; k < 4; ++k) {
        const auto& v = sorted[i][k];
        const auto a = std::lower_bound(v.begin(), v.end(), lo,
                                        [](std::int64_t d, double x) { return static_cast<double>(d) < x; });
        const auto b = std::lower_bound(v.begin(), v.end(), hi,
                                        [](std::int64_t d, double x) { return static_cast<double>(d) < x; });
        sl.window[i][k] = static_cast<std::uint64_t>(b - a);
      }
  }
  return out;
}

double oscillation_period(const std::vector<double>& t, const std::vector<double>& f,
                          const std::vector<double>& sigma, double p_min, double p_max) {
  if (t.size() != f.size() || t.size() != sigma.size() || t.size() < 4)
    throw std::invalid_argument("oscillation fit needs at least four points");
  if (!(p_min > 0 && p_max > p_min)) throw std::invalid_argument("bad period range");
  auto chi2 = [&](double period) {
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    const double w0 = 2.0 * std::numbers::pi / period;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double w = 1.0 / (sigma[i] * sigma[i]);
      const Eigen::Vector3d x(1.0, std::cos(w0 * t[i]), std::sin(w0 * t[i]));
      a += w * x * x.transpose();
      b += w * f[i] * x;
    }
    const Eigen::Vector3d c = a.ldlt().solve(b);
    double s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double m = c(0) + c(1) * std::cos(w0 * t[i]) + c(2) * std::sin(w0 * t[i]);
      s += (f[i] - m) * (f[i] - m) / (sigma[i] * sigma[i]);
    }
    return s;
  };
  const int n = 400;
  int best = 0;
  double best_v = chi2(p_min);
  for (int i = 1; i <= n; ++i) {
    const double p = p_min + (p_max - p_min) * i / n;
    const double v = chi2(p);
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  const double step = (p_max - p_min) / n;
  const double lo = std::max(p_min, p_min + (best - 1) * step);
  const double hi = std::min(p_max, p_min + (best + 1) * step);
  return boost::math::tools::brent_find_minima(chi2, lo, hi, 40).first;
}

}  // namespace qdlink::coinc
