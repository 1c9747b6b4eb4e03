#include "qdlink/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "qdlink/event_log.hpp"
#include "qdlink/fiber.hpp"

namespace qdlink::harness {

namespace fs = std::filesystem;
using coinc::BlockResult;
using coinc::BlockStatus;
using coinc::DetectionEvent;

namespace {

std::string num(double v) {
  if (v == 0.0) v = 0.0;
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t module_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix(splitmix(seed) ^ tag); }

std::ofstream open_out(const fs::path& p) {
  std::ofstream o(p, std::ios::trunc);
  if (!o) throw evlog::IoError("cannot write " + p.string());
  return o;
}

void check_written(std::ofstream& o, const fs::path& p) {
  o.flush();
  if (!o) throw evlog::IoError("write failed for " + p.string());
}

void write_fidelity_series(const fs::path& p, const std::vector<BlockResult>& blocks) {
  auto o = open_out(p);
  o << "block_start_s,status,F,sigma_F,t0_ps,C_HV,C_DA,C_RL,win_HV_co,win_HV_cross,win_DA_co,win_DA_cross,"
       "win_RL_co,win_RL_cross,acc_HV,acc_DA,acc_RL,events,pairings\n";
  for (const auto& b : blocks) {
    const auto& r = b.record;
    o << num(b.block_start_s) << ',' << coinc::to_string(b.status) << ',';
    if (b.status == BlockStatus::Ok) {
      o << num(r.fidelity) << ',' << num(r.sigma) << ',' << num(r.t0_ps) << ',' << num(r.contrasts.hv) << ','
        << num(r.contrasts.da) << ',' << num(r.contrasts.rl);
      for (const auto& w : r.windows) o << ',' << (w.window[0] + w.window[3]) << ',' << (w.window[1] + w.window[2]);
      for (const auto& w : r.windows)
        o << ',' << num(w.accidentals[0] + w.accidentals[1] + w.accidentals[2] + w.accidentals[3]);
    } else {
      o << ",," << (b.status == BlockStatus::UndefinedFidelity ? num(r.t0_ps) : "") << ",,,,,,,,,,,,";
    }
    o << ',' << b.events << ',' << b.pairings << '\n';
  }
  check_written(o, p);
}

std::vector<coinc::DelaySlice> aggregate_slices(const std::vector<BlockResult>& blocks) {
  std::vector<coinc::DelaySlice> acc;
  for (const auto& b : blocks) {
    if (b.status != BlockStatus::Ok) continue;
    if (acc.empty()) {
      acc = b.slices;
      continue;
    }
    for (std::size_t j = 0; j < acc.size() && j < b.slices.size(); ++j)
      for (std::size_t i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) acc[j].window[i][k] += b.slices[j].window[i][k];
  }
  return acc;
}

void write_slices(const fs::path& p, const std::vector<BlockResult>& blocks) {
  auto o = open_out(p);
  o << "delay_ps,HV_HH,HV_HV,HV_VH,HV_VV,DA_DD,DA_DA,DA_AD,DA_AA,RL_RR,RL_RL,RL_LR,RL_LL,F,sigma_F\n";
  for (const auto& s : aggregate_slices(blocks)) {
    o << num(s.centre_ps);
    for (const auto& b : s.window)
      for (auto c : b) o << ',' << c;
    try {
      const auto [f, sd] = coinc::slice_fidelity(s);
      o << ',' << num(f) << ',' << num(sd);
    } catch (const coinc::UndefinedFidelity&) {
      o << ",,";
    }
    o << '\n';
  }
  check_written(o, p);
}

void write_histogram(const fs::path& p, const std::vector<BlockResult>& blocks, const coinc::AnalysisParams& a) {
  auto o = open_out(p);
  o << "bin_lower_ps,delay_rel_ps,HH,HH_normalized,fit,fit_normalized\n";
  const auto it = std::find_if(blocks.begin(), blocks.end(),
                               [](const BlockResult& b) { return b.status == BlockStatus::Ok && b.hh_fit_ok; });
  if (it != blocks.end()) {
    const auto h = coinc::make_histogram(pol::Basis::HV, a);
    const double t0 = it->record.t0_ps;
    double level = 0;
    int n = 0;
    for (std::size_t i = 0; i < h.bins(); ++i) {
      const double rel = std::abs(h.bin_center(i) - t0);
      if (rel >= a.sideband_inner_ps && rel < a.sideband_outer_ps) {
        level += static_cast<double>(it->hh_counts[i]);
        ++n;
      }
    }
    level = n ? level / n : 0.0;
    if (level <= 0) level = static_cast<double>(*std::max_element(it->hh_counts.begin(), it->hh_counts.end()));
    for (std::size_t i = 0; i < h.bins(); ++i) {
      const double fit = it->hh_fit.bin_counts(h.bin_lower_edge(i), h.grid_ps);
      o << num(h.bin_lower_edge(i)) << ',' << num(h.bin_center(i) - t0) << ',' << it->hh_counts[i] << ','
        << num(static_cast<double>(it->hh_counts[i]) / level) << ',' << num(fit) << ',' << num(fit / level) << '\n';
    }
  }
  check_written(o, p);
}

/// Shared by inline and offline analysis, so both produce identical series.
class BlockSink {
 public:
  BlockSink(const ScenarioConfig& c) : cfg_(c), n_blocks_(c.block_count()) {}

  /// Events of block k, sorted.
  void close_block(std::size_t k, std::span<const DetectionEvent> events) {
    while (blocks_.size() < k) blocks_.push_back(empty(blocks_.size()));
    if (k >= n_blocks_) return;
    blocks_.push_back(coinc::analyze_block(events, start_of(k), cfg_.analysis, true));
  }
  void finish() {
    while (blocks_.size() < n_blocks_) blocks_.push_back(empty(blocks_.size()));
  }
  std::vector<BlockResult>& blocks() { return blocks_; }
  std::size_t n_blocks() const { return n_blocks_; }
  double start_of(std::size_t k) const { return static_cast<double>(k) * cfg_.analysis.block_s; }

 private:
  BlockResult empty(std::size_t k) const {
    BlockResult b;
    b.block_start_s = start_of(k);
    b.record.block_start_s = b.block_start_s;
    return b;
  }
  const ScenarioConfig& cfg_;
  std::size_t n_blocks_;
  std::vector<BlockResult> blocks_;
};

Picoseconds block_end_ps(const ScenarioConfig& c, std::size_t k) {
  return seconds_to_ps(static_cast<double>(k + 1) * c.analysis.block_s);
}

void write_series_artifacts(const fs::path& dir, std::vector<BlockResult>& blocks, bool any_events,
                            const ScenarioConfig& c) {
  std::vector<BlockResult> none;
  auto& rows = any_events ? blocks : none;
  write_fidelity_series(dir / files::kFidelity, rows);
  write_slices(dir / files::kSlices, rows);
  write_histogram(dir / files::kHistogram, rows, c.analysis);
}

nlohmann::ordered_json stats_json(const SeriesStats& s) {
  nlohmann::ordered_json j;
  j["blocks"] = s.blocks;
  j["ok_blocks"] = s.ok_blocks;
  j["mean_fidelity"] = s.mean;
  j["std_fidelity"] = s.std;
  j["min_fidelity"] = s.min;
  j["max_fidelity"] = s.max;
  j["mean_sigma"] = s.mean_sigma;
  return j;
}

}  // namespace

SeriesStats series_stats(const std::vector<BlockResult>& blocks) {
  SeriesStats s;
  s.blocks = blocks.size();
  std::vector<double> f;
  double sig = 0;
  for (const auto& b : blocks) {
    if (b.status != BlockStatus::Ok) continue;
    f.push_back(b.record.fidelity);
    sig += b.record.sigma;
  }
  s.ok_blocks = f.size();
  if (f.empty()) return s;
  double m = 0;
  for (double x : f) m += x;
  m /= static_cast<double>(f.size());
  double v = 0;
  for (double x : f) v += (x - m) * (x - m);
  s.mean = m;
  s.std = f.size() > 1 ? std::sqrt(v / static_cast<double>(f.size() - 1)) : 0.0;
  s.min = *std::min_element(f.begin(), f.end());
  s.max = *std::max_element(f.begin(), f.end());
  s.mean_sigma = sig / static_cast<double>(f.size());
  return s;
}

ScenarioResult run_scenario(const ScenarioConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw evlog::IoError("cannot create output directory " + out_dir.string());

  const auto& sch = config.stabilizer.schedule;
  const bool field = config.route == Route::Field;
  const double step = config.step_s;
  const double period = sch.check_period_s;
  const auto n_slots = static_cast<std::size_t>(std::llround(config.horizon_s / period));
  const auto steps_per_slot = static_cast<int>(std::llround(period / step));
  const double xx_wl = config.source.xx_wavelength_nm;
  const double ref_wl = xx_wl + config.reference_offset_nm;

  source::SourceParams src = config.source;
  src.pair_rate_hz /= config.acceleration;
  coinc::DetectorParams det = config.detector;
  det.dark_rate_hz /= config.acceleration;

  fiber::ChannelParams chp = config.channel;
  std::optional<fiber::FiberChannel> channel;
  std::optional<stab::Stabilizer> stabilizer;
  double survival = 1.0;
  if (field) {
    channel.emplace(chp, module_seed(config.seed, 1));
    stab::StabilizerConfig sc = config.stabilizer;
    sc.actuators = config.stabilizer.actuators;
    sc.references = stab::generate_references(sc.actuators.fwp_axis, ref_wl);
    stabilizer.emplace(sc, module_seed(config.seed, 2));
    survival = fiber::survival_probability(chp, true);
  }
  coinc::ClickGenerator gen(src, det, config.gate_halfwidth_ps, module_seed(config.seed, 3));

  std::optional<evlog::Writer> log;
  const evlog::Header header{evlog::kSchemaVersion, config.seed, config_hash(config)};
  if (config.event_log == EventLogMode::Csv)
    log.emplace(out_dir / files::kEventsCsv, evlog::Format::Csv, header);
  else if (config.event_log == EventLogMode::Binary)
    log.emplace(out_dir / files::kEventsBin, evlog::Format::Binary, header);

  BlockSink sink(config);
  ScenarioResult res;
  std::vector<double> tof_w(sink.n_blocks(), 0.0), tof_acc(sink.n_blocks(), 0.0);
  std::vector<DetectionEvent> pending;
  std::size_t next_block = 0;
  double tx_total = 0, pen_acc = 0, ftrue_acc = 0;
  const double p = config.source.mixing_p;

  auto close_blocks_until = [&](double t_s) {
    // Every click from emission times before t_s has been generated.
    while (next_block < sink.n_blocks() && sink.start_of(next_block) + config.analysis.block_s <= t_s + 1e-9) {
      std::sort(pending.begin(), pending.end(), coinc::event_less);
      const auto end_ps = static_cast<std::uint64_t>(block_end_ps(config, next_block));
      const auto cut = std::lower_bound(pending.begin(), pending.end(), end_ps,
                                        [](const DetectionEvent& e, std::uint64_t t) { return e.timestamp_ps < t; });
      const std::span<const DetectionEvent> done(pending.data(), static_cast<std::size_t>(cut - pending.begin()));
      if (log) log->write(done);
      res.events_logged += done.size();
      sink.close_block(next_block, done);
      pending.erase(pending.begin(), cut);
      ++next_block;
    }
  };

  double busy_until = 0.0;
  if (field) busy_until = stabilizer->initial_alignment(0.0, channel->birefringence_at(ref_wl));

  for (std::size_t slot = 0; slot < n_slots; ++slot) {
    const double t = static_cast<double>(slot) * period;
    double blocked = 0.0;
    if (field) {
      if (t < busy_until) blocked = std::min(period, busy_until - t);
      else blocked = stabilizer->on_slot(t, channel->birefringence_at(ref_wl));
      busy_until = std::max(busy_until, t + blocked);
    }
    double maintained = 0.0;
    for (int j = 0; j < steps_per_slot; ++j) {
      const double s = t + j * step;
      const double seg = std::floor(s / config.basis_schedule.switch_period_s) * config.basis_schedule.switch_period_s;
      const double a = std::max({s, t + blocked, seg + config.basis_schedule.guard_s});
      const double b = s + step;
      const double tx_from = std::max(s, t + blocked);
      coinc::LinkSnapshot link;
      link.xx_survival = survival;
      double tof = det.x_channel_delay_ps;
      if (field) {
        const pol::PolRotation u = stabilizer->actuator_rotation() * channel->birefringence_at(xx_wl);
        link.u_xx = u.jones();
        tof = channel->time_of_flight();
        if (b > tx_from) {
          const double w = b - tx_from;
          const auto [ea, eb] = stabilizer->true_projections(channel->birefringence_at(ref_wl));
          if (ea >= sch.eta_threshold && eb >= sch.eta_threshold) maintained += w;
          const double half = 0.5 * u.angle();
          const double pen = std::sin(half) * std::sin(half);
          pen_acc += w * pen;
          ftrue_acc += w * (p * (1.0 - pen) + (1.0 - p) / 4.0);
        }
      } else {
        ftrue_acc += (b - tx_from) * (p + (1.0 - p) / 4.0);
      }
      link.tof_ps = tof;
      if (b > tx_from) {
        tx_total += b - tx_from;
        const auto k = static_cast<std::size_t>(s / config.analysis.block_s);
        if (k < tof_w.size()) {
          tof_w[k] += b - tx_from;
          tof_acc[k] += (b - tx_from) * tof;
        }
      }
      if (b > a) gen.generate(a, b, config.basis_schedule.at(s), link, pending);
      if (field) channel->advance(step);
      close_blocks_until(b);
    }
    if (field) stabilizer->transmit(t + blocked, period - blocked, maintained);
  }
  close_blocks_until(config.horizon_s + config.analysis.block_s);
  std::sort(pending.begin(), pending.end(), coinc::event_less);
  if (log) {
    log->write(pending);
    log->close();
  }
  res.events_logged += pending.size();
  sink.finish();

  res.blocks = std::move(sink.blocks());
  res.stats = series_stats(res.blocks);
  res.counters = gen.counters();
  res.mean_lock_penalty = tx_total > 0 ? pen_acc / tx_total : 0.0;
  res.mean_true_fidelity = tx_total > 0 ? ftrue_acc / tx_total : 0.0;
  res.programmed_tof_ps.resize(tof_w.size());
  for (std::size_t k = 0; k < tof_w.size(); ++k) res.programmed_tof_ps[k] = tof_w[k] > 0 ? tof_acc[k] / tof_w[k] : 0.0;

  // Artifacts.
  {
    auto o = open_out(out_dir / files::kConfig);
    o << to_ini(config);
    check_written(o, out_dir / files::kConfig);
  }
  write_series_artifacts(out_dir, res.blocks, res.events_logged > 0, config);

  double tof_ref = 0, t0_ref = 0;
  bool have_ref = false;
  double max_resid = 0;
  {
    const fs::path pth = out_dir / files::kTof;
    auto o = open_out(pth);
    o << "block_start_s,status,t0_ps,tof_fit_rel_ps,tof_programmed_ps,tof_programmed_rel_ps,residual_ps\n";
    for (std::size_t k = 0; k < res.blocks.size(); ++k) {
      const auto& b = res.blocks[k];
      const bool has_t0 = b.status == BlockStatus::Ok || b.status == BlockStatus::UndefinedFidelity;
      o << num(b.block_start_s) << ',' << coinc::to_string(b.status) << ',';
      if (has_t0 && !have_ref) {
        have_ref = true;
        tof_ref = res.programmed_tof_ps[k];
        t0_ref = b.record.t0_ps;
      }
      if (has_t0) {
        // The X arm is fixed, so a longer fiber transit shortens X - XX.
        const double fit_rel = -(b.record.t0_ps - t0_ref);
        const double prog_rel = res.programmed_tof_ps[k] - tof_ref;
        max_resid = std::max(max_resid, std::abs(fit_rel - prog_rel));
        o << num(b.record.t0_ps) << ',' << num(fit_rel) << ',' << num(res.programmed_tof_ps[k]) << ','
          << num(prog_rel) << ',' << num(fit_rel - prog_rel);
      } else {
        o << ",," << num(res.programmed_tof_ps[k]) << ",,";
      }
      o << '\n';
    }
    check_written(o, pth);
  }

  {
    const fs::path pa = out_dir / files::kActuators, pd = out_dir / files::kDuty;
    auto oa = open_out(pa);
    auto od = open_out(pd);
    if (field) {
      stab::write_actuator_trace(oa, stabilizer->log());
      stab::write_duty_log(od, stabilizer->log(), period);
      res.duty = stab::duty_cycle_report(stabilizer->log(), config.horizon_s, period);
    } else {
      oa << "time_s,kind,epc_v1,epc_v2,epc_v3,epc_v4,fwp_v,eta_a,eta_b\n";
      od << "slot_start_s,category,duration_s,maintained_s\n";
    }
    check_written(oa, pa);
    check_written(od, pd);
  }

  nlohmann::ordered_json j;
  j["seed"] = config.seed;
  std::ostringstream h;
  h << std::hex << config_hash(config);
  j["config_hash"] = h.str();
  j["route"] = to_string(config.route);
  j["stabilizer_enabled"] = field && config.stabilizer.enabled;
  j["horizon_s"] = config.horizon_s;
  j["acceleration"] = config.acceleration;
  j["reference_offset_nm"] = config.reference_offset_nm;
  j["series"] = stats_json(res.stats);
  j["mean_lock_penalty"] = res.mean_lock_penalty;
  j["mean_true_fidelity"] = res.mean_true_fidelity;
  j["tof_tracking_max_abs_residual_ps"] = max_resid;
  j["events_logged"] = res.events_logged;
  j["coincident_pairs"] = res.counters.coincident_pairs;
  j["xx_singles_drawn"] = res.counters.xx_singles_drawn;
  j["xx_singles_kept"] = res.counters.xx_singles_kept;
  j["x_singles_in_gates"] = res.counters.x_singles_in_gates;
  if (res.duty) {
    const auto& d = *res.duty;
    nlohmann::ordered_json dj;
    dj["check_only_duty"] = d.check_only_duty;
    dj["recovery_minute_duty"] = d.recovery_minute_duty;
    dj["overall_duty"] = d.overall_duty;
    dj["maintenance_fraction"] = d.maintenance_fraction;
    dj["checks"] = d.checks;
    dj["recoveries"] = d.recoveries;
    dj["failed_recoveries"] = d.failed_recoveries;
    dj["realigns"] = d.realigns;
    dj["mean_recovery_s"] = d.mean_recovery_s;
    dj["mean_realign_s"] = d.mean_realign_s;
    j["duty"] = dj;
  }
  {
    const fs::path ps = out_dir / files::kSummary;
    auto o = open_out(ps);
    o << j.dump(2) << '\n';
    check_written(o, ps);
  }
  return res;
}

ScenarioResult analyze_log(const fs::path& log_path, const ScenarioConfig& config, const fs::path& out_dir) {
  config.validate();
  evlog::Reader reader(log_path);
  BlockSink sink(config);
  std::vector<DetectionEvent> cur;
  std::size_t k = 0;
  std::uint64_t total = 0;
  DetectionEvent e;
  while (reader.next(e)) {
    ++total;
    while (k < sink.n_blocks() && e.timestamp_ps >= static_cast<std::uint64_t>(block_end_ps(config, k))) {
      sink.close_block(k, cur);
      cur.clear();
      ++k;
    }
    if (k < sink.n_blocks()) cur.push_back(e);
  }
  if (k < sink.n_blocks()) sink.close_block(k, cur);
  sink.finish();

  ScenarioResult res;
  res.blocks = std::move(sink.blocks());
  res.events_logged = total;
  res.stats = series_stats(total > 0 ? res.blocks : std::vector<BlockResult>{});
  if (total == 0) res.blocks.clear();

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw evlog::IoError("cannot create output directory " + out_dir.string());
  write_series_artifacts(out_dir, res.blocks, total > 0, config);
  return res;
}

// ---------------------------------------------------------------------------
// Report

namespace {

using Table = std::vector<std::vector<std::string>>;

struct Csv {
  std::vector<std::string> head;
  Table rows;

  int col(const std::string& name, const fs::path& p) const {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw MissingArtifact("column " + name + " missing in " + p.string());
    return static_cast<int>(it - head.begin());
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream s(line);
  while (std::getline(s, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Csv read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact("missing artifact " + p.string());
  Csv c;
  std::string line;
  if (!std::getline(in, line)) throw MissingArtifact("empty artifact " + p.string());
  c.head = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto r = split(line);
    r.resize(c.head.size());
    c.rows.push_back(std::move(r));
  }
  return c;
}

double to_num(const std::string& s) {
  double v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

}  // namespace

double fig2b_period_ps(const fs::path& fig2b_csv) {
  const Csv c = read_csv(fig2b_csv);
  const int id = c.col("delay_ps", fig2b_csv), iF = c.col("F", fig2b_csv), iS = c.col("sigma_F", fig2b_csv);
  std::vector<double> t, f, s;
  for (const auto& r : c.rows) {
    if (r[iF].empty() || r[iS].empty()) continue;
    t.push_back(to_num(r[id]));
    f.push_back(to_num(r[iF]));
    s.push_back(to_num(r[iS]));
  }
  if (t.size() < 4) throw std::runtime_error("not enough fidelity-vs-delay points in " + fig2b_csv.string());
  const double span = t.back() - t.front();
  return coinc::oscillation_period(t, f, s, 150.0, std::max(span, 300.0));
}

void report(const fs::path& dir, std::ostream& text) {
  for (const char* name : {files::kFidelity, files::kTof, files::kActuators, files::kHistogram, files::kSlices,
                           files::kSummary})
    if (!fs::exists(dir / name)) throw MissingArtifact("missing artifact " + (dir / name).string());

  // fig2a: normalized HH coincidences and fit.
  {
    const auto p = dir / files::kHistogram;
    const Csv c = read_csv(p);
    const int d = c.col("delay_rel_ps", p), n = c.col("HH_normalized", p), f = c.col("fit_normalized", p);
    std::ofstream o(dir / "fig2a.csv");
    o << "delay_ps,HH_normalized,fit_normalized\n";
    for (const auto& r : c.rows) o << r[d] << ',' << r[n] << ',' << r[f] << '\n';
    if (!o) throw evlog::IoError("cannot write " + (dir / "fig2a.csv").string());
  }
  // fig2b: F versus delay.
  {
    const auto p = dir / files::kSlices;
    const Csv c = read_csv(p);
    const int d = c.col("delay_ps", p), f = c.col("F", p), s = c.col("sigma_F", p);
    std::ofstream o(dir / "fig2b.csv");
    o << "delay_ps,F,sigma_F\n";
    for (const auto& r : c.rows)
      if (!r[f].empty()) o << r[d] << ',' << r[f] << ',' << r[s] << '\n';
    if (!o) throw evlog::IoError("cannot write " + (dir / "fig2b.csv").string());
  }
  // fig3: F and time of flight versus day.
  std::size_t blocks = 0;
  {
    const auto pf = dir / files::kFidelity, pt = dir / files::kTof;
    const Csv f = read_csv(pf), t = read_csv(pt);
    const int b = f.col("block_start_s", pf), F = f.col("F", pf), S = f.col("sigma_F", pf);
    const int tf = t.col("tof_fit_rel_ps", pt), tp = t.col("tof_programmed_rel_ps", pt);
    std::map<std::string, const std::vector<std::string>*> tof;
    const int tb = t.col("block_start_s", pt);
    for (const auto& r : t.rows) tof[r[tb]] = &r;
    std::ofstream o(dir / "fig3.csv");
    o << "day,F,sigma_F,tof_fit_rel_ps,tof_programmed_rel_ps\n";
    for (const auto& r : f.rows) {
      const auto it = tof.find(r[b]);
      o << num(to_num(r[b]) / 86400.0) << ',' << r[F] << ',' << r[S] << ','
        << (it != tof.end() ? (*it->second)[tf] : "") << ',' << (it != tof.end() ? (*it->second)[tp] : "") << '\n';
      ++blocks;
    }
    if (!o) throw evlog::IoError("cannot write " + (dir / "fig3.csv").string());
  }
  // fig4: actuator voltages versus day.
  {
    const auto p = dir / files::kActuators;
    const Csv c = read_csv(p);
    const int t = c.col("time_s", p);
    std::ofstream o(dir / "fig4.csv");
    o << "day,epc_v1,epc_v2,epc_v3,epc_v4,fwp_v\n";
    for (const auto& r : c.rows) {
      o << num(to_num(r[t]) / 86400.0);
      for (const char* k : {"epc_v1", "epc_v2", "epc_v3", "epc_v4", "fwp_v"}) o << ',' << r[c.col(k, p)];
      o << '\n';
    }
    if (!o) throw evlog::IoError("cannot write " + (dir / "fig4.csv").string());
  }

  std::ifstream js(dir / files::kSummary);
  const auto j = nlohmann::json::parse(js, nullptr, false);
  if (j.is_discarded()) throw MissingArtifact("unreadable artifact " + (dir / files::kSummary).string());
  const auto& s = j.at("series");
  text << "blocks: " << blocks << " (" << s.at("ok_blocks").get<std::size_t>() << " with a fidelity estimate)\n";
  text << "fidelity: mean " << s.at("mean_fidelity").get<double>() << ", std " << s.at("std_fidelity").get<double>()
       << ", min " << s.at("min_fidelity").get<double>() << "\n";
  if (j.contains("duty")) {
    const auto& d = j.at("duty");
    text << "duty: check-only " << d.at("check_only_duty").get<double>() << ", recovery minutes "
         << d.at("recovery_minute_duty").get<double>() << ", overall " << d.at("overall_duty").get<double>()
         << ", maintenance " << d.at("maintenance_fraction").get<double>() << "\n";
  }
  try {
    text << "fidelity oscillation period: " << fig2b_period_ps(dir / "fig2b.csv") << " ps\n";
  } catch (const std::exception& e) {
    text << "fidelity oscillation period: n/a (" << e.what() << ")\n";
  }
}

}  // namespace qdlink::harness
