#include "qdlink/stabilizer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace qdlink::stab {

using pol::PolRotation;
using pol::StokesVector;

GeometryTargets calibrate_geometry(const StokesVector& fwp_axis) {
  const Eigen::Vector3d a = fwp_axis.vec();
  // Prefer circular for basis b; fall back to s1 when the FWP axis is near s3.
  Eigen::Vector3d seed = std::abs(a.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
  const Eigen::Vector3d b = seed - seed.dot(a) * a;
  return {fwp_axis, StokesVector::normalized(b)};
}

ReferencePair generate_references(const StokesVector& fwp_axis, double wavelength_nm) {
  const auto g = calibrate_geometry(fwp_axis);
  return {g.target_basis_a, g.target_basis_b, g.target_basis_a, g.target_basis_b, wavelength_nm};
}

bool ActuatorState::within_range() const {
  for (double v : epc_voltages)
    if (v < model.epc_v_min || v > model.epc_v_max) return false;
  return fwp_voltage >= model.fwp_v_min && fwp_voltage <= model.fwp_v_max;
}

PolRotation ActuatorState::rotation() const {
  PolRotation r;
  for (std::size_t i = 0; i < 4; ++i)
    r = PolRotation::about_axis(model.epc_axes[i], model.epc_gain_rad_per_v * epc_voltages[i]) * r;
  r = PolRotation::about_axis(model.fwp_axis, model.fwp_gain_rad_per_v * fwp_voltage) * r;
  return r;
}

void StabilizerSchedule::validate() const {
  auto fail = [](const char* key) { throw std::domain_error(std::string("stabilizer.") + key + " out of range"); };
  if (!(check_period_s > 0)) fail("check_period_s");
  if (!(check_duration_s >= 0 && check_duration_s < check_period_s)) fail("check_duration_s");
  if (!(eta_threshold > 0 && eta_threshold <= 1)) fail("eta_threshold");
  if (!(realign_target_eta >= eta_threshold && realign_target_eta <= 1)) fail("realign_target_eta");
  if (!(forced_realign_period_s > 0)) fail("forced_realign_period_s");
  if (!(actuation_step_latency_s > 0)) fail("actuation_step_latency_s");
  if (step_budget <= 0 || step_budget * actuation_step_latency_s > check_period_s - check_duration_s)
    fail("step_budget");
  if (initial_step_budget < step_budget) fail("initial_step_budget");
  if (!(meter_noise_rel >= 0 && meter_noise_rel < 0.5)) fail("meter_noise_rel");
  for (double s : step_levels_rad)
    if (!(s > 0)) fail("step_levels_rad");
}

namespace {

double eta_from_projection(double proj, double noise, Rng& rng) {
  double p1 = 0.5 * (1.0 + proj);
  double p2 = 0.5 * (1.0 - proj);
  if (noise > 0) {
    std::normal_distribution<double> n(0.0, noise);
    p1 = std::max(0.0, p1 * (1.0 + n(rng)));
    p2 = std::max(0.0, p2 * (1.0 + n(rng)));
  }
  if (p1 + p2 <= 0) throw MeasurementError("both power meters read zero");
  return (p1 - p2) / (p1 + p2);
}

double true_projection(const StokesVector& ref, const StokesVector& target, const PolRotation& total) {
  return total.apply(ref.vec()).dot(target.vec());
}

}  // namespace

double measure_projection(const StokesVector& ref, const StokesVector& target_basis, const PolRotation& channel,
                          const ActuatorState& actuators, double meter_noise_rel, Rng& rng) {
  return eta_from_projection(true_projection(ref, target_basis, actuators.rotation() * channel), meter_noise_rel,
                             rng);
}

double measure_projection(const StokesVector& ref, const StokesVector& target_basis,
                          const fiber::ChannelState& channel, const fiber::ChannelParams& channel_params,
                          double wavelength_nm, const ActuatorState& actuators, double meter_noise_rel, Rng& rng) {
  return measure_projection(ref, target_basis, fiber::birefringence_at(channel, channel_params, wavelength_nm),
                            actuators, meter_noise_rel, rng);
}

Decision check_cycle(const StabilizerSchedule& schedule, double now_s, double last_realign_s, double eta_a,
                     double eta_b) {
  if (now_s - last_realign_s >= schedule.forced_realign_period_s) return Decision::ForcedRealign;
  if (eta_a < schedule.eta_threshold || eta_b < schedule.eta_threshold) return Decision::StartRecovery;
  return Decision::NoAction;
}

namespace {

struct BudgetExhausted {};

/// Searches starting this close to the optimum skip the coarse level.
constexpr double kMediumStartEta = 0.98;
/// Smallest objective gain that counts as an improvement.
constexpr double kMinGain = 1e-9;

class Search {
 public:
  Search(ActuatorState& act, const PolRotation& channel, const ReferencePair& refs, const StabilizerSchedule& s,
         Rng& rng, RecoveryResult& out)
      : act_(act), channel_(channel), refs_(refs), s_(s), rng_(rng), out_(out) {
    measure(act_, cur_a_, cur_b_);
  }

  double eta_a() const { return cur_a_; }
  double eta_b() const { return cur_b_; }
  bool locked() const { return cur_a_ >= target_ && cur_b_ >= target_; }
  bool above_threshold() const { return cur_a_ >= s_.eta_threshold && cur_b_ >= s_.eta_threshold; }
  void set_target(double t) { target_ = t; }

  /// Coordinate 0..3 are EPC channels, 4 is the FWP. Objective 0 is eta_b,
  /// 1 is eta_a. Returns true if any move was accepted.
  bool line_search(int coord, double step_rad, int objective) {
    const double gain = coord < 4 ? act_.model.epc_gain_rad_per_v : act_.model.fwp_gain_rad_per_v;
    const double dv = step_rad / gain;
    bool moved = false;
    const int first = last_dir_[static_cast<std::size_t>(coord)];
    for (int dir : {first, -first}) {
      bool accepted_here = false;
      while (true) {
        ActuatorState trial = act_;
        double& v = coord < 4 ? trial.epc_voltages[static_cast<std::size_t>(coord)] : trial.fwp_voltage;
        v += dir * dv;
        if (!trial.within_range()) {
          ++out_.saturation_hits;
          break;
        }
        if (out_.steps >= s_.step_budget) throw BudgetExhausted{};
        double a = 0, b = 0;
        measure(trial, a, b);
        ++out_.steps;
        if (score(a, b, objective) > score(cur_a_, cur_b_, objective) + kMinGain) {
          act_ = trial;
          cur_a_ = a;
          cur_b_ = b;
          out_.accepted.push_back({out_.steps, a, b, act_});
          accepted_here = moved = true;
          last_dir_[static_cast<std::size_t>(coord)] = dir;
          if (locked()) return true;
        } else {
          break;
        }
      }
      if (accepted_here) break;
    }
    return moved;
  }

  void kick(double step_rad) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double dv = step_rad / act_.model.epc_gain_rad_per_v;
    for (double& v : act_.epc_voltages) v = std::clamp(v + dv * u(rng_), act_.model.epc_v_min, act_.model.epc_v_max);
    if (out_.steps >= s_.step_budget) throw BudgetExhausted{};
    measure(act_, cur_a_, cur_b_);
    ++out_.steps;
  }

 private:
  static double score(double a, double b, int objective) { return objective == 0 ? b : a; }

  void measure(const ActuatorState& st, double& a, double& b) {
    const PolRotation total = st.rotation() * channel_;
    a = eta_from_projection(true_projection(refs_.ref_a, refs_.target_basis_a, total), s_.meter_noise_rel, rng_);
    b = eta_from_projection(true_projection(refs_.ref_b, refs_.target_basis_b, total), s_.meter_noise_rel, rng_);
  }

  ActuatorState& act_;
  const PolRotation& channel_;
  const ReferencePair& refs_;
  const StabilizerSchedule& s_;
  Rng& rng_;
  RecoveryResult& out_;
  double cur_a_ = 0;
  double cur_b_ = 0;
  std::array<int, 5> last_dir_{1, 1, 1, 1, 1};
  double target_ = 1.0;
};

}  // namespace

RecoveryResult recover(ActuatorState& actuators, const PolRotation& channel, const ReferencePair& refs,
                       const StabilizerSchedule& schedule, RecoveryMode mode, Rng& rng) {
  RecoveryResult out;
  Search search(actuators, channel, refs, schedule, rng, out);
  const bool threshold = mode == RecoveryMode::Threshold;
  search.set_target(threshold ? schedule.eta_threshold : schedule.realign_target_eta);
  const auto& levels = schedule.step_levels_rad;

  auto finish = [&](bool ok) {
    out.eta_a = search.eta_a();
    out.eta_b = search.eta_b();
    out.success = ok;
    out.duration_s = out.steps * schedule.actuation_step_latency_s;
    return out;
  };

  if (search.locked()) return finish(true);

  // Coarse to fine. At each level, alternate the FWP stage and an EPC sweep
  // until a full cycle makes no move. Returns true once the target is met.
  auto pass = [&](std::size_t first_level) {
    for (std::size_t l = first_level; l < levels.size(); ++l) {
      bool moved = true;
      while (moved) {
        moved = search.line_search(4, levels[l], 0);
        if (search.locked()) return true;
        for (int c = 0; c < 4; ++c) {
          moved |= search.line_search(c, levels[l], 1);
          if (search.locked()) return true;
        }
      }
    }
    return false;
  };

  try {
    const std::size_t start = std::min(search.eta_a(), search.eta_b()) >= kMediumStartEta ? 1 : 0;
    if (pass(start)) return finish(true);
    // A realign that converged short of its tighter target still counts.
    if (!threshold && search.above_threshold()) return finish(true);
    while (true) {
      search.kick(levels.front());
      if (pass(0)) return finish(true);
      if (!threshold && search.above_threshold()) return finish(true);
    }
  } catch (const BudgetExhausted&) {
    return finish(threshold ? false : search.above_threshold());
  }
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Check: return "check";
    case EventKind::Recovery: return "recovery";
    case EventKind::Realign: return "realign";
    case EventKind::Transmission: return "transmission";
  }
  return "?";
}

void StabilizerEventLog::append(const EventRecord& r) {
  if (r.duration_s < 0) throw std::logic_error("event with negative duration");
  if (!records_.empty()) {
    const auto& last = records_.back();
    if (r.time_s < last.time_s + last.duration_s - 1e-9) throw std::logic_error("event log time went backwards");
  }
  records_.push_back(r);
}

double StabilizerEventLog::total_duration() const {
  double s = 0;
  for (const auto& r : records_) s += r.duration_s;
  return s;
}

DutyStats duty_cycle_report(const StabilizerEventLog& log, double horizon_s, double check_period_s) {
  if (log.empty()) throw std::invalid_argument("duty report on an empty event log");
  if (!(horizon_s > 0) || !(check_period_s > 0)) throw std::invalid_argument("duty report needs a positive horizon");

  DutyStats d;
  double check_s = 0, recovery_s = 0, realign_s = 0, tx_s = 0, maintained_s = 0;
  std::vector<double> slot_blocked;
  std::vector<bool> slot_has_recovery;
  const auto n_slots = static_cast<std::size_t>(std::ceil(horizon_s / check_period_s));
  slot_blocked.assign(n_slots, 0.0);
  slot_has_recovery.assign(n_slots, false);

  for (const auto& r : log.records()) {
    const auto slot = std::min(n_slots - 1, static_cast<std::size_t>(std::max(0.0, r.time_s) / check_period_s));
    switch (r.kind) {
      case EventKind::Check:
        check_s += r.duration_s;
        ++d.checks;
        slot_blocked[slot] += r.duration_s;
        break;
      case EventKind::Recovery:
        recovery_s += r.duration_s;
        ++d.recoveries;
        if (!r.success) ++d.failed_recoveries;
        slot_blocked[slot] += r.duration_s;
        slot_has_recovery[slot] = true;
        break;
      case EventKind::Realign:
        realign_s += r.duration_s;
        ++d.realigns;
        slot_blocked[slot] += r.duration_s;
        break;
      case EventKind::Transmission:
        tx_s += r.duration_s;
        maintained_s += r.maintained_s;
        break;
    }
  }

  d.check_only_duty = 1.0 - check_s / horizon_s;
  d.overall_duty = 1.0 - (check_s + recovery_s + realign_s) / horizon_s;
  d.maintenance_fraction = tx_s > 0 ? maintained_s / tx_s : 0.0;
  d.mean_recovery_s = d.recoveries ? recovery_s / d.recoveries : 0.0;
  d.mean_realign_s = d.realigns ? realign_s / d.realigns : 0.0;

  double acc = 0;
  int n = 0;
  for (std::size_t i = 0; i < n_slots; ++i) {
    if (!slot_has_recovery[i]) continue;
    acc += 1.0 - slot_blocked[i] / check_period_s;
    ++n;
  }
  d.recovery_minute_duty = n ? acc / n : 1.0;
  return d;
}

void write_actuator_trace(std::ostream& out, const StabilizerEventLog& log) {
  out << "time_s,kind,epc_v1,epc_v2,epc_v3,epc_v4,fwp_v,eta_a,eta_b\n";
  for (const auto& r : log.records()) {
    if (r.kind == EventKind::Transmission) continue;
    const auto& a = r.actuators;
    out << r.time_s << ',' << to_string(r.kind) << ',' << a.epc_voltages[0] << ',' << a.epc_voltages[1] << ','
        << a.epc_voltages[2] << ',' << a.epc_voltages[3] << ',' << a.fwp_voltage << ',' << r.eta_a << ','
        << r.eta_b << '\n';
  }
}

void write_duty_log(std::ostream& out, const StabilizerEventLog& log, double check_period_s) {
  out << "slot_start_s,category,duration_s,maintained_s\n";
  for (const auto& r : log.records()) {
    const double slot = std::floor(r.time_s / check_period_s) * check_period_s;
    out << slot << ',' << to_string(r.kind) << ',' << r.duration_s << ',' << r.maintained_s << '\n';
  }
}

Stabilizer::Stabilizer(StabilizerConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed) {
  config_.schedule.validate();
  actuators_.model = config_.actuators;
  actuator_rotation_ = actuators_.rotation();
}

std::pair<double, double> Stabilizer::true_projections(const PolRotation& channel_at_ref) const {
  const PolRotation total = actuator_rotation_ * channel_at_ref;
  const auto& r = config_.references;
  return {true_projection(r.ref_a, r.target_basis_a, total), true_projection(r.ref_b, r.target_basis_b, total)};
}

double Stabilizer::run_recovery(double start_s, RecoveryMode mode, const PolRotation& channel_at_ref,
                                int step_budget) {
  StabilizerSchedule s = config_.schedule;
  s.step_budget = step_budget;
  const auto res = recover(actuators_, channel_at_ref, config_.references, s, mode, rng_);
  actuator_rotation_ = actuators_.rotation();
  EventRecord rec;
  rec.time_s = start_s;
  rec.kind = mode == RecoveryMode::Maximize ? EventKind::Realign : EventKind::Recovery;
  rec.duration_s = res.duration_s;
  rec.eta_a = res.eta_a;
  rec.eta_b = res.eta_b;
  rec.actuators = actuators_;
  rec.steps = res.steps;
  rec.success = res.success;
  log_.append(rec);
  return res.duration_s;
}

double Stabilizer::initial_alignment(double now_s, const PolRotation& channel_at_ref) {
  last_realign_s_ = now_s;
  return run_recovery(now_s, RecoveryMode::Maximize, channel_at_ref, config_.schedule.initial_step_budget);
}

double Stabilizer::on_slot(double now_s, const PolRotation& channel_at_ref) {
  if (!config_.enabled) return 0.0;
  const auto& s = config_.schedule;
  const auto& r = config_.references;
  const double eta_a = measure_projection(r.ref_a, r.target_basis_a, channel_at_ref, actuators_, s.meter_noise_rel, rng_);
  const double eta_b = measure_projection(r.ref_b, r.target_basis_b, channel_at_ref, actuators_, s.meter_noise_rel, rng_);
  EventRecord chk;
  chk.time_s = now_s;
  chk.kind = EventKind::Check;
  chk.duration_s = s.check_duration_s;
  chk.eta_a = eta_a;
  chk.eta_b = eta_b;
  chk.actuators = actuators_;
  log_.append(chk);

  double blocked = s.check_duration_s;
  switch (check_cycle(s, now_s, last_realign_s_, eta_a, eta_b)) {
    case Decision::NoAction: break;
    case Decision::StartRecovery:
      blocked += run_recovery(now_s + s.check_duration_s, RecoveryMode::Threshold, channel_at_ref, s.step_budget);
      break;
    case Decision::ForcedRealign:
      last_realign_s_ = now_s;
      blocked += run_recovery(now_s + s.check_duration_s, RecoveryMode::Maximize, channel_at_ref, s.step_budget);
      break;
  }
  return blocked;
}

void Stabilizer::transmit(double start_s, double duration_s, double maintained_s) {
  if (duration_s <= 0) return;
  EventRecord rec;
  rec.time_s = start_s;
  rec.kind = EventKind::Transmission;
  rec.duration_s = duration_s;
  rec.maintained_s = maintained_s;
  rec.actuators = actuators_;
  log_.append(rec);
}

}  // namespace qdlink::stab
