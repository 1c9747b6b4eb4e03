#include "qdlink/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace qdlink::harness {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("bad number for " + key + ": '" + s + "'");
  return v;
}

template <typename T>
T to_integer(const std::string& key, const std::string& s) {
  T v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError("bad integer for " + key + ": '" + s + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + s + "'");
}

struct Binding {
  std::string key;
  std::function<std::string(const ScenarioConfig&)> get;
  std::function<void(ScenarioConfig&, const std::string&)> set;
};

template <typename Ref>
Binding real(std::string key, Ref ref) {
  return {key, [ref](const ScenarioConfig& c) { return fmt(ref(const_cast<ScenarioConfig&>(c))); },
          [ref, key](ScenarioConfig& c, const std::string& s) { ref(c) = to_double(key, s); }};
}

template <typename T, typename Ref>
Binding integer(std::string key, Ref ref) {
  return {key, [ref](const ScenarioConfig& c) { return std::to_string(ref(const_cast<ScenarioConfig&>(c))); },
          [ref, key](ScenarioConfig& c, const std::string& s) { ref(c) = to_integer<T>(key, s); }};
}

template <typename Ref>
Binding boolean(std::string key, Ref ref) {
  return {key, [ref](const ScenarioConfig& c) { return std::string(ref(const_cast<ScenarioConfig&>(c)) ? "true" : "false"); },
          [ref, key](ScenarioConfig& c, const std::string& s) { ref(c) = to_bool(key, s); }};
}

#define QD_REF(expr) [](ScenarioConfig& c) -> auto& { return expr; }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = [] {
    std::vector<Binding> v;
    // scenario
    v.push_back(real("scenario.horizon_s", QD_REF(c.horizon_s)));
    v.push_back(integer<std::uint64_t>("scenario.seed", QD_REF(c.seed)));
    v.push_back(real("scenario.acceleration", QD_REF(c.acceleration)));
    v.push_back(real("scenario.step_s", QD_REF(c.step_s)));
    v.push_back({"scenario.route", [](const ScenarioConfig& c) { return std::string(to_string(c.route)); },
                 [](ScenarioConfig& c, const std::string& s) {
                   if (s == "field") c.route = Route::Field;
                   else if (s == "local") c.route = Route::Local;
                   else throw ConfigError("bad value for scenario.route: '" + s + "' (field|local)");
                 }});
    v.push_back(real("scenario.reference_offset_nm", QD_REF(c.reference_offset_nm)));
    v.push_back({"scenario.event_log", [](const ScenarioConfig& c) { return std::string(to_string(c.event_log)); },
                 [](ScenarioConfig& c, const std::string& s) {
                   if (s == "none") c.event_log = EventLogMode::None;
                   else if (s == "csv") c.event_log = EventLogMode::Csv;
                   else if (s == "binary") c.event_log = EventLogMode::Binary;
                   else throw ConfigError("bad value for scenario.event_log: '" + s + "' (none|csv|binary)");
                 }});
    v.push_back(real("scenario.gate_halfwidth_ps", QD_REF(c.gate_halfwidth_ps)));
    v.push_back({"scenario.temperature_csv", [](const ScenarioConfig& c) { return c.temperature_csv; },
                 [](ScenarioConfig& c, const std::string& s) { c.temperature_csv = s; }});
    // source
    v.push_back(real("source.pair_rate_hz", QD_REF(c.source.pair_rate_hz)));
    v.push_back(real("source.x_lifetime_ps", QD_REF(c.source.x_lifetime_ps)));
    v.push_back(real("source.fss_energy_uev", QD_REF(c.source.fss_energy_uev)));
    v.push_back(real("source.mixing_p", QD_REF(c.source.mixing_p)));
    v.push_back(real("source.x_wavelength_nm", QD_REF(c.source.x_wavelength_nm)));
    v.push_back(real("source.xx_wavelength_nm", QD_REF(c.source.xx_wavelength_nm)));
    // channel
    v.push_back(real("channel.length_km", QD_REF(c.channel.length_km)));
    v.push_back(real("channel.fiber_loss_db", QD_REF(c.channel.fiber_loss_db)));
    v.push_back(real("channel.component_loss_db", QD_REF(c.channel.component_loss_db)));
    v.push_back(real("channel.drift_angle_rate_rad_per_sqrt_h", QD_REF(c.channel.drift_angle_rate)));
    v.push_back(real("channel.diurnal_amplitude_rad", QD_REF(c.channel.diurnal_amplitude_rad)));
    v.push_back(real("channel.diurnal_period_s", QD_REF(c.channel.diurnal_period_s)));
    v.push_back(real("channel.wavelength_decorr_deg_per_nm", QD_REF(c.channel.wavelength_decorr_deg_per_nm)));
    v.push_back(real("channel.wavelength_corr_length_nm", QD_REF(c.channel.wavelength_corr_length_nm)));
    v.push_back(real("channel.wavelength_corr_time_s", QD_REF(c.channel.wavelength_corr_time_s)));
    v.push_back(real("channel.reference_wavelength_nm", QD_REF(c.channel.reference_wavelength_nm)));
    v.push_back(real("channel.tof_base_ps", QD_REF(c.channel.tof_base_ps)));
    v.push_back(real("channel.tof_thermal_ps_per_c", QD_REF(c.channel.tof_thermal_ps_per_c)));
    v.push_back(real("channel.max_substep_s", QD_REF(c.channel.max_substep_s)));
    // stabilizer
    v.push_back(boolean("stabilizer.enabled", QD_REF(c.stabilizer.enabled)));
    v.push_back(real("stabilizer.check_period_s", QD_REF(c.stabilizer.schedule.check_period_s)));
    v.push_back(real("stabilizer.check_duration_s", QD_REF(c.stabilizer.schedule.check_duration_s)));
    v.push_back(real("stabilizer.eta_threshold", QD_REF(c.stabilizer.schedule.eta_threshold)));
    v.push_back(real("stabilizer.realign_target_eta", QD_REF(c.stabilizer.schedule.realign_target_eta)));
    v.push_back(real("stabilizer.forced_realign_period_s", QD_REF(c.stabilizer.schedule.forced_realign_period_s)));
    v.push_back(real("stabilizer.actuation_step_latency_s", QD_REF(c.stabilizer.schedule.actuation_step_latency_s)));
    v.push_back(integer<int>("stabilizer.step_budget_steps", QD_REF(c.stabilizer.schedule.step_budget)));
    v.push_back(integer<int>("stabilizer.initial_step_budget_steps", QD_REF(c.stabilizer.schedule.initial_step_budget)));
    v.push_back(real("stabilizer.meter_noise_rel", QD_REF(c.stabilizer.schedule.meter_noise_rel)));
    v.push_back(real("stabilizer.step_coarse_rad", QD_REF(c.stabilizer.schedule.step_levels_rad[0])));
    v.push_back(real("stabilizer.step_medium_rad", QD_REF(c.stabilizer.schedule.step_levels_rad[1])));
    v.push_back(real("stabilizer.step_fine_rad", QD_REF(c.stabilizer.schedule.step_levels_rad[2])));
    v.push_back(real("stabilizer.epc_gain_rad_per_v", QD_REF(c.stabilizer.actuators.epc_gain_rad_per_v)));
    v.push_back(real("stabilizer.fwp_gain_rad_per_v", QD_REF(c.stabilizer.actuators.fwp_gain_rad_per_v)));
    v.push_back(real("stabilizer.epc_v_min_v", QD_REF(c.stabilizer.actuators.epc_v_min)));
    v.push_back(real("stabilizer.epc_v_max_v", QD_REF(c.stabilizer.actuators.epc_v_max)));
    v.push_back(real("stabilizer.fwp_v_min_v", QD_REF(c.stabilizer.actuators.fwp_v_min)));
    v.push_back(real("stabilizer.fwp_v_max_v", QD_REF(c.stabilizer.actuators.fwp_v_max)));
    // detector
    v.push_back(real("detector.efficiency", QD_REF(c.detector.efficiency)));
    v.push_back(real("detector.jitter_fwhm_ps", QD_REF(c.detector.jitter_fwhm_ps)));
    v.push_back(real("detector.dark_rate_hz", QD_REF(c.detector.dark_rate_hz)));
    v.push_back(real("detector.x_channel_delay_ps", QD_REF(c.detector.x_channel_delay_ps)));
    v.push_back(real("detector.extinction_ratio_db", QD_REF(c.detector.extinction_ratio_db)));
    v.push_back(real("detector.basis_switch_period_s", QD_REF(c.basis_schedule.switch_period_s)));
    v.push_back(real("detector.guard_s", QD_REF(c.basis_schedule.guard_s)));
    // analysis
    v.push_back(real("analysis.grid_ps", QD_REF(c.analysis.grid_ps)));
    v.push_back(real("analysis.histogram_offset_ps", QD_REF(c.analysis.histogram_offset_ps)));
    v.push_back(real("analysis.histogram_halfwidth_ps", QD_REF(c.analysis.histogram_halfwidth_ps)));
    v.push_back(real("analysis.window_ps", QD_REF(c.analysis.window_ps)));
    v.push_back(real("analysis.sideband_inner_ps", QD_REF(c.analysis.sideband_inner_ps)));
    v.push_back(real("analysis.sideband_outer_ps", QD_REF(c.analysis.sideband_outer_ps)));
    v.push_back(boolean("analysis.subtract_accidentals", QD_REF(c.analysis.subtract_accidentals)));
    v.push_back(real("analysis.fit_sigma_ps", QD_REF(c.analysis.fit_sigma_ps)));
    v.push_back(real("analysis.fit_tau_guess_ps", QD_REF(c.analysis.fit_tau_guess_ps)));
    v.push_back(real("analysis.fit_tau_min_ps", QD_REF(c.analysis.fit_tau_min_ps)));
    v.push_back(real("analysis.peak_to_median_min", QD_REF(c.analysis.peak_to_median_min)));
    v.push_back(real("analysis.block_s", QD_REF(c.analysis.block_s)));
    v.push_back(integer<int>("analysis.delay_slices", QD_REF(c.analysis.delay_slices)));
    return v;
  }();
  return b;
}

#undef QD_REF

bool is_multiple(double a, double b) {
  const double k = a / b;
  return std::abs(k - std::round(k)) < 1e-9 && k >= 1.0 - 1e-9;
}

}  // namespace

source::SourceParams ScenarioConfig::default_source() {
  source::SourceParams s;
  s.mixing_p = source::calibrate_mixing_for_local_fidelity(0.947);
  return s;
}

std::size_t ScenarioConfig::block_count() const {
  return static_cast<std::size_t>(std::ceil(horizon_s / analysis.block_s - 1e-9));
}

void ScenarioConfig::validate() const {
  auto need = [](bool ok, const std::string& key) {
    if (!ok) throw ConfigError(key + " out of range");
  };
  need(horizon_s > 0 && horizon_s <= 7.0 * 86400.0 + 1e-6, "scenario.horizon_s");
  need(acceleration >= 1.0, "scenario.acceleration");
  need(step_s > 0 && is_multiple(stabilizer.schedule.check_period_s, step_s), "scenario.step_s");
  need(is_multiple(horizon_s, stabilizer.schedule.check_period_s), "scenario.horizon_s");
  need(is_multiple(basis_schedule.switch_period_s, step_s), "detector.basis_switch_period_s");
  need(std::abs(reference_offset_nm) <= 50.0, "scenario.reference_offset_nm");
  need(gate_halfwidth_ps >= analysis.histogram_halfwidth_ps + std::abs(analysis.histogram_offset_ps),
       "scenario.gate_halfwidth_ps");
  try {
    source.validate();
    channel.validate();
    stabilizer.schedule.validate();
    detector.validate();
    basis_schedule.validate();
    analysis.validate();
  } catch (const std::domain_error& e) {
    throw ConfigError(e.what());
  }
}

ScenarioConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, const Binding*> by_key;
  for (const auto& b : bindings()) by_key[b.key] = &b;

  ScenarioConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = by_key.find(full);
      if (it == by_key.end()) throw ConfigError("unknown config key " + full);
      it->second->set(c, value.data());
    }
  }
  if (!c.temperature_csv.empty()) {
    std::filesystem::path p(c.temperature_csv);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    try {
      c.channel.temperature = fiber::TemperatureProfile::load_csv(p.string());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("scenario.temperature_csv: ") + e.what());
    }
  }
  c.validate();
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string to_ini(const ScenarioConfig& c) {
  std::string out;
  std::string section;
  for (const auto& b : bindings()) {
    const auto dot = b.key.find('.');
    const std::string s = b.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += b.key.substr(dot + 1) + " = " + b.get(c) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const ScenarioConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_ini(c)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

const char* to_string(Route r) { return r == Route::Field ? "field" : "local"; }

const char* to_string(EventLogMode m) {
  switch (m) {
    case EventLogMode::None: return "none";
    case EventLogMode::Csv: return "csv";
    case EventLogMode::Binary: return "binary";
  }
  return "?";
}

}  // namespace qdlink::harness
