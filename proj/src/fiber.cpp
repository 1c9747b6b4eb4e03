#include "qdlink/fiber.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

namespace qdlink::fiber {

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

pol::PolRotation thermal_rotation(const ChannelState& s, const ChannelParams& p) {
  const double span = p.temperature.span();
  if (span <= 0.0 || p.diurnal_amplitude_rad == 0.0) return {};
  const double angle = p.diurnal_amplitude_rad * (p.temperature.at(s.sim_time_s) - p.temperature.first()) / span;
  return pol::PolRotation::from_rotation_vector(angle * s.thermal_axis);
}

void refresh_derived(ChannelState& s, const ChannelParams& p) {
  s.rotation_at_reference_wavelength = thermal_rotation(s, p) * s.random_walk;
  s.rotation_at_reference_wavelength.renormalize();
  s.current_tof_ps = p.tof_base_ps + p.tof_thermal_ps_per_c * p.temperature.at(s.sim_time_s);
  s.wavelength_cache.clear();
}

bool parse_double(std::string_view tok, double& out) {
  while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) tok.remove_suffix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// TemperatureProfile

TemperatureProfile TemperatureProfile::constant(double temp_c) { return from_samples({0.0}, {temp_c}); }

TemperatureProfile TemperatureProfile::from_samples(std::vector<double> time_s, std::vector<double> temp_c) {
  if (time_s.empty() || time_s.size() != temp_c.size())
    throw std::invalid_argument("temperature profile needs matching, non-empty columns");
  for (std::size_t i = 1; i < time_s.size(); ++i)
    if (!(time_s[i] > time_s[i - 1])) throw std::invalid_argument("temperature profile times must increase");
  TemperatureProfile p;
  p.time_s_ = std::move(time_s);
  p.temp_c_ = std::move(temp_c);
  const auto [lo, hi] = std::minmax_element(p.temp_c_.begin(), p.temp_c_.end());
  p.span_ = *hi - *lo;
  return p;
}

TemperatureProfile TemperatureProfile::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open temperature profile '" + path + "'");
  std::vector<double> t, c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    double a = 0, b = 0;
    const bool ok = comma != std::string::npos && parse_double(std::string_view(line).substr(0, comma), a) &&
                    parse_double(std::string_view(line).substr(comma + 1), b);
    if (!ok) {
      if (t.empty() && lineno == 1) continue;  // header
      throw std::runtime_error("bad temperature row " + std::to_string(lineno) + " in '" + path + "'");
    }
    t.push_back(a);
    c.push_back(b);
  }
  try {
    return from_samples(std::move(t), std::move(c));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string(e.what()) + " in '" + path + "'");
  }
}

TemperatureProfile TemperatureProfile::default_week(double diurnal_period_s) {
  // Daily trend knots (day, C) and a 1.5 C day-night swing peaking at 14:00.
  static constexpr double kKnotDay[] = {0.0, 3.1, 4.0, 5.0, 6.0, 7.0, 8.0};
  static constexpr double kKnotTemp[] = {7.05, -2.5, -2.3, -1.0, 0.5, 1.5, 1.5};
  constexpr double kSwing = 1.5;
  constexpr double kStep = 60.0;
  std::vector<double> t, c;
  for (double s = 0.0; s <= 8.0 * 86400.0; s += kStep) {
    const double day = s / 86400.0;
    std::size_t k = 0;
    while (k + 2 < std::size(kKnotDay) && day > kKnotDay[k + 1]) ++k;
    const double f = std::clamp((day - kKnotDay[k]) / (kKnotDay[k + 1] - kKnotDay[k]), 0.0, 1.0);
    const double trend = kKnotTemp[k] + f * (kKnotTemp[k + 1] - kKnotTemp[k]);
    t.push_back(s);
    c.push_back(trend + kSwing * std::sin(2.0 * std::numbers::pi * (s / diurnal_period_s - 8.0 / 24.0)));
  }
  return from_samples(std::move(t), std::move(c));
}

double TemperatureProfile::at(double t_s) const {
  if (t_s <= time_s_.front()) return temp_c_.front();
  if (t_s >= time_s_.back()) return temp_c_.back();
  const auto it = std::upper_bound(time_s_.begin(), time_s_.end(), t_s);
  const std::size_t i = static_cast<std::size_t>(it - time_s_.begin());
  const double f = (t_s - time_s_[i - 1]) / (time_s_[i] - time_s_[i - 1]);
  return temp_c_[i - 1] + f * (temp_c_[i] - temp_c_[i - 1]);
}

double TemperatureProfile::min_over(double t0_s, double t1_s) const {
  double m = std::min(at(t0_s), at(t1_s));
  for (std::size_t i = 0; i < time_s_.size(); ++i)
    if (time_s_[i] > t0_s && time_s_[i] < t1_s) m = std::min(m, temp_c_[i]);
  return m;
}

double TemperatureProfile::max_over(double t0_s, double t1_s) const {
  double m = std::max(at(t0_s), at(t1_s));
  for (std::size_t i = 0; i < time_s_.size(); ++i)
    if (time_s_[i] > t0_s && time_s_[i] < t1_s) m = std::max(m, temp_c_[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Parameters

void ChannelParams::validate() const {
  auto need = [](bool ok, const char* key) {
    if (!ok) throw std::domain_error(std::string("channel.") + key + " out of range");
  };
  need(length_km >= 0.0, "length_km");
  need(fiber_loss_db >= 0.0, "fiber_loss_db");
  need(component_loss_db >= 0.0, "component_loss_db");
  need(drift_angle_rate >= 0.0, "drift_angle_rate");
  need(std::isfinite(diurnal_amplitude_rad), "diurnal_amplitude_rad");
  need(diurnal_period_s > 0.0, "diurnal_period_s");
  need(wavelength_decorr_deg_per_nm >= 0.0 && wavelength_decorr_deg_per_nm < 120.0, "wavelength_decorr_deg_per_nm");
  need(wavelength_corr_length_nm > 0.0, "wavelength_corr_length_nm");
  need(wavelength_corr_time_s > 0.0, "wavelength_corr_time_s");
  need(reference_wavelength_nm > 0.0, "reference_wavelength_nm");
  need(tof_base_ps >= 0.0, "tof_base_ps");
  need(std::isfinite(tof_thermal_ps_per_c), "tof_thermal_ps_per_c");
  need(max_substep_s > 0.0, "max_substep_s");
}

double survival_probability(const ChannelParams& params, bool include_component_loss) {
  const double db = params.fiber_loss_db + (include_component_loss ? params.component_loss_db : 0.0);
  return std::pow(10.0, -db / 10.0);
}

// ---------------------------------------------------------------------------
// Wavelength field

Eigen::Vector3d WavelengthField::rotation_vector(double delta_nm) const {
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  for (int m = 0; m < kFeatures; ++m) {
    const double basis = std::cos(kappa[m] * delta_nm + beta[m]) - std::cos(beta[m]);
    for (int c = 0; c < 3; ++c) w(c) += amplitude[c * kFeatures + m] * basis;
  }
  return w;
}

double mean_displacement_deg(double sd_rad) {
  if (sd_rad <= 0.0) return 0.0;
  using boost::math::quadrature::gauss_kronrod;
  // theta ~ Maxwell(sd). A probe at angle a from the rotation axis moves by
  // 2 asin(sin a sin(theta/2)); cos a is uniform on [0, 1] by symmetry.
  auto inner = [](double theta) {
    const double s = std::sin(0.5 * theta);
    auto f = [s](double a) { return 2.0 * std::asin(std::min(1.0, std::sin(a) * s)) * std::sin(a); };
    return boost::math::quadrature::gauss<double, 40>::integrate(f, 0.0, 0.5 * std::numbers::pi);
  };
  auto outer = [&](double theta) {
    const double x = theta / sd_rad;
    const double pdf = std::sqrt(2.0 / std::numbers::pi) * x * x * std::exp(-0.5 * x * x) / sd_rad;
    return pdf * inner(theta);
  };
  const double mean = gauss_kronrod<double, 61>::integrate(outer, 0.0, 10.0 * sd_rad, 10, 1e-12);
  return mean * 180.0 / std::numbers::pi;
}

double field_sd_for_mean_displacement(double mean_deg) {
  if (mean_deg <= 0.0) return 0.0;
  static std::mutex mu;
  static std::map<double, double> cache;
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(mean_deg); it != cache.end()) return it->second;
  }
  auto f = [mean_deg](double sd) { return mean_displacement_deg(sd) - mean_deg; };
  boost::uintmax_t iters = 100;
  const auto r = boost::math::tools::toms748_solve(f, 1e-6, 3.0, boost::math::tools::eps_tolerance<double>(40), iters);
  const double sd = 0.5 * (r.first + r.second);
  std::lock_guard lock(mu);
  cache.emplace(mean_deg, sd);
  return sd;
}

// ---------------------------------------------------------------------------
// Channel evolution

ChannelState initial_state(const ChannelParams& params, Rng& rng) {
  params.validate();
  ChannelState s;
  // Arbitrary installed birefringence: Haar-random rotation.
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  s.random_walk = pol::PolRotation::from_rotation_vector(Eigen::AngleAxisd(q).angle() * Eigen::AngleAxisd(q).axis());
  s.thermal_axis = random_unit(rng);

  auto& f = s.field;
  const int m = WavelengthField::kFeatures;
  std::normal_distribution<double> kappa(0.0, 1.0 / params.wavelength_corr_length_nm);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  f.kappa.resize(m);
  f.beta.resize(m);
  double norm1 = 0.0;
  for (int i = 0; i < m; ++i) {
    f.kappa[i] = kappa(rng);
    f.beta[i] = phase(rng);
    const double b = std::cos(f.kappa[i] + f.beta[i]) - std::cos(f.beta[i]);
    norm1 += b * b;
  }
  const double sd1 = field_sd_for_mean_displacement(params.wavelength_decorr_deg_per_nm);
  f.stationary_sd = norm1 > 0.0 ? sd1 / std::sqrt(norm1) : 0.0;
  f.amplitude.resize(3 * m);
  for (double& a : f.amplitude) a = f.stationary_sd * n(rng);

  refresh_derived(s, params);
  return s;
}

ChannelState advance(const ChannelState& state, double dt_s, const ChannelParams& params, Rng& rng) {
  if (!(dt_s >= 0.0)) throw std::domain_error("advance requires dt >= 0");
  ChannelState s = state;
  if (dt_s == 0.0) return s;
  const int steps = std::max(1, static_cast<int>(std::ceil(dt_s / params.max_substep_s - 1e-9)));
  const double h = dt_s / steps;
  const double angle_sd = params.drift_angle_rate * std::sqrt(h / 3600.0);
  const double decay = std::exp(-h / params.wavelength_corr_time_s);
  const double kick = s.field.stationary_sd * std::sqrt(1.0 - decay * decay);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < steps; ++k) {
    if (angle_sd > 0.0) {
      const double angle = std::abs(angle_sd * n(rng));
      const Eigen::Vector3d axis = random_unit(rng);
      s.random_walk = pol::PolRotation::from_rotation_vector(angle * axis) * s.random_walk;
      s.random_walk.renormalize();
    }
    if (kick > 0.0)
      for (double& a : s.field.amplitude) a = decay * a + kick * n(rng);
  }
  s.sim_time_s += dt_s;
  refresh_derived(s, params);
  return s;
}

pol::PolRotation birefringence_at(const ChannelState& state, const ChannelParams& params, double wavelength_nm) {
  const double delta = wavelength_nm - params.reference_wavelength_nm;
  if (delta == 0.0) return state.rotation_at_reference_wavelength;
  for (const auto& [wl, r] : state.wavelength_cache)
    if (wl == wavelength_nm) return r;
  pol::PolRotation r = pol::PolRotation::from_rotation_vector(state.field.rotation_vector(delta)) *
                       state.rotation_at_reference_wavelength;
  r.renormalize();
  state.wavelength_cache.emplace_back(wavelength_nm, r);
  return r;
}

double time_of_flight(const ChannelState& state) { return state.current_tof_ps; }

std::optional<Transmitted> transit(const ChannelState& state, const ChannelParams& params, const OpticalItem& item,
                                   bool include_component_loss, Rng& rng) {
  std::bernoulli_distribution survive(survival_probability(params, include_component_loss));
  if (!survive(rng)) return std::nullopt;
  return Transmitted{item.emit_time + static_cast<Picoseconds>(std::llround(state.current_tof_ps)),
                     birefringence_at(state, params, item.wavelength_nm)};
}

// ---------------------------------------------------------------------------
// FiberChannel

FiberChannel::FiberChannel(ChannelParams params, std::uint64_t seed) : params_(std::move(params)), rng_(seed) {
  state_ = initial_state(params_, rng_);
}

void FiberChannel::advance(double dt_s) { state_ = fiber::advance(state_, dt_s, params_, rng_); }

pol::PolRotation FiberChannel::birefringence_at(double wavelength_nm) const {
  return fiber::birefringence_at(state_, params_, wavelength_nm);
}

std::optional<Transmitted> FiberChannel::transit(const OpticalItem& item, bool include_component_loss) {
  return fiber::transit(state_, params_, item, include_component_loss, rng_);
}

}  // namespace qdlink::fiber
