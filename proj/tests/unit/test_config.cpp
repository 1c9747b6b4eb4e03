#include <doctest.h>

#include "qdlink/config.hpp"

using namespace qdlink::harness;

TEST_CASE("canonical text round-trips") {
  ScenarioConfig c;
  c.seed = 42;
  c.reference_offset_nm = 1.0;
  c.route = Route::Local;
  c.analysis.subtract_accidentals = false;
  c.source.fss_energy_uev = 5.0;
  const auto text = to_ini(c);
  const auto back = parse_config(text);
  CHECK(to_ini(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.route == Route::Local);
  CHECK(back.source.fss_energy_uev == 5.0);
}

TEST_CASE("missing keys keep defaults") {
  const auto c = parse_config("[scenario]\nseed = 7\n");
  CHECK(c.seed == 7);
  CHECK(c.horizon_s == ScenarioConfig{}.horizon_s);
  CHECK(c.channel.length_km == doctest::Approx(18.23));
}

TEST_CASE("errors name the key") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("[scenario]\nsed = 1\n").find("scenario.sed") != std::string::npos);
  CHECK(message("[source]\npair_rate_hz = fast\n").find("source.pair_rate_hz") != std::string::npos);
  CHECK(message("[scenario]\nroute = orbit\n").find("scenario.route") != std::string::npos);
  CHECK(message("[scenario]\nhorizon_s = 700000\n").find("horizon_s") != std::string::npos);
  CHECK(message("[scenario]\nacceleration = 0.5\n").find("acceleration") != std::string::npos);
  CHECK(message("[scenario]\nstep_s = 7\n").find("step_s") != std::string::npos);
  CHECK(message("[detector]\nefficiency = 1.5\n").find("efficiency") != std::string::npos);
  CHECK_FALSE(message("[scenario\nseed = 1\n").empty());
}

TEST_CASE("block count") {
  ScenarioConfig c;
  CHECK(c.block_count() == 336);
  c.horizon_s = 3600;
  CHECK(c.block_count() == 2);
}
