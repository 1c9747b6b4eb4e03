#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qdlink/event_log.hpp"
#include "qdlink/scenario.hpp"

using namespace qdlink;
using namespace qdlink::harness;
namespace fs = std::filesystem;

namespace {

ScenarioConfig short_run() {
  ScenarioConfig c;
  c.horizon_s = 3 * 3600;
  c.seed = 11;
  c.basis_schedule.switch_period_s = 300;
  c.analysis.block_s = 1800;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("qdlink_scenario_" + name);
  fs::remove_all(d);
  return d;
}

const char* kCompared[] = {files::kFidelity, files::kSlices, files::kHistogram};

}  // namespace

TEST_CASE("same seed gives identical artifacts") {
  const auto c = short_run();
  const auto a = dir("a"), b = dir("b");
  const auto ra = run_scenario(c, a);
  run_scenario(c, b);
  for (const char* f : {files::kEventsBin, files::kFidelity, files::kTof, files::kActuators, files::kDuty,
                        files::kHistogram, files::kSlices, files::kSummary, files::kConfig})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  CHECK(ra.stats.blocks == 6);
  CHECK(ra.stats.ok_blocks == 6);
  CHECK(ra.stats.mean > 0.9);
  REQUIRE(ra.duty);
  CHECK(ra.duty->overall_duty > 0.95);

  auto c2 = c;
  c2.seed = 12;
  const auto d = dir("c");
  run_scenario(c2, d);
  CHECK(slurp(a / files::kEventsBin) != slurp(d / files::kEventsBin));
}

TEST_CASE("offline analysis of either log format matches the inline series") {
  auto c = short_run();
  for (auto mode : {EventLogMode::Binary, EventLogMode::Csv}) {
    c.event_log = mode;
    const auto d = dir("inline");
    run_scenario(c, d);
    const auto log = d / (mode == EventLogMode::Csv ? files::kEventsCsv : files::kEventsBin);
    const auto o = dir("offline");
    analyze_log(log, c, o);
    for (const char* f : kCompared) CHECK_MESSAGE(slurp(d / f) == slurp(o / f), f);
  }
}

TEST_CASE("local route has no stabilizer outputs and high fidelity") {
  auto c = short_run();
  c.route = Route::Local;
  c.event_log = EventLogMode::None;
  const auto d = dir("local");
  const auto r = run_scenario(c, d);
  CHECK_FALSE(r.duty);
  CHECK(r.stats.mean == doctest::Approx(0.946).epsilon(0.02));
  CHECK(r.mean_lock_penalty == 0.0);
  CHECK_FALSE(fs::exists(d / files::kEventsBin));
}

TEST_CASE("empty log gives an empty series") {
  auto c = short_run();
  const auto d = dir("empty");
  fs::create_directories(d);
  {
    evlog::Writer w(d / "events.bin", evlog::Format::Binary, {});
    w.close();
  }
  const auto r = analyze_log(d / "events.bin", c, d / "out");
  CHECK(r.blocks.empty());
  CHECK(r.stats.ok_blocks == 0);
  CHECK(slurp(d / "out" / files::kFidelity).find('\n') == slurp(d / "out" / files::kFidelity).size() - 1);
}

TEST_CASE("truncated log leaves no output") {
  auto c = short_run();
  c.horizon_s = 1800;
  const auto d = dir("trunc");
  run_scenario(c, d);
  fs::resize_file(d / files::kEventsBin, fs::file_size(d / files::kEventsBin) - 3);
  CHECK_THROWS_AS(analyze_log(d / files::kEventsBin, c, d / "out"), evlog::SchemaError);
  CHECK_FALSE(fs::exists(d / "out"));
}

TEST_CASE("report writes figure data and names missing artifacts") {
  const auto d = dir("report");
  run_scenario(short_run(), d);
  std::ostringstream text;
  report(d, text);
  for (const char* f : {"fig2a.csv", "fig2b.csv", "fig3.csv", "fig4.csv"}) CHECK(fs::exists(d / f));
  CHECK(text.str().find("fidelity") != std::string::npos);
  fs::remove(d / files::kTof);
  try {
    report(d, text);
    FAIL("expected MissingArtifact");
  } catch (const MissingArtifact& e) {
    CHECK(std::string(e.what()).find(files::kTof) != std::string::npos);
  }
}
