#include <CLI11.hpp>

#include <iostream>

#include "qdlink/event_log.hpp"
#include "qdlink/scenario.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kAnalysis = 4 };

int guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const qdlink::harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const qdlink::evlog::SchemaError& e) {
    std::cerr << "event log error: " << e.what() << '\n';
    return kIo;
  } catch (const qdlink::evlog::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const qdlink::harness::MissingArtifact& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "analysis error: " << e.what() << '\n';
    return kAnalysis;
  }
}

void print_summary(const qdlink::harness::ScenarioResult& r) {
  std::cout << "blocks " << r.stats.blocks << ", ok " << r.stats.ok_blocks << ", mean F " << r.stats.mean
            << ", std " << r.stats.std << ", events " << r.events_logged << '\n';
  if (r.duty)
    std::cout << "overall duty " << r.duty->overall_duty << ", maintenance " << r.duty->maintenance_fraction
              << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace qdlink::harness;
  CLI::App app{"Entangled-pair fiber link simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, log_path, dir;
  std::uint64_t seed = 0;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write all artifacts");
  sim->add_option("--config", config_path, "Scenario INI file")->required();
  auto* seed_opt = sim->add_option("--seed", seed, "Overrides the config seed");
  sim->add_option("--out", out_dir, "Output directory")->required();

  auto* ana = app.add_subcommand("analyze", "Re-analyze a persisted event log");
  ana->add_option("--log", log_path, "events.csv or events.bin")->required();
  ana->add_option("--config", config_path, "Scenario INI file")->required();
  ana->add_option("--out", out_dir, "Output directory (default: next to the log)");

  auto* rep = app.add_subcommand("report", "Write figure data from an output directory");
  rep->add_option("--dir", dir, "Output directory of a simulate run")->required();

  CLI11_PARSE(app, argc, argv);

  if (*sim) {
    return guarded([&] {
      auto c = load_config(config_path);
      if (*seed_opt) c.seed = seed;
      print_summary(run_scenario(c, out_dir));
    });
  }
  if (*ana) {
    return guarded([&] {
      const auto c = load_config(config_path);
      const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(log_path).parent_path() / "reanalysis"
                                                        : std::filesystem::path(out_dir);
      print_summary(analyze_log(log_path, c, out));
    });
  }
  return guarded([&] { report(dir, std::cout); });
}
