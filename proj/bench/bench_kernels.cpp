#include <benchmark/benchmark.h>
#include <omp.h>

#include <algorithm>

#include "qdlink/coincidence.hpp"

using namespace qdlink;
using namespace qdlink::coinc;

namespace {

/// One analysis block of local clicks at default rates.
const std::vector<DetectionEvent>& block_events() {
  static const std::vector<DetectionEvent> ev = [] {
    source::SourceParams src;
    src.mixing_p = source::calibrate_mixing_for_local_fidelity(0.947);
    DetectorParams det;
    BasisSchedule sched;
    ClickGenerator gen(src, det, 40000.0, 7);
    LinkSnapshot link;
    link.tof_ps = det.x_channel_delay_ps;
    std::vector<DetectionEvent> out;
    for (double t = 0; t < 1800.0; t += 1.0) gen.generate(t, t + 1.0, sched.at(t), link, out);
    std::sort(out.begin(), out.end(), event_less);
    return out;
  }();
  return ev;
}

void BM_histogram_serial(benchmark::State& state) {
  const auto& ev = block_events();
  AnalysisParams a;
  for (auto _ : state) benchmark::DoNotOptimize(histogram_serial(ev, pol::Basis::HV, a));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ev.size()));
}

void BM_histogram_openmp(benchmark::State& state) {
  const auto& ev = block_events();
  AnalysisParams a;
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(histogram(ev, pol::Basis::HV, a));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ev.size()));
}

void BM_analyze_block(benchmark::State& state) {
  const auto& ev = block_events();
  AnalysisParams a;
  const bool parallel = state.range(0) > 0;
  if (parallel) omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(analyze_block(ev, 0.0, a, parallel));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ev.size()));
}

}  // namespace

BENCHMARK(BM_histogram_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_histogram_openmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
// Argument 0 selects the serial path, otherwise the OpenMP thread count.
BENCHMARK(BM_analyze_block)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
