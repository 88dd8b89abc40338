#include <vector>

#include <benchmark/benchmark.h>

#include "circus/rtio/crate.hpp"

using namespace circus::rtio;

namespace {

// Scheduling and executing TTL toggles.
void BM_TtlTimeline(benchmark::State& state) {
  const auto n = state.range(0);
  for (auto _ : state) {
    CrateConfig cfg;
    Crate crate(cfg);
    auto t = crate.earliest();
    for (std::int64_t i = 0; i < n; ++i) {
      t += MachineTime::us(1);
      crate.schedule({t, Channel::ttl(8), TtlSet{(i & 1) == 0}});
    }
    crate.run_until(t + MachineTime::us(1));
    benchmark::DoNotOptimize(crate.trace().sample_count());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_TtlTimeline)->Arg(1000)->Arg(100000);

// Synchronous update of all eight amplifier channels.
void BM_DacBankUpdate(benchmark::State& state) {
  CrateConfig cfg;
  Crate crate(cfg);
  std::uint16_t code = 0;
  for (auto _ : state) {
    const auto t = crate.earliest();
    std::vector<TimelineEvent> evs;
    for (std::uint8_t ch = 0; ch < 8; ++ch) evs.push_back({t, Channel::fastino(0), DacWord{ch, code}});
    evs.push_back({t, Channel::fastino(0), DacUpdate{0xff}});
    crate.schedule_all(evs);
    crate.run_until(t + MachineTime::us(1));
    code = static_cast<std::uint16_t>(code + 97);
  }
}
BENCHMARK(BM_DacBankUpdate);

}  // namespace

BENCHMARK_MAIN();
