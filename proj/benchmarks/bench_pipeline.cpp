#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <benchmark/benchmark.h>

#include "circus/daq/daq_manager.hpp"
#include "circus/pipeline/pipeline.hpp"

using namespace circus;
namespace fs = std::filesystem;

namespace {

/// A run with `n` 64x48 camera frames written through the DAQ.
fs::path make_root(int n) {
  const auto root = fs::temp_directory_path() / ("circus-bench-" + std::to_string(::getpid()) + "-" + std::to_string(n));
  fs::remove_all(root);
  daq::DaqManager daq(root);
  const auto run = daq.run_start("1").run_id;
  daq.write_atom(run, {"cam.config", timestamp_now(), make_cluster({{"gain", make_scalar(2.0)}})});
  std::mt19937_64 rng(3);
  std::poisson_distribution<int> counts(100);
  for (int i = 0; i < n; ++i) {
    std::vector<double> px(64 * 48);
    for (auto& p : px) p = counts(rng);
    daq.write_atom(run, {"cam", timestamp_now(),
                         make_cluster({{"width", make_scalar(std::int32_t{64})},
                                       {"height", make_scalar(std::int32_t{48})},
                                       {"pixels", make_array(px)}})});
  }
  daq.run_stop(run);
  return root;
}

struct Corpus {
  fs::path root = make_root(16);
  ~Corpus() { fs::remove_all(root); }
};

void BM_GoldFrom(benchmark::State& state) {
  static const Corpus corpus;
  pipeline::Pipeline p(corpus.root);
  p.promote("1");
  const auto source = static_cast<pipeline::Source>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(p.gold_from("1", source));
}
BENCHMARK(BM_GoldFrom)
    ->Arg(static_cast<int>(pipeline::Source::raw))
    ->Arg(static_cast<int>(pipeline::Source::bronze))
    ->Arg(static_cast<int>(pipeline::Source::silver))
    ->Arg(static_cast<int>(pipeline::Source::gold));

}  // namespace

BENCHMARK_MAIN();
