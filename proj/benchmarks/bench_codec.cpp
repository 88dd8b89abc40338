#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "circus/atom.hpp"

using namespace circus;

namespace {

DataAtom waveform_atom(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return {"mcp/waveform", make_timestamp(1634739438, 20212223, 7856432),
          make_cluster({{"t0", make_scalar(0.0)}, {"dt", make_scalar(1e-9)}, {"samples", make_array(v)}})};
}

void BM_Encode(benchmark::State& state) {
  const auto atom = waveform_atom(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode_atom(atom));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(16)->Arg(1024)->Arg(65536);

void BM_Decode(benchmark::State& state) {
  const auto text = encode_atom(waveform_atom(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(decode_atom(text));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_Decode)->Arg(16)->Arg(1024)->Arg(65536);

}  // namespace

BENCHMARK_MAIN();
