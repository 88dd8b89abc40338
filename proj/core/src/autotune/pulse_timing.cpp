#include "circus/autotune/pulse_timing.hpp"

#include <algorithm>
#include <cmath>

#include "circus/error.hpp"

namespace circus::autotune {

PulseShape analyze_pulse(const Waveform& w) {
  const auto n = w.samples.size();
  if (n == 0) fail(Errc::invalid_argument, "empty waveform");
  const std::size_t lead = std::min(n, std::max<std::size_t>(8, n / 10));

  std::vector<double> head(w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(lead));
  std::sort(head.begin(), head.end());
  PulseShape shape;
  shape.baseline = lead % 2 ? head[lead / 2] : 0.5 * (head[lead / 2 - 1] + head[lead / 2]);

  double ss = 0.0;
  for (std::size_t i = 0; i < lead; ++i) {
    const double d = w.samples[i] - shape.baseline;
    ss += d * d;
  }
  shape.noise_rms = std::sqrt(ss / static_cast<double>(lead));

  const auto peak = std::max_element(w.samples.begin(), w.samples.end());
  shape.peak = *peak;
  shape.peak_index = static_cast<std::size_t>(peak - w.samples.begin());
  return shape;
}

double extract_pulse_time(const Waveform& w) {
  const auto shape = analyze_pulse(w);
  const double amplitude = shape.peak - shape.baseline;
  if (!(amplitude > 0.0) || amplitude < kNoPulseFactor * shape.noise_rms) {
    fail(Errc::no_pulse, "peak amplitude below the noise threshold");
  }
  const double level = shape.baseline + 0.5 * amplitude;

  // Walk back from the peak to the last sample under the half level.
  std::size_t i = shape.peak_index;
  while (i > 0 && w.samples[i] >= level) --i;
  if (w.samples[i] >= level) fail(Errc::no_pulse, "no rising edge before the peak");

  const double lo = w.samples[i];
  const double hi = w.samples[i + 1];
  const double frac = (level - lo) / (hi - lo);
  return (w.t0 + (static_cast<double>(i) + frac) * w.dt) * 1e9;
}

}  // namespace circus::autotune
