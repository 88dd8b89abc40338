#pragma once

#include "circus/waveform.hpp"

namespace circus::autotune {

/// A pulse must rise at least this many baseline-noise RMS above baseline.
inline constexpr double kNoPulseFactor = 5.0;

struct PulseShape {
  double baseline = 0.0;
  double peak = 0.0;
  double noise_rms = 0.0;
  std::size_t peak_index = 0;
};

/// Baseline is the median of the leading max(8, n/10) samples; the noise
/// floor is their RMS spread around it.
PulseShape analyze_pulse(const Waveform& w);

/// Time (ns) of the 50%-of-peak crossing on the rising edge, linearly
/// interpolated between samples. Throws NoPulse for flat or sub-threshold
/// traces and InvalidArgument for empty ones.
double extract_pulse_time(const Waveform& w);

}  // namespace circus::autotune
