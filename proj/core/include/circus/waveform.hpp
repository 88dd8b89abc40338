#pragma once

#include <cstddef>
#include <vector>

namespace circus {

/// Uniformly sampled trace: sample i was taken at t0 + i * dt (seconds).
struct Waveform {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<double> samples;

  double time_at(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  bool operator==(const Waveform&) const = default;
};

}  // namespace circus
