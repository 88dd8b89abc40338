#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "circus/rtio/crate.hpp"
#include "circus/waveform.hpp"

namespace circus::autotune {

/// Slow drift of the laser emission time relative to its Pockels trigger.
struct DriftModel {
  double walk_sigma_ns = 0.0;     // random-walk step per cycle
  double jump_probability = 0.0;  // per cycle
  double jump_ns = 0.0;           // magnitude, random sign
  std::uint64_t seed = 0;
  /// Share of one cycle's walk variance that accrues between the test and
  /// the desired pulse of the same cycle.
  double within_cycle_fraction = 0.04;

  void validate() const;
};

/// Stateful drift generator; the same model always yields the same sequence.
class DriftProcess {
 public:
  explicit DriftProcess(const DriftModel& model);

  /// Drift at the next test pulse (walk step plus a possible jump).
  double next_cycle();
  /// Drift at the desired pulse following the last test pulse.
  double within_cycle();
  double current() const { return drift_; }

 private:
  DriftModel model_;
  std::mt19937_64 rng_;
  double drift_ = 0.0;
};

/// Photodiode response: trapezoid whose rising edge is centred on the
/// emission time, sampled on a fixed grid.
struct PhotodiodeModel {
  double sample_dt_ns = 0.25;
  double rise_ns = 2.0;
  double plateau_ns = 5.0;
  double amplitude = 1.0;
  double noise_rms = 0.0;
  double window_before_ns = 60.0;
  double window_ns = 400.0;
};

Waveform photodiode_trace(const PhotodiodeModel& pd, double window_start_ns, double emission_ns,
                          std::mt19937_64* noise_rng);

struct StabilizerConfig {
  std::uint16_t pockels_ttl = 4;
  /// Trigger delay after each pulse slot opens, before correction.
  std::int64_t nominal_delay_ns = 1'000;
  /// Pockels trigger to light emission at zero drift.
  double laser_latency_ns = 150.0;
  /// Slot spacing between test and desired pulse and between cycles.
  rtio::MachineTime pulse_spacing = rtio::MachineTime::ms(1);
  rtio::MachineTime trigger_width = rtio::MachineTime::ns(100);
  PhotodiodeModel photodiode;
  std::uint64_t noise_seed = 0;

  /// Emission time within a slot when drift and correction are zero.
  double nominal_emission_ns() const { return static_cast<double>(nominal_delay_ns) + laser_latency_ns; }
};

enum class PulseKind { test, desired };

/// Times are relative to the start of the pulse's slot (ns).
struct PulseTiming {
  std::uint32_t cycle = 0;
  PulseKind kind = PulseKind::test;
  double measured = 0.0;
  double target = 0.0;
  /// target - last test measurement for desired pulses; 0 for test pulses.
  double correction = 0.0;
  /// Trigger delay actually scheduled on the timeline (whole ns).
  std::int64_t trigger_ns = 0;
  double drift = 0.0;
  double emitted = 0.0;
};

/// Runs `cycles` test/desired pairs on the crate. `target_at(cycle)` gives the
/// target emission time for that cycle. NoPulse propagates.
std::vector<PulseTiming> stabilize_cycle(rtio::Crate& crate, const StabilizerConfig& cfg,
                                         const DriftModel& drift, std::uint32_t cycles,
                                         const std::function<double(std::uint32_t)>& target_at);
std::vector<PulseTiming> stabilize_cycle(rtio::Crate& crate, const StabilizerConfig& cfg,
                                         const DriftModel& drift, std::uint32_t cycles, double target_ns);

struct StabilizerSummary {
  double desired_residual_rms = 0.0;  // desired: measured - target
  double test_deviation_rms = 0.0;    // test: measured - target
};

StabilizerSummary summarize(const std::vector<PulseTiming>& timings);

/// Crate layout used by the stabilizer: default batches plus a Pockels line.
rtio::CrateConfig stabilizer_crate_config(std::uint64_t seed);

}  // namespace circus::autotune
